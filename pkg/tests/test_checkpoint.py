import struct

import numpy as np
import pytest

from harlstm import checkpoint as ck
from harlstm.network import init_params
from harlstm.params import ParamStore
from harlstm.training import AdamState, EpochReport, TrainState

from conftest import small_arch


def sample_checkpoint():
    store = init_params(small_arch(), 3)
    adam = AdamState.like(store)
    adam.t = 7
    adam.m = {k: v + 1 for k, v in adam.m.items()}
    rng = np.random.default_rng([3, 1])
    rng.random(5)
    state = TrainState(2, adam, rng.bit_generator.state, store.copy(),
                       EpochReport(2, 0.5, 0.9, 0.8, 0.88, 0.79, wall_time=12.5))
    return ck.Checkpoint(store, adam, ck.train_state_payload(state), {"note": "x"},
                         {"best.params": store.values, "best.buffers": store.buffers})


def test_round_trip_exact():
    c = sample_checkpoint()
    back = ck.decode(ck.encode(c))
    assert back.params.equals(c.params)
    assert back.adam.t == 7 and all(np.array_equal(back.adam.m[k], c.adam.m[k]) for k in c.adam.m)
    assert back.meta == {"note": "x"}
    state = ck.resume_state(back)
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng_state
    ref = np.random.default_rng([3, 1])
    ref.random(5)
    assert rng.random() == ref.random()
    assert state.best_report.test_f1 == 0.79 and state.best_params.equals(c.params)


def test_encoding_is_deterministic_and_ignores_wall_time():
    a = ck.encode(sample_checkpoint())
    assert a == ck.encode(sample_checkpoint())
    assert b"12.5" not in a


def test_header_layout():
    raw = ck.encode(sample_checkpoint())
    assert raw[:8] == ck.MAGIC
    assert struct.unpack("<I", raw[8:12])[0] == ck.FORMAT_VERSION
    (hlen,) = struct.unpack("<Q", raw[12:20])
    assert (len(raw) - 20 - hlen) % 8 == 0


def test_bad_magic_and_version():
    raw = ck.encode(ck.Checkpoint(ParamStore({"w": [1.0]})))
    with pytest.raises(ck.CheckpointError, match="magic"):
        ck.decode(b"NOTACKPT" + raw[8:])
    with pytest.raises(ck.CheckpointError, match="version"):
        ck.decode(raw[:8] + struct.pack("<I", 99) + raw[12:])


def test_resume_requires_state():
    with pytest.raises(ck.CheckpointError):
        ck.resume_state(ck.Checkpoint(ParamStore({"w": [1.0]})))


def test_atomic_save_leaves_no_temp(tmp_path):
    path = tmp_path / "sub" / "c.bin"
    ck.save(path, sample_checkpoint())
    assert [p.name for p in path.parent.iterdir()] == ["c.bin"]
    assert ck.load(path).params.equals(sample_checkpoint().params)
    with pytest.raises(ck.CheckpointError, match="not found"):
        ck.load(tmp_path / "missing.bin")
