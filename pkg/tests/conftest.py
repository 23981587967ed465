import numpy as np
import pytest

from harlstm.data import UCI_WINDOW, write_uci_layout
from harlstm.network import NetworkArchitecture


def small_arch(**kw):
    base = dict(residual_blocks=1, bidir_layers_per_block=1, hidden_width=3, input_channels=2,
                num_classes=2, window_length=4, dropout_keep_prob=1.0)
    base.update(kw)
    return NetworkArchitecture(**base)


def synthetic_uci(root, n_train=36, n_test=18, seed=0):
    """Six-class windows in the UCI layout; each class has its own offset pattern."""
    rng = np.random.default_rng(seed)
    out = {}
    for split, n in (("train", n_train), ("test", n_test)):
        labels = np.arange(n) % 6
        rng.shuffle(labels)
        t = np.linspace(0, 2 * np.pi, UCI_WINDOW)
        samples = rng.normal(0, 0.1, size=(n, UCI_WINDOW, 9))
        for i, c in enumerate(labels):
            samples[i, :, c] += np.sin((c + 1) * t)
        write_uci_layout(root, split, samples, labels)
        out[split] = (samples, labels)
    return out


@pytest.fixture
def uci_root(tmp_path):
    root = tmp_path / "uci"
    synthetic_uci(root)
    return root


def write_config(path, **kw):
    lines = [f"{k} = {v}" for k, v in kw.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def assert_grads_close(loss_fn, store, eps=1e-5, rtol=1e-4, atol=1e-9):
    """Analytic vs central-difference gradients with a mixed tolerance.

    The absolute part covers gradients that are structurally zero (a bias
    whose shift batch norm cancels), where the finite difference only sees
    loss round-off.
    """
    from harlstm.params import backward_into

    leaves = store.as_tensors(requires_grad=True)
    analytic = backward_into(loss_fn(leaves), leaves, store)
    for path in store.paths():
        base = store.values[path]
        num = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            vals = []
            for sign in (1, -1):
                bumped = base.copy()
                bumped[idx] += sign * eps
                trial = store.as_tensors()
                trial[path] = type(trial[path])(bumped)
                vals.append(float(loss_fn(trial).data))
            num[idx] = (vals[0] - vals[1]) / (2 * eps)
        np.testing.assert_allclose(analytic[path], num, rtol=rtol, atol=atol, err_msg=path)


# one line per acceptance criterion, printed after the run whatever the capture mode
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
