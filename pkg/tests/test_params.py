import numpy as np
import pytest

from harlstm import tensor as tn
from harlstm.params import GradCheckError, ParamStore, grad_check
from harlstm.tensor import Tensor


def test_linear_loss_exact():
    store = ParamStore({"a": [1.0, -2.0, 3.0], "b": [[0.5]]})
    rep = grad_check(lambda p: tn.add(tn.sum_(p["a"]), tn.sum_(p["b"])), store)
    assert rep.max_relative_error < 1e-9
    assert rep.epsilon == 1e-5 and rep.checked == 4


def test_half_squared_norm():
    store = ParamStore({"theta": [3.0, -4.0]})
    leaves = store.as_tensors(requires_grad=True)
    loss = tn.mul(tn.sum_(tn.mul(leaves["theta"], leaves["theta"])), 0.5)
    loss.backward()
    assert np.array_equal(leaves["theta"].grad, [3.0, -4.0])
    rep = grad_check(lambda p: tn.mul(tn.sum_(tn.mul(p["theta"], p["theta"])), 0.5), store)
    assert rep.max_relative_error < 1e-8


def test_wrong_gradient_is_caught():
    def broken(p):
        x = p["x"]
        # value is x**2 but the backward rule claims 3x
        return tn.sum_(tn.make_node(x.data ** 2, (x,), lambda g: (3 * x.data * g,)))

    rep = grad_check(broken, ParamStore({"x": [1.0, 2.0]}))
    assert rep.max_relative_error > 0.1
    assert rep.worst_parameter_path.startswith("x[")


def test_non_finite_loss_names_parameter():
    store = ParamStore({"ok": [1.0], "bad": [0.0]})

    def loss(p):
        with np.errstate(invalid="ignore"):
            val = np.sqrt(p["bad"].data[0])
        return tn.add(tn.sum_(p["ok"]), Tensor(val))

    with pytest.raises(GradCheckError, match="bad"):
        grad_check(loss, store)


def test_grad_check_leaves_params_untouched():
    store = ParamStore({"w": np.arange(4.0)})
    before = store.copy()
    grad_check(lambda p: tn.sum_(tn.tanh_act(p["w"])), store)
    assert store.equals(before)


def test_epsilon_must_be_positive():
    with pytest.raises(ValueError):
        grad_check(lambda p: tn.sum_(p["w"]), ParamStore({"w": [1.0]}), epsilon=0)


def test_paths_sorted_and_grads_match_shapes():
    store = ParamStore({"z.W": np.ones((2, 3)), "a.b": np.ones(2)})
    assert store.paths() == ["a.b", "z.W"]
    leaves = store.as_tensors(requires_grad=True)
    tn.sum_(leaves["z.W"]).backward()
    grads = store.collect_grads(leaves)
    assert {k: v.shape for k, v in grads.items()} == {"a.b": (2,), "z.W": (2, 3)}
    assert not grads["a.b"].any()


def test_buffers_never_require_grad():
    store = ParamStore({"w": [1.0]}, {"running": [2.0]})
    leaves = store.as_tensors(requires_grad=True)
    assert leaves["w"].requires_grad and not leaves["running"].requires_grad


def test_copy_is_deep():
    store = ParamStore({"w": [1.0]})
    dup = store.copy()
    dup.values["w"][0] = 5.0
    assert store.values["w"][0] == 1.0
