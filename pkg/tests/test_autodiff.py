import numpy as np
import pytest

from hvpl import autodiff as ad
from hvpl.errors import UsageError


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        hi, lo = x.copy(), x.copy()
        hi[idx] += h
        lo[idx] -= h
        g[idx] = (f(hi) - f(lo)) / (2 * h)
    return g


def check(build, *shapes, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    values = [rng.normal(size=s) for s in shapes]

    def scalar(vals):
        tape = ad.GradTape()
        nodes = [tape.param(v, f"x{i}") for i, v in enumerate(vals)]
        return tape, build(*nodes)

    tape, out = scalar(values)
    grads = tape.backward(out)
    for i, v in enumerate(values):
        def f(xi, i=i):
            vals = list(values)
            vals[i] = xi
            return float(scalar(vals)[1].value)
        num = numeric_grad(f, v)
        assert np.allclose(grads[f"x{i}"], num, atol=tol, rtol=tol), (i, grads[f"x{i}"], num)


OPS = {
    "add_broadcast": (lambda a, b: ad.sum_all(ad.mul(ad.add(a, b), ad.add(a, b))), (3, 4), (4,)),
    "matmul": (lambda a, b: ad.sum_all(ad.sigmoid(ad.matmul(a, b))), (3, 4), (4, 2)),
    "batched_matmul": (lambda a, b: ad.sum_all(ad.silu(ad.matmul(a, b))), (2, 3, 4), (4, 5)),
    "div": (lambda a, b: ad.sum_all(ad.div(a, ad.add(ad.exp(b), 1.0))), (3,), (3,)),
    "softmax": (lambda a, b: ad.sum_all(ad.mul(ad.softmax_rows(a), b)), (3, 5), (3, 5)),
    "log_softmax": (lambda a, b: ad.sum_all(ad.mul(ad.log_softmax_rows(a), b)), (3, 5), (3, 5)),
    "softplus_log": (lambda a: ad.sum_all(ad.log(ad.softplus(a))), (4, 3)),
    "layer_norm": (lambda a, g, b: ad.sum_all(ad.mul(ad.layer_norm(a, g, b), ad.layer_norm(a, g, b))),
                   (3, 6), (6,), (6,)),
    "dwconv": (lambda x, k, b: ad.sum_all(ad.silu(ad.dwconv1d(x, k, b))), (7, 3), (4, 3), (3,)),
    "concat_take": (lambda a, b: ad.sum_all(ad.exp(ad.take(ad.concat([a, b], axis=1), slice(1, 4), axis=1))),
                    (2, 3), (2, 2)),
    "take_rows": (lambda a: ad.sum_all(ad.mul(ad.take(a, np.array([2, 0, 2]), axis=0), 3.0)), (4, 2)),
    "reshape_mean": (lambda a: ad.sum_all(ad.exp(ad.mean_axis(ad.reshape(a, (2, 3, 2)), axis=0))), (6, 2)),
    "transpose": (lambda a, b: ad.sum_all(ad.sigmoid(ad.matmul(a, ad.transpose(b)))), (3, 4), (2, 4)),
    "sum_axis": (lambda a: ad.sum_all(ad.exp(ad.sum_axis(a, axis=1))), (3, 4)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_gradients_match_central_differences(name):
    build, *shapes = OPS[name]
    check(build, *shapes)


def test_bce_with_logits_gradient():
    target = (np.arange(6).reshape(2, 3) % 2).astype(float)
    check(lambda a: ad.sum_all(ad.bce_with_logits(a, target)), (2, 3))


def test_backward_needs_scalar():
    tape = ad.GradTape()
    x = tape.param(np.ones(3), "x")
    with pytest.raises(UsageError):
        tape.backward(ad.exp(x))


def test_duplicate_param_name_rejected():
    tape = ad.GradTape()
    tape.param(np.ones(2), "x")
    with pytest.raises(UsageError):
        tape.param(np.ones(2), "x")


def test_constants_are_not_recorded():
    tape = ad.GradTape()
    x = tape.param(np.ones(2), "x")
    c = ad.exp(ad.const(np.ones(2)))
    assert not c.requires_grad
    out = ad.sum_all(ad.mul(x, c))
    assert np.allclose(tape.backward(out)["x"], np.e)
    assert len(tape.nodes) == 2


def test_reused_node_accumulates():
    tape = ad.GradTape()
    x = tape.param(np.array([2.0]), "x")
    y = ad.mul(x, x)
    out = ad.sum_all(ad.add(y, y))
    assert np.allclose(tape.backward(out)["x"], 8.0)
