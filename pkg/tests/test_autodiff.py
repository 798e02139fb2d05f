import numpy as np
import pytest

from diffail.errors import UsageError
from diffail.numerics import Graph, constant, leaf, no_grad
from diffail.numerics import autodiff as ad

from fdcheck import assert_grads_close, fd_grad


def test_square_gradient():
    x = leaf(3.0)
    g = Graph()
    with g:
        y = ad.square(x)
    grads = g.backward(y, wrt=[x])
    assert grads[x].data == pytest.approx(6.0)


def test_constant_loss_gives_zero_gradients():
    x = leaf(np.ones((2, 3)))
    g = Graph()
    with g:
        loss = constant(5.0)
    grads = g.backward(loss, wrt=[x])
    assert np.all(grads[x].data == 0.0)
    assert grads[x].data.shape == (2, 3)


def test_non_scalar_loss_rejected():
    x = leaf(np.ones(4))
    g = Graph()
    with g:
        y = ad.mul(x, 2.0)
    with pytest.raises(UsageError):
        g.backward(y)


def test_fan_out_accumulates():
    # y = x*x + x, dy/dx = 2x + 1
    x = leaf(1.5)
    g = Graph()
    with g:
        y = ad.add(ad.mul(x, x), x)
    grads = g.backward(y, wrt=[x])
    assert grads[x].data == pytest.approx(4.0)


def test_backward_visits_tape_once():
    x = leaf(2.0)
    g = Graph()
    with g:
        y = ad.square(ad.square(x))  # x^4
    before = len(g.nodes)
    g.backward(y, wrt=[x])
    # create_graph=False must not grow the tape
    assert len(g.nodes) == before


def test_no_grad_suppresses_recording():
    x = leaf(2.0)
    g = Graph()
    with g:
        with no_grad():
            y = ad.square(x)
        z = ad.mul(x, 3.0)
    assert not y.tracked
    assert z.tracked
    assert len(g.nodes) == 1


def test_detach_cuts_graph():
    x = leaf(2.0)
    g = Graph()
    with g:
        y = ad.square(x)
        z = ad.mul(ad.detach(y), x)
    grads = g.backward(z, wrt=[x])
    # d/dx [const(4) * x] = 4, no path through y
    assert grads[x].data == pytest.approx(4.0)


def _loss_through(op, *leaves):
    """Scalar loss builder: mean(square(op(*leaves))) on a fresh graph."""
    g = Graph()
    with g:
        out = op(*leaves)
        loss = ad.mean(ad.square(out))
    return g, loss


UNARY_CASES = [
    ("exp", ad.exp, (3, 4), None),
    ("log", ad.log, (3, 4), "positive"),
    ("sqrt", ad.sqrt, (3, 4), "positive"),
    ("square", ad.square, (3, 4), None),
    ("tanh", ad.tanh, (3, 4), None),
    ("sigmoid", ad.sigmoid, (3, 4), None),
    ("softplus", ad.softplus, (3, 4), None),
    ("tanh_softplus", ad.tanh_softplus, (3, 4), None),
    ("relu", ad.relu, (3, 4), "offset"),
    ("neg", ad.neg, (3, 4), None),
    ("transpose", ad.transpose, (3, 4), None),
    ("sum_all", lambda t: ad.tsum(t), (3, 4), None),
    ("sum_rows", lambda t: ad.tsum(t, axis=1), (3, 4), None),
    ("sum_cols_keep", lambda t: ad.tsum(t, axis=0, keepdims=True), (3, 4), None),
    ("reshape", lambda t: ad.reshape(t, (4, 3)), (3, 4), None),
    ("broadcast", lambda t: ad.broadcast_to(t, (5, 3, 4)), (3, 4), None),
    ("clip", lambda t: ad.clip(t, -0.5, 0.5), (3, 4), "spread"),
    ("slice", lambda t: ad.slice_cols(t, 1, 3), (3, 4), None),
    ("pad", lambda t: ad.pad_cols(t, 2, 9), (3, 4), None),
]


@pytest.mark.parametrize("name,op,shape,domain", UNARY_CASES, ids=[c[0] for c in UNARY_CASES])
def test_unary_ops_match_finite_differences(name, op, shape, domain):
    rng = np.random.default_rng(hash(name) % 2**32)
    x0 = rng.standard_normal(shape)
    if domain == "positive":
        x0 = np.abs(x0) + 0.5
    elif domain == "offset":
        # keep away from the relu kink where FD is invalid
        x0 = x0 + np.sign(x0) * 0.3
    elif domain == "spread":
        x0 = x0 * 2.0  # make sure some entries clip and some do not
    x = leaf(x0.copy())
    g, loss = _loss_through(op, x)
    analytic = g.backward(loss, wrt=[x])[x].data
    numeric = fd_grad(lambda: _loss_through(op, x)[1].item(), x.data)
    assert_grads_close(analytic, numeric)


BINARY_CASES = [
    ("add", ad.add, (3, 4), (3, 4)),
    ("add_bias", ad.add, (3, 4), (4,)),
    ("sub", ad.sub, (3, 4), (3, 4)),
    ("mul", ad.mul, (3, 4), (3, 4)),
    ("mul_colvec", ad.mul, (3, 4), (3, 1)),
    ("mul_scalar", ad.mul, (3, 4), ()),
    ("div", ad.div, (3, 4), (3, 4)),
    ("matmul", ad.matmul, (3, 4), (4, 2)),
    ("minimum", ad.minimum, (3, 4), (3, 4)),
    ("concat", ad.concat, (3, 4), (3, 2)),
]


@pytest.mark.parametrize("name,op,sa,sb", BINARY_CASES, ids=[c[0] for c in BINARY_CASES])
def test_binary_ops_match_finite_differences(name, op, sa, sb):
    rng = np.random.default_rng(hash(name) % 2**32)
    a0 = rng.standard_normal(sa)
    b0 = rng.standard_normal(sb)
    if name == "div":
        b0 = np.abs(b0) + 0.5
    if name == "minimum":
        b0 = b0 + 0.2  # avoid exact ties where the subgradient is ambiguous
    a, b = leaf(a0.copy()), leaf(b0.copy())
    g, loss = _loss_through(op, a, b)
    grads = g.backward(loss, wrt=[a, b])
    for t in (a, b):
        numeric = fd_grad(lambda: _loss_through(op, a, b)[1].item(), t.data)
        assert_grads_close(grads[t].data, numeric)


def test_wrt_pruning_matches_full_backward():
    rng = np.random.default_rng(7)
    a = leaf(rng.standard_normal((2, 3)))
    b = leaf(rng.standard_normal((3, 2)))
    c = leaf(rng.standard_normal((2, 2)))

    def build():
        g = Graph()
        with g:
            loss = ad.mean(ad.square(ad.add(ad.matmul(a, b), c)))
        return g, loss

    g1, l1 = build()
    pruned = g1.backward(l1, wrt=[a])
    g2, l2 = build()
    full = g2.backward(l2, wrt=[a, b, c])
    np.testing.assert_array_equal(pruned[a].data, full[a].data)


def test_second_derivative_via_create_graph():
    # y = x^3, dy/dx = 3x^2, d2y/dx2 = 6x
    x = leaf(1.7)
    g = Graph()
    with g:
        y = ad.mul(ad.square(x), x)
        first = g.backward(y, wrt=[x], create_graph=True)[x]
        # note: first is now a node on the same tape
    second = g.backward(first, wrt=[x])
    assert first.data == pytest.approx(3 * 1.7**2)
    assert second[x].data == pytest.approx(6 * 1.7, rel=1e-10)


def test_gradient_norm_penalty_is_differentiable():
    """The gradient-penalty pattern: FD-check d/dw of (|df/dx| - 1)^2."""
    rng = np.random.default_rng(3)
    w = leaf(rng.standard_normal((3, 1)))
    x_val = rng.standard_normal((4, 3))

    def penalty():
        x = leaf(x_val.copy())
        g = Graph()
        with g:
            out = ad.tsum(ad.tanh(ad.matmul(x, w)))
            gx = g.backward(out, wrt=[x], create_graph=True)[x]
            norms = ad.sqrt(ad.tsum(ad.square(gx), axis=1))
            pen = ad.mean(ad.square(ad.sub(norms, 1.0)))
        return g, pen

    g, pen = penalty()
    analytic = g.backward(pen, wrt=[w])[w].data
    numeric = fd_grad(lambda: penalty()[1].item(), w.data)
    assert_grads_close(analytic, numeric)


def test_results_are_deterministic():
    def run():
        rng = np.random.default_rng(42)
        x = leaf(rng.standard_normal((5, 5)))
        g = Graph()
        with g:
            loss = ad.mean(ad.square(ad.tanh(x)))
        return g.backward(loss, wrt=[x])[x].data

    a, b = run(), run()
    assert np.array_equal(a, b)
