"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: while a Graph is active, every operation on a tracked Tensor
appends an op record to the graph's tape. The tape order is a topological
order by construction, so a single reverse sweep propagates gradients with
each node visited exactly once.

Backward passes express their vector-Jacobian products with the same Tensor
ops, so calling ``backward(..., create_graph=True)`` yields gradients that
are themselves differentiable graph nodes. That is what makes the
gradient-penalty term (a function of an input gradient) trainable.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import UsageError

_GRAPH_STACK: list["Graph"] = []
_GRAD_ENABLED: bool = True


def _active_graph():
    if _GRAD_ENABLED and _GRAPH_STACK:
        return _GRAPH_STACK[-1]
    return None


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


class Tensor:
    """A dense float64 array, optionally a node in an autodiff graph.

    ``tracked`` marks tensors whose gradient is wanted: parameter leaves
    (created via :func:`leaf`) and any op output derived from one while a
    graph is recording. Untracked tensors keep no parent references.
    """

    __slots__ = ("data", "op", "parents", "vjps", "tracked")

    def __init__(self, data, op="const", parents=(), vjps=(), tracked=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.op = op
        self.parents = parents
        self.vjps = vjps
        self.tracked = tracked

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, tracked={self.tracked})"

    # arithmetic sugar; heavy lifting lives in the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def leaf(data, tracked=True) -> Tensor:
    """A leaf tensor (parameter or differentiation root)."""
    return Tensor(np.array(data, dtype=np.float64), op="leaf", tracked=tracked)


def constant(data) -> Tensor:
    return Tensor(data, op="const", tracked=False)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Graph:
    """Tape of op records in creation (hence topological) order."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _GRAPH_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor, wrt=None, create_graph=False):
        """Gradients of a scalar ``loss`` w.r.t. tracked leaves.

        Returns a dict keyed by Tensor identity. When ``wrt`` is given the
        map covers exactly those tensors (zeros where the loss does not
        depend on them) and the sweep is pruned to the subgraph between
        ``wrt`` and the loss. With ``create_graph`` the returned gradients
        are recorded nodes and can be differentiated again.
        """
        if loss.data.size != 1:
            raise UsageError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        nodes = list(self.nodes)

        needed = None
        if wrt is not None:
            needed = {id(w) for w in wrt}
            for n in nodes:
                if any(id(p) in needed for p in n.parents):
                    needed.add(id(n))

        grads: dict[int, Tensor] = {id(loss): constant(np.ones_like(loss.data))}
        if create_graph:
            ctx = self
        else:
            ctx = no_grad()
        with ctx:
            for node in reversed(nodes):
                g = grads.pop(id(node), None)
                if g is None:
                    continue
                for p, vjp in zip(node.parents, node.vjps):
                    if not p.tracked:
                        continue
                    if needed is not None and id(p) not in needed:
                        continue
                    pg = vjp(g)
                    acc = grads.get(id(p))
                    grads[id(p)] = pg if acc is None else add(acc, pg)

        if wrt is not None:
            return {
                w: grads.get(id(w), constant(np.zeros_like(w.data))) for w in wrt
            }
        # keep whatever leaves accumulated a gradient (10-line bookkeeping:
        # grads is keyed by id, so recover objects from the tape and loss)
        by_id = {id(loss): loss}
        for n in nodes:
            for p in n.parents:
                by_id[id(p)] = p
        return {by_id[i]: g for i, g in grads.items() if i in by_id}


def _make(data, op, parents, vjps):
    graph = _active_graph()
    if graph is not None and any(p.tracked for p in parents):
        out = Tensor(data, op=op, parents=tuple(parents), vjps=tuple(vjps), tracked=True)
        graph.nodes.append(out)
        return out
    return Tensor(data, op=op)


def _unbroadcast(g: Tensor, shape) -> Tensor:
    """Reduce a broadcast gradient back to ``shape`` (sum over expanded axes)."""
    if g.data.shape == shape:
        return g
    extra = g.data.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(
        i for i, s in enumerate(shape) if s == 1 and g.data.shape[i] != 1
    )
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    if g.data.shape != tuple(shape):
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    return _make(
        a.data + b.data,
        "add",
        (a, b),
        (
            lambda g: _unbroadcast(g, a.data.shape),
            lambda g: _unbroadcast(g, b.data.shape),
        ),
    )


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    return _make(
        a.data - b.data,
        "sub",
        (a, b),
        (
            lambda g: _unbroadcast(g, a.data.shape),
            lambda g: _unbroadcast(neg(g), b.data.shape),
        ),
    )


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    return _make(
        a.data * b.data,
        "mul",
        (a, b),
        (
            lambda g: _unbroadcast(mul(g, b), a.data.shape),
            lambda g: _unbroadcast(mul(g, a), b.data.shape),
        ),
    )


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    out = _make(
        a.data / b.data,
        "div",
        (a, b),
        (),
    )
    out.vjps = (
        lambda g: _unbroadcast(div(g, b), a.data.shape),
        lambda g: _unbroadcast(neg(mul(g, div(out, b))), b.data.shape),
    )
    return out


def neg(a):
    a = _wrap(a)
    return _make(-a.data, "neg", (a,), (lambda g: neg(g),))


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    return _make(
        a.data @ b.data,
        "matmul",
        (a, b),
        (
            lambda g: matmul(g, transpose(b)),
            lambda g: matmul(transpose(a), g),
        ),
    )


def transpose(a):
    a = _wrap(a)
    return _make(a.data.T, "transpose", (a,), (lambda g: transpose(g),))


def reshape(a, shape):
    a = _wrap(a)
    old = a.data.shape
    return _make(
        a.data.reshape(shape), "reshape", (a,), (lambda g: reshape(g, old),)
    )


def broadcast_to(a, shape):
    a = _wrap(a)
    old = a.data.shape
    return _make(
        np.broadcast_to(a.data, shape).copy(),
        "broadcast",
        (a,),
        (lambda g: _unbroadcast(g, old),),
    )


def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    shape = a.data.shape

    def vjp(g):
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else axis
            kept = list(g.data.shape)
            for ax in sorted(ax % len(shape) for ax in axes):
                kept.insert(ax, 1)
            g = reshape(g, tuple(kept))
        return broadcast_to(g, shape)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,), (vjp,))


def mean(a):
    a = _wrap(a)
    return mul(tsum(a), 1.0 / a.data.size)


def exp(a):
    a = _wrap(a)
    out = _make(np.exp(a.data), "exp", (a,), ())
    out.vjps = (lambda g: mul(g, out),)
    return out


def log(a):
    a = _wrap(a)
    return _make(np.log(a.data), "log", (a,), (lambda g: div(g, a),))


def sqrt(a):
    a = _wrap(a)
    out = _make(np.sqrt(a.data), "sqrt", (a,), ())
    out.vjps = (lambda g: div(mul(g, 0.5), out),)
    return out


def square(a):
    a = _wrap(a)
    return _make(a.data * a.data, "square", (a,), (lambda g: mul(g, mul(a, 2.0)),))


def tanh(a):
    a = _wrap(a)
    out = _make(np.tanh(a.data), "tanh", (a,), ())
    out.vjps = (lambda g: mul(g, sub(1.0, square(out))),)
    return out


def sigmoid(a):
    a = _wrap(a)
    out = _make(expit(a.data), "sigmoid", (a,), ())
    out.vjps = (lambda g: mul(g, mul(out, sub(1.0, out))),)
    return out


def softplus(a):
    """log(1 + e^x) in the overflow-free form max(x, 0) + log1p(e^-|x|)."""
    a = _wrap(a)
    x = a.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _make(data, "softplus", (a,), (lambda g: mul(g, sigmoid(a)),))


def tanh_softplus_values(x: np.ndarray) -> np.ndarray:
    """tanh(softplus(x)) with a single exponential.

    With u = e^x: tanh(log(1 + u)) = (u^2 + 2u) / (u^2 + 2u + 2); above the
    cutoff the value is 1 to machine precision (clamping also keeps u^2 far
    from the float64 overflow line). In-place arithmetic on two temporaries.
    """
    t = np.minimum(x, 30.0)
    np.exp(t, out=t)  # u
    d = t + 2.0
    d *= t  # u^2 + 2u
    t = d + 2.0
    d /= t
    return d


def tanh_softplus(a):
    """tanh(softplus(x)) as one primitive, keeping mish off the hot-path floor."""
    a = _wrap(a)
    out = _make(tanh_softplus_values(a.data), "tanh_softplus", (a,), ())
    out.vjps = (lambda g: mul(g, mul(sigmoid(a), sub(1.0, square(out)))),)
    return out


def relu(a):
    a = _wrap(a)
    mask = (a.data > 0).astype(np.float64)
    return _make(np.maximum(a.data, 0.0), "relu", (a,), (lambda g: mul(g, constant(mask)),))


def clip(a, lo, hi):
    """Clamp with straight-through gradient inside [lo, hi], zero outside."""
    a = _wrap(a)
    mask = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)
    return _make(
        np.clip(a.data, lo, hi), "clip", (a,), (lambda g: mul(g, constant(mask)),)
    )


def minimum(a, b):
    a, b = _wrap(a), _wrap(b)
    mask = (a.data <= b.data).astype(np.float64)
    return _make(
        np.minimum(a.data, b.data),
        "minimum",
        (a, b),
        (
            lambda g: mul(g, constant(mask)),
            lambda g: mul(g, constant(1.0 - mask)),
        ),
    )


def concat(a, b, axis=1):
    a, b = _wrap(a), _wrap(b)
    if axis != 1 or a.data.ndim != 2 or b.data.ndim != 2:
        raise UsageError("concat supports 2-D tensors along axis 1")
    da = a.data.shape[1]
    db = b.data.shape[1]
    return _make(
        np.concatenate([a.data, b.data], axis=1),
        "concat",
        (a, b),
        (
            lambda g: slice_cols(g, 0, da),
            lambda g: slice_cols(g, da, da + db),
        ),
    )


def slice_cols(a, j0, j1):
    a = _wrap(a)
    total = a.data.shape[1]
    return _make(
        a.data[:, j0:j1].copy(),
        "slice",
        (a,),
        (lambda g: pad_cols(g, j0, total),),
    )


def pad_cols(a, j0, total):
    a = _wrap(a)
    width = a.data.shape[1]
    padded = np.zeros((a.data.shape[0], total), dtype=np.float64)
    padded[:, j0 : j0 + width] = a.data
    return _make(padded, "pad", (a,), (lambda g: slice_cols(g, j0, j0 + width),))


def detach(a) -> Tensor:
    """Value of ``a`` as a fresh constant, cut out of the graph."""
    a = _wrap(a)
    return Tensor(a.data, op="const")
