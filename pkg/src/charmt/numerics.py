"""Tape-based reverse-mode differentiation over small dense numpy arrays.

Every forward computation is recorded on a :class:`Graph` as a list of
:class:`Node` objects in creation order, which is a valid topological order.
``Graph.backward`` walks the tape in reverse and accumulates gradients into
the parameter leaves.  A graph built with ``record=False`` computes the same
values without keeping backward closures; decoders use it.

Activations are 2-D ``(rows, features)`` arrays so that one node can carry a
batch of words or hypotheses.  Only the handful of primitives the translation
model needs are provided.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class NumericsError(ValueError):
    """Shape mismatch, non-finite value or malformed graph."""


# ---------------------------------------------------------------------------
# Parameter storage
# ---------------------------------------------------------------------------


class ParamStore:
    """Named parameter tensors plus matching gradient accumulators."""

    def __init__(self, dtype="float64"):
        self.dtype = np.dtype(dtype)
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def __contains__(self, name):
        return name in self.values

    def __getitem__(self, name):
        return self.values[name]

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def names(self):
        return list(self.values)

    def add(self, name, value):
        if name in self.values:
            raise NumericsError(f"parameter {name!r} already exists")
        value = np.array(value, dtype=self.dtype)
        if not np.isfinite(value).all():
            raise NumericsError(f"parameter {name!r} has non-finite values")
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def set(self, name, value):
        value = np.asarray(value, dtype=self.dtype)
        if value.shape != self.values[name].shape:
            raise NumericsError(
                f"shape {value.shape} does not match {name!r} {self.values[name].shape}"
            )
        self.values[name] = value.copy()

    def uniform(self, name, shape, rng, scale=0.1):
        return self.add(name, rng.uniform(-scale, scale, size=shape))

    def zero_grad(self):
        for name, value in self.values.items():
            self.grads[name] = np.zeros_like(value)

    def copy(self):
        other = ParamStore(self.dtype)
        for name, value in self.values.items():
            other.values[name] = value.copy()
            other.grads[name] = self.grads[name].copy()
        return other

    def astype(self, dtype):
        other = ParamStore(dtype)
        for name, value in self.values.items():
            other.add(name, value)
        return other

    def size(self):
        return sum(v.size for v in self.values.values())


# ---------------------------------------------------------------------------
# Graph
# ---------------------------------------------------------------------------


class Outer:
    """Deferred gradient ``g.T @ x``; summed with one matmul when the node is finalised."""

    __slots__ = ("g", "x")

    def __init__(self, g, x):
        self.g = g
        self.x = x


class Scatter:
    """Deferred gradient that adds the rows of ``g`` at row indices ``idx``."""

    __slots__ = ("idx", "g")

    def __init__(self, idx, g):
        self.idx = idx
        self.g = g


def _finalize(node):
    grad = node.grad
    outers = [p for p in node.pending if type(p) is Outer]
    scatters = [p for p in node.pending if type(p) is Scatter]
    if outers:
        G = np.concatenate([p.g for p in outers], axis=0)
        X = np.concatenate([p.x for p in outers], axis=0)
        dense = G.T @ X
        grad = dense if grad is None else grad + dense
    if scatters:
        out = np.zeros_like(node.value) if grad is None else grad.copy()
        idx = np.concatenate([p.idx for p in scatters])
        np.add.at(out, idx, np.concatenate([p.g for p in scatters], axis=0))
        grad = out
    node.pending = None
    return grad


class Node:
    __slots__ = ("value", "grad", "parents", "backward", "index", "name", "pending")

    def __init__(self, value, parents=(), backward=None, index=-1, name=None):
        self.value = value
        self.grad = None
        self.pending = None
        self.parents = parents
        self.backward = backward
        self.index = index
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, name={self.name})"


class Graph:
    """Record of one forward pass.

    Parameters are bound lazily with :meth:`param`; a parameter used several
    times maps to a single leaf so its gradient is the sum over all uses.
    """

    def __init__(self, store: ParamStore | None = None, record=True, check_finite=True):
        self.store = store
        self.record = record
        self.check_finite = check_finite
        self.dtype = store.dtype if store is not None else np.dtype("float64")
        self.nodes: list[Node] = []
        self._params: dict[str, Node] = {}

    def param(self, name) -> Node:
        node = self._params.get(name)
        if node is None:
            if self.store is None or name not in self.store:
                raise NumericsError(f"unknown parameter {name!r}")
            node = self._leaf(self.store.values[name], name)
            self._params[name] = node
        return node

    def const(self, value) -> Node:
        value = np.asarray(value, dtype=self.dtype)
        return self._leaf(value, None)

    def _leaf(self, value, name):
        node = Node(value, index=len(self.nodes), name=name)
        if self.record:
            self.nodes.append(node)
        return node

    def add_node(self, value, parents, backward, finite=None) -> Node:
        if finite is None:
            finite = value
        if self.check_finite and not np.isfinite(finite).all():
            raise NumericsError("non-finite value produced in forward pass")
        if not self.record:
            return Node(value)
        node = Node(value, tuple(parents), backward, len(self.nodes))
        self.nodes.append(node)
        return node

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Accumulate d loss / d parameter for every parameter in the store."""
        if not self.record:
            raise NumericsError("graph was built without recording")
        if loss.value.size != 1:
            raise NumericsError(f"loss must be scalar, got shape {loss.value.shape}")
        if loss.index < 0 or loss.index >= len(self.nodes) or self.nodes[loss.index] is not loss:
            raise NumericsError("loss node does not belong to this graph")
        for node in self.nodes:
            node.grad = None
            node.pending = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.index + 1]):
            if node.pending:
                node.grad = _finalize(node)
            if node.grad is None or node.backward is None:
                continue
            grads = node.backward(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None:
                    continue
                if parent.index >= node.index:
                    raise NumericsError("graph contains a cycle")
                if type(g) is Outer or type(g) is Scatter:
                    if parent.pending is None:
                        parent.pending = [g]
                    else:
                        parent.pending.append(g)
                else:
                    parent.grad = g if parent.grad is None else parent.grad + g
        out = {}
        if self.store is not None:
            for name, value in self.store.values.items():
                node = self._params.get(name)
                if node is None or node.grad is None:
                    out[name] = np.zeros_like(value)
                else:
                    out[name] = np.asarray(node.grad, dtype=value.dtype).reshape(value.shape)
        return out


# ---------------------------------------------------------------------------
# Primitive operations
# ---------------------------------------------------------------------------


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def linear(graph: Graph, x: Node, w: Node) -> Node:
    """``x @ w.T`` for x ``(B, k)`` and w ``(n, k)``."""
    xv, wv = x.value, w.value
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[1]:
        raise NumericsError(f"linear: cannot multiply {xv.shape} by {wv.shape}^T")

    def backward(g):
        return g @ wv, Outer(g, xv)

    return graph.add_node(xv @ wv.T, (x, w), backward)


def add(graph: Graph, *xs: Node) -> Node:
    """Elementwise sum; 1-D operands broadcast over rows (bias)."""
    out = xs[0].value
    for x in xs[1:]:
        out = out + x.value
    shapes = [x.value.shape for x in xs]

    def backward(g):
        return tuple(_reduce_to(g, s) for s in shapes)

    return graph.add_node(out, xs, backward)


def sub(graph: Graph, a: Node, b: Node) -> Node:
    sa, sb = a.value.shape, b.value.shape

    def backward(g):
        return _reduce_to(g, sa), -_reduce_to(g, sb)

    return graph.add_node(a.value - b.value, (a, b), backward)


def mul(graph: Graph, a: Node, b: Node) -> Node:
    av, bv = a.value, b.value

    def backward(g):
        return _reduce_to(g * bv, av.shape), _reduce_to(g * av, bv.shape)

    return graph.add_node(av * bv, (a, b), backward)


def scale(graph: Graph, x: Node, c: float) -> Node:
    return graph.add_node(x.value * c, (x,), lambda g: (g * c,))


def tanh(graph: Graph, x: Node) -> Node:
    y = np.tanh(x.value)
    return graph.add_node(y, (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(v):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(graph: Graph, x: Node) -> Node:
    y = _sigmoid(x.value)
    return graph.add_node(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(graph: Graph, x: Node) -> Node:
    y = np.exp(x.value)
    return graph.add_node(y, (x,), lambda g: (g * y,))


def log(graph: Graph, x: Node) -> Node:
    xv = x.value
    if (xv <= 0).any():
        raise NumericsError("log of non-positive value")
    return graph.add_node(np.log(xv), (x,), lambda g: (g / xv,))


def total(graph: Graph, x: Node) -> Node:
    """Sum of all entries as a 0-d node."""
    shape = x.value.shape
    return graph.add_node(
        np.asarray(x.value.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


def concat(graph: Graph, xs: Sequence[Node], axis=1) -> Node:
    values = [x.value for x in xs]
    out = np.concatenate(values, axis=axis)
    splits = np.cumsum([v.shape[axis] for v in values])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return graph.add_node(out, tuple(xs), backward)


def rows(graph: Graph, x: Node, idx) -> Node:
    """Gather rows ``x[idx]``; repeated indices accumulate on the way back."""
    idx = np.asarray(idx, dtype=np.intp)
    xv = x.value
    if idx.size and (idx.min() < 0 or idx.max() >= xv.shape[0]):
        raise NumericsError(f"row index out of range for {xv.shape[0]} rows")

    def backward(g):
        return (Scatter(idx, g),)

    return graph.add_node(xv[idx], (x,), backward)


def cols(graph: Graph, x: Node, start: int, stop: int) -> Node:
    """Column block ``x[:, start:stop]``."""
    xv = x.value

    def backward(g):
        out = np.zeros_like(xv)
        out[:, start:stop] = g
        return (out,)

    return graph.add_node(xv[:, start:stop], (x,), backward)


def reshape(graph: Graph, x: Node, shape) -> Node:
    old = x.value.shape
    return graph.add_node(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def log_softmax(graph: Graph, x: Node, mask=None) -> Node:
    """Row-wise log-softmax; ``mask`` marks columns that are allowed (others get -inf)."""
    xv = x.value
    if mask is not None:
        xv = np.where(mask, xv, -np.inf)
    m = xv.max(axis=-1, keepdims=True)
    shifted = xv - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def backward(g):
        gx = g - p * g.sum(axis=-1, keepdims=True)
        if mask is not None:
            gx = np.where(mask, gx, 0.0)
        return (gx,)

    if mask is None:
        return graph.add_node(y, (x,), backward)
    # excluded columns hold -inf on purpose
    return graph.add_node(y, (x,), backward, finite=y[np.broadcast_to(mask, y.shape)])


def cross_entropy(graph: Graph, logits: Node, targets, mask=None) -> Node:
    """Sum over rows of ``-log softmax(logits)[row, target]``.

    ``mask`` is an optional boolean array broadcastable to the logits that
    lists the admissible classes for each row.
    """
    lv = logits.value
    targets = np.asarray(targets, dtype=np.intp)
    if targets.shape != (lv.shape[0],):
        raise NumericsError("cross_entropy: one target per row required")
    if targets.size and (targets.min() < 0 or targets.max() >= lv.shape[1]):
        raise NumericsError("cross_entropy: target id out of range")
    if mask is not None:
        mask = np.broadcast_to(mask, lv.shape)
        if not mask[np.arange(len(targets)), targets].all():
            raise NumericsError("cross_entropy: target is masked out")
        lv = np.where(mask, lv, -np.inf)
    m = lv.max(axis=1, keepdims=True)
    e = np.exp(lv - m)
    z = e.sum(axis=1, keepdims=True)
    p = e / z
    r = np.arange(len(targets))
    loss = -(lv[r, targets] - m[:, 0] - np.log(z[:, 0])).sum()

    def backward(g):
        gx = p.copy()
        gx[r, targets] -= 1.0
        return (gx * g,)

    return graph.add_node(np.asarray(loss), (logits,), backward)


def pick(graph: Graph, x: Node, r, c) -> Node:
    """Sum of the selected entries ``x[r, c]`` as a 0-d node."""
    r = np.asarray(r, dtype=np.intp)
    c = np.asarray(c, dtype=np.intp)
    xv = x.value

    def backward(g):
        out = np.zeros_like(xv)
        np.add.at(out, (r, c), g)
        return (out,)

    return graph.add_node(np.asarray(xv[r, c].sum()), (x,), backward)


def log_sigmoid(graph: Graph, x: Node) -> Node:
    xv = x.value
    y = -np.logaddexp(0.0, -xv)
    s = _sigmoid(-xv)
    return graph.add_node(y, (x,), lambda g: (g * s,))


def additive_scores(graph: Graph, p: Node, q: Node, v: Node) -> Node:
    """``z[i, j] = v . tanh(p[i] + q[j])`` for p ``(m, d)``, q ``(n, d)``, v ``(d,)``."""
    pv, qv, vv = p.value, q.value, v.value
    if pv.shape[1] != qv.shape[1] or vv.shape != (pv.shape[1],):
        raise NumericsError(
            f"additive_scores: incompatible shapes {pv.shape}, {qv.shape}, {vv.shape}"
        )
    t = np.tanh(pv[:, None, :] + qv[None, :, :])
    z = t @ vv

    def backward(g):
        dpre = g[:, :, None] * vv * (1.0 - t * t)
        dv = np.einsum("ij,ijd->d", g, t)
        return dpre.sum(axis=1), dpre.sum(axis=0), dv

    return graph.add_node(z, (p, q, v), backward)


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LstmParams:
    """Names and sizes of one LSTM's parameters.

    Gate blocks are stacked in the order input, forget, output, candidate in
    ``W`` ``(4H, d_in)``, ``U`` ``(4H, H)`` and ``b`` ``(4H,)``.
    """

    prefix: str
    d_in: int
    d_hidden: int

    @property
    def names(self):
        return (f"{self.prefix}.W", f"{self.prefix}.U", f"{self.prefix}.b")

    def init(self, store: ParamStore, rng, scale=0.1, forget_bias=1.0):
        H = self.d_hidden
        w, u, b = self.names
        store.uniform(w, (4 * H, self.d_in), rng, scale)
        store.uniform(u, (4 * H, H), rng, scale)
        bias = np.zeros(4 * H)
        bias[H : 2 * H] = forget_bias
        store.add(b, bias)

    def bind(self, graph: Graph):
        return tuple(graph.param(n) for n in self.names)


def lstm_transition(graph: Graph, inputs: Sequence[Node], state: Node | None, U: Node) -> Node:
    """One fused LSTM step; returns the new state ``[h | c]`` of shape ``(rows, 2H)``.

    The gate pre-activations are ``sum(inputs) + h_prev @ U.T`` where each
    input broadcasts against ``(rows, 4H)``.  ``state=None`` is the zero state.
    """
    H = U.value.shape[1]
    pre = inputs[0].value
    for x in inputs[1:]:
        pre = pre + x.value
    if pre.ndim == 1:
        pre = pre[None, :]
    if state is not None:
        sv = state.value
        if sv.shape[1] != 2 * H:
            raise NumericsError("lstm state must have width 2 * hidden")
        hp, cp = sv[:, :H], sv[:, H:]
        if pre.shape[0] != hp.shape[0]:
            if pre.shape[0] != 1:
                raise NumericsError("lstm_step: batch size mismatch")
            pre = np.broadcast_to(pre, (hp.shape[0], pre.shape[1]))
        gv = pre + np.dot(hp, U.value.T)
    else:
        gv = pre
        cp = None
    if gv.shape[1] != 4 * H:
        raise NumericsError(f"gate width {gv.shape[1]} != 4 * {H}")
    sig = _sigmoid(gv[:, : 3 * H])
    i, f, o = sig[:, :H], sig[:, H : 2 * H], sig[:, 2 * H :]
    cand = np.tanh(gv[:, 3 * H :])
    c = i * cand if cp is None else f * cp + i * cand
    tc = np.tanh(c)
    h = o * tc

    # derivative factors
    a_i = cand * i * (1.0 - i)
    a_f = None if cp is None else cp * f * (1.0 - f)
    a_o = tc * o * (1.0 - o)
    a_g = i * (1.0 - cand * cand)
    k = o * (1.0 - tc * tc)
    shapes = [x.value.shape for x in inputs]

    def backward(G):
        gh, gc = G[:, :H], G[:, H:]
        dc = gc + gh * k
        zero_f = np.zeros_like(dc) if a_f is None else dc * a_f
        dg = np.concatenate([dc * a_i, zero_f, gh * a_o, dc * a_g], axis=1)
        grads = [_reduce_to(dg, shp) for shp in shapes]
        if state is not None:
            grads.append(np.concatenate([np.dot(dg, U.value), dc * f], axis=1))
            grads.append(Outer(dg, hp))
        return grads

    parents = (*inputs, state, U) if state is not None else tuple(inputs)
    return graph.add_node(np.concatenate([h, c], axis=1), parents, backward)


def hidden(graph: Graph, state: Node) -> Node:
    """The ``h`` half of an LSTM state."""
    H = state.value.shape[1] // 2
    return cols(graph, state, 0, H)


def lstm_step(graph: Graph, x: Node, state: Node | None, params: LstmParams, bound=None) -> Node:
    """One LSTM transition for a batch of rows; returns the new ``[h | c]`` state.

    ``bound`` lets callers pass pre-bound ``(W, U, b)`` nodes, or a pre-computed
    input projection as ``(None, U, b_or_None)`` with ``x`` already holding
    ``x @ W.T``.
    """
    W, U, b = bound if bound is not None else params.bind(graph)
    if state is not None and state.value.shape[1] != 2 * params.d_hidden:
        raise NumericsError("lstm_step: state dimension mismatch")
    if W is None:
        xw = x
    else:
        if x.value.shape[1] != params.d_in:
            raise NumericsError(
                f"lstm_step: input dimension {x.value.shape[1]} != {params.d_in}"
            )
        xw = linear(graph, x, W)
    inputs = [xw] if b is None else [xw, b]
    return lstm_transition(graph, inputs, state, U)


def lstm_rows(graph: Graph, X: Node, params: LstmParams, reverse=False, batched=True) -> Node:
    """Hidden states ``(n, H)`` of an LSTM run over the rows of ``X`` (one sequence).

    ``batched`` projects all inputs with one product; otherwise each row is
    projected on its own, exactly as an incremental caller would, so that
    both routes give bit-identical states.
    """
    W, U, b = params.bind(graph)
    n = X.value.shape[0]
    if n < 1:
        raise NumericsError("lstm_rows needs at least one row")
    if X.value.shape[1] != params.d_in:
        raise NumericsError(f"lstm_rows: input dimension {X.value.shape[1]} != {params.d_in}")
    XW = linear(graph, X, W) if batched else None
    order = range(n - 1, -1, -1) if reverse else range(n)
    state = None
    states: list[Node | None] = [None] * n
    for t in order:
        xw = rows(graph, XW, [t]) if batched else linear(graph, rows(graph, X, [t]), W)
        state = lstm_transition(graph, [xw, b], state, U)
        states[t] = state
    S = states[0] if n == 1 else concat(graph, states, axis=0)
    return hidden(graph, S)


def lstm_sequence(graph: Graph, xs: Sequence[Node], params: LstmParams, reverse=False):
    """Run an LSTM over per-position inputs; returns hidden states in position order."""
    bound = params.bind(graph)
    order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    state = None
    out: list[Node | None] = [None] * len(xs)
    for t in order:
        state = lstm_step(graph, xs[t], state, params, bound)
        out[t] = hidden(graph, state)
    return out


# ---------------------------------------------------------------------------
# Plain numpy helpers
# ---------------------------------------------------------------------------


def softmax(scores) -> np.ndarray:
    """Numerically stable softmax of a 1-D score vector."""
    z = np.asarray(scores, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise NumericsError("softmax needs a non-empty vector")
    if not np.isfinite(z).all():
        raise NumericsError("softmax input must be finite")
    e = np.exp(z - z.max())
    return e / e.sum()


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads)))


def finite_difference_check(
    f: Callable[[ParamStore], float],
    grad_fn: Callable[[ParamStore], dict],
    store: ParamStore,
    epsilon=1e-5,
    sample_count=20,
    seed=0,
    names=None,
    floor=1e-5,
):
    """Compare analytic gradients with central differences on sampled scalars.

    ``f`` evaluates the scalar loss and ``grad_fn`` returns the gradient map
    from :meth:`Graph.backward`.  Returns ``(max_rel_error, records)`` where
    each record is ``(name, flat_index, analytic, numeric, rel_error)``.
    Gradients smaller than ``floor`` in magnitude are compared on an absolute
    scale of ``floor`` since their relative error is dominated by round-off.
    """
    if epsilon <= 0:
        raise NumericsError("epsilon must be positive")
    rng = np.random.default_rng(seed)
    names = list(names) if names is not None else store.names()
    if not names:
        return 0.0, []
    analytic = grad_fn(store)
    sizes = np.array([store.values[n].size for n in names], dtype=float)
    records = []
    worst = 0.0
    for _ in range(sample_count):
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        value = store.values[name]
        k = int(rng.integers(value.size))
        old = value.flat[k]
        value.flat[k] = old + epsilon
        plus = float(f(store))
        value.flat[k] = old - epsilon
        minus = float(f(store))
        value.flat[k] = old
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericsError(f"non-finite loss when perturbing {name}[{k}]")
        numeric = (plus - minus) / (2 * epsilon)
        a = float(analytic[name].flat[k])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        records.append((name, k, a, numeric, rel))
        worst = max(worst, rel)
    return worst, records
