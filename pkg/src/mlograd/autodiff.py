"""Dense float64 tensors with a reverse-mode differentiation tape.

Every operation that touches a recorded tensor appends a node holding the
backward rules for its inputs. Backward rules are themselves written in
terms of tensor operations, so a backward pass run with ``create_graph=True``
is recorded like any forward computation; that is what makes Hessian-vector
and mixed second-order products (``hvp``, ``cross_vjp``) exact rather than
finite-difference approximations.

Nodes reference their parents directly and carry a monotone topological
index instead of living in a materialized list, so subgraphs no longer
reachable from any live tensor are reclaimed by reference counting. Long
runs therefore do not accumulate dead graph, and peak-allocation accounting
(see ``alloc_stats``) reflects what is actually live.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericalError

__all__ = [
    "Tensor",
    "Tape",
    "create",
    "leaf",
    "constant",
    "zeros_like",
    "elementwise",
    "add",
    "sub",
    "mul",
    "neg",
    "relu",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "matmul",
    "reduce",
    "tensor_sum",
    "mean",
    "dot",
    "sqnorm",
    "loss",
    "mse",
    "softmax_cross_entropy",
    "softmax_cross_entropy_per_sample",
    "weighted_softmax_cross_entropy",
    "grad",
    "hvp",
    "cross_vjp",
    "active_tape",
    "recording_paused",
    "alloc_stats",
    "reset_peak_alloc",
    "flatten_tensors",
    "unflatten_array",
]


class _AllocStats:
    """Live/peak byte counters over all Tensor payloads in the process."""

    __slots__ = ("live_bytes", "peak_bytes")

    def __init__(self) -> None:
        self.live_bytes = 0
        self.peak_bytes = 0

    def _add(self, n: int) -> None:
        self.live_bytes += n
        if self.live_bytes > self.peak_bytes:
            self.peak_bytes = self.live_bytes

    def _remove(self, n: int) -> None:
        self.live_bytes -= n


_ALLOC = _AllocStats()


def alloc_stats() -> tuple[int, int]:
    """Return ``(live_bytes, peak_bytes)`` of tensor payload memory."""
    return _ALLOC.live_bytes, _ALLOC.peak_bytes


def reset_peak_alloc() -> int:
    """Reset the peak counter to the current live figure and return it."""
    _ALLOC.peak_bytes = _ALLOC.live_bytes
    return _ALLOC.live_bytes


class Tape:
    """Recording switch plus the topological counter for new nodes.

    Parents of a node always carry a smaller index than the node itself,
    which gives a valid reverse topological order for backward sweeps.
    """

    __slots__ = ("active", "_next_index")

    def __init__(self) -> None:
        self.active = True
        self._next_index = 0

    def next_index(self) -> int:
        i = self._next_index
        self._next_index = i + 1
        return i


_TAPE = Tape()


def active_tape() -> Tape:
    return _TAPE


@contextmanager
def recording_paused():
    """Temporarily stop appending nodes (values still computed normally)."""
    prev = _TAPE.active
    _TAPE.active = False
    try:
        yield
    finally:
        _TAPE.active = prev


class Node:
    """One recorded operation: op name and (parent, backward-rule) edges."""

    __slots__ = ("index", "op", "edges")

    def __init__(self, op: str, edges: tuple) -> None:
        self.index = _TAPE.next_index()
        self.op = op
        self.edges = edges  # tuple of (Node, Callable[[Tensor], Tensor])


class Tensor:
    """A dense float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "node", "__weakref__")

    def __init__(self, data, node: Node | None = None) -> None:
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.node = node
        _ALLOC._add(arr.nbytes)

    def __del__(self) -> None:
        try:
            _ALLOC._remove(self.data.nbytes)
        except Exception:
            pass

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A tensor sharing this value but cut from the tape."""
        return Tensor(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def is_leaf(self) -> bool:
        return self.node is not None and not self.node.edges

    def __repr__(self) -> str:
        tag = "" if self.node is None else f", op={self.node.op!r}"
        return f"Tensor({self.data!r}{tag})"

    # arithmetic sugar; scalars are wrapped as rank-0 constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def create(shape: Sequence[int], data: Sequence[float], requires_grad: bool = False) -> Tensor:
    """Build a tensor from a flat row-major buffer.

    Zero-size shapes are rejected; a rank-0 shape ``()`` denotes a scalar.
    """
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ValueError(f"zero- or negative-size dimension in shape {shape}")
    flat = np.asarray(list(data), dtype=np.float64)
    n = math.prod(shape) if shape else 1
    if flat.size != n:
        raise ValueError(f"shape {shape} needs {n} values, got {flat.size}")
    t = Tensor(flat.reshape(shape))
    if requires_grad:
        t.node = Node("leaf", ())
    return t


def leaf(data) -> Tensor:
    """Wrap an array as a differentiable leaf."""
    t = Tensor(np.array(data, dtype=np.float64))
    t.node = Node("leaf", ())
    return t


def constant(data) -> Tensor:
    """Wrap an array as a non-recorded constant."""
    return Tensor(np.asarray(data, dtype=np.float64))


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros_like(t.data))


def _record(op: str, out_data: np.ndarray, parents: Iterable[tuple[Tensor, Callable]]) -> Tensor:
    if not _TAPE.active:
        return Tensor(out_data)
    edges = tuple((t.node, fn) for t, fn in parents if t.node is not None)
    if not edges:
        return Tensor(out_data)
    return Tensor(out_data, Node(op, edges))


def _reduce_to(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Collapse a cotangent onto a rank-0 operand's shape if needed."""
    if g.shape == shape:
        return g
    if shape == ():
        return tensor_sum(g)
    raise AssertionError(f"cannot reduce gradient of shape {g.shape} to {shape}")


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ValueError(
            f"{op}: shapes {a.shape} and {b.shape} differ and neither operand is a scalar"
        )


# ---------------------------------------------------------------------------
# elementwise operations


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "add")
    out = _record(
        "add",
        a.data + b.data,
        [(a, lambda g: _reduce_to(g, a.shape)), (b, lambda g: _reduce_to(g, b.shape))],
    )
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "sub")
    return _record(
        "sub",
        a.data - b.data,
        [
            (a, lambda g: _reduce_to(g, a.shape)),
            (b, lambda g: _reduce_to(neg(g), b.shape)),
        ],
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "mul")
    return _record(
        "mul",
        a.data * b.data,
        [
            (a, lambda g: _reduce_to(mul(g, b), a.shape)),
            (b, lambda g: _reduce_to(mul(g, a), b.shape)),
        ],
    )


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _record("neg", -a.data, [(a, lambda g: neg(g))])


def relu(a) -> Tensor:
    a = _as_tensor(a)
    # subgradient at exactly 0 is taken as 0
    mask = Tensor((a.data > 0.0).astype(np.float64))
    return _record("relu", np.maximum(a.data, 0.0), [(a, lambda g: mul(g, mask))])


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.tanh(a.data))

    def back(g: Tensor) -> Tensor:
        return sub(g, mul(g, mul(out, out)))

    if _TAPE.active and a.node is not None:
        out.node = Node("tanh", ((a.node, back),))
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    val = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(val)

    def back(g: Tensor) -> Tensor:
        return mul(g, mul(out, sub(constant(1.0), out)))

    if _TAPE.active and a.node is not None:
        out.node = Node("sigmoid", ((a.node, back),))
    return out


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.exp(a.data))
    if _TAPE.active and a.node is not None:
        out.node = Node("exp", ((a.node, lambda g: mul(g, out)),))
    return out


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise NumericalError("log of non-positive entry")
    return _record("log", np.log(a.data), [(a, lambda g: mul(g, recip(a)))])


def recip(a) -> Tensor:
    a = _as_tensor(a)
    val = 1.0 / a.data
    if not np.all(np.isfinite(val)):
        raise NumericalError("reciprocal of zero entry")
    out = Tensor(val)
    if _TAPE.active and a.node is not None:
        out.node = Node("recip", ((a.node, lambda g: neg(mul(g, mul(out, out)))),))
    return out


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
}


def elementwise(kind: str, *operands) -> Tensor:
    """Kind-dispatched entry point over the elementwise op table."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return fn(*operands)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul requires rank-2 operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner-dimension mismatch: {a.shape} @ {b.shape}")
    return _record(
        "matmul",
        a.data @ b.data,
        [
            (a, lambda g: matmul(g, transpose(b))),
            (b, lambda g: matmul(transpose(a), g)),
        ],
    )


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"transpose requires a rank-2 tensor, got shape {a.shape}")
    return _record("transpose", a.data.T.copy(), [(a, lambda g: transpose(g))])


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    if math.prod(shape) != a.size:
        raise ValueError(f"cannot reshape {a.shape} to {shape}")
    old = a.shape
    return _record(
        "reshape", a.data.reshape(shape).copy(), [(a, lambda g: reshape(g, old))]
    )


def expand(a, shape: tuple[int, ...]) -> Tensor:
    """Broadcast a rank-0 tensor to the given shape."""
    a = _as_tensor(a)
    if a.ndim != 0:
        raise ValueError("expand only broadcasts rank-0 tensors")
    return _record(
        "expand",
        np.full(shape, a.data, dtype=np.float64),
        [(a, lambda g: tensor_sum(g))],
    )


# ---------------------------------------------------------------------------
# reductions


def tensor_sum(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    return _record("sum", np.asarray(a.data.sum()), [(a, lambda g: expand(g, shape))])


def mean(a) -> Tensor:
    a = _as_tensor(a)
    return mul(tensor_sum(a), constant(1.0 / a.size))


def dot(u, v) -> Tensor:
    u, v = _as_tensor(u), _as_tensor(v)
    if u.size != v.size:
        raise ValueError(f"dot length mismatch: {u.size} vs {v.size}")

    def back_u(g: Tensor) -> Tensor:
        out = mul(g, v)
        return out if out.shape == u.shape else reshape(out, u.shape)

    def back_v(g: Tensor) -> Tensor:
        out = mul(g, u)
        return out if out.shape == v.shape else reshape(out, v.shape)

    return _record(
        "dot",
        np.asarray(np.dot(u.data.ravel(), v.data.ravel())),
        [(u, back_u), (v, back_v)],
    )


def sqnorm(u) -> Tensor:
    u = _as_tensor(u)
    return dot(u, u)


_REDUCE = {"sum": tensor_sum, "mean": mean}


def reduce(kind: str, a) -> Tensor:
    try:
        fn = _REDUCE[kind]
    except KeyError:
        raise ValueError(f"unknown reduction {kind!r}") from None
    return fn(a)


# ---------------------------------------------------------------------------
# losses


def mse(predictions, targets) -> Tensor:
    p, t = _as_tensor(predictions), _as_tensor(targets)
    if p.shape != t.shape:
        raise ValueError(f"mse shape mismatch: {p.shape} vs {t.shape}")
    d = sub(p, t)
    return mean(mul(d, d))


def _int_labels(targets, n_rows: int) -> np.ndarray:
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    labels = t.reshape(-1)
    if labels.shape[0] != n_rows:
        raise ValueError(f"expected {n_rows} labels, got {labels.shape[0]}")
    out = labels.astype(np.int64)
    if np.any(out != labels):
        raise ValueError("class labels must be integers")
    return out


def softmax_cross_entropy_per_sample(logits, targets) -> Tensor:
    """Per-row cross entropy of softmax(logits) against integer labels, [N,1].

    Row maxima are subtracted as constants before exponentiation; this leaves
    the value and all derivatives unchanged while keeping exp in range.
    """
    x = _as_tensor(logits)
    if x.ndim != 2:
        raise ValueError(f"logits must be rank-2, got shape {x.shape}")
    n, c = x.shape
    labels = _int_labels(targets, n)
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"labels out of range for {c} classes")
    row_max = constant(np.broadcast_to(x.data.max(axis=1, keepdims=True), (n, c)).copy())
    ones_col = constant(np.ones((c, 1)))
    e = exp(sub(x, row_max))
    lse = add(log(matmul(e, ones_col)), constant(x.data.max(axis=1, keepdims=True)))
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    picked = matmul(mul(x, constant(onehot)), ones_col)
    return sub(lse, picked)


def softmax_cross_entropy(logits, targets) -> Tensor:
    return mean(softmax_cross_entropy_per_sample(logits, targets))


def weighted_softmax_cross_entropy(logits, targets, weights) -> Tensor:
    per = softmax_cross_entropy_per_sample(logits, targets)
    w = _as_tensor(weights)
    if w.size != per.shape[0]:
        raise ValueError(f"need one weight per sample: {w.size} vs {per.shape[0]}")
    if w.shape != per.shape:
        w = reshape(w, per.shape)
    return mean(mul(w, per))


_LOSS = {
    "mse": mse,
    "softmax_cross_entropy": softmax_cross_entropy,
    "weighted_softmax_cross_entropy": weighted_softmax_cross_entropy,
}


def loss(kind: str, *args) -> Tensor:
    try:
        fn = _LOSS[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# differentiation


def _as_tensor_list(x) -> list[Tensor]:
    if isinstance(x, Tensor):
        return [x]
    return list(x)


def grad(
    output: Tensor,
    inputs,
    create_graph: bool = False,
    stop_at: Sequence[Tensor] = (),
) -> list[Tensor]:
    """Reverse-mode gradients of a recorded scalar w.r.t. each input.

    Inputs must be recorded (leaves or intermediates). Inputs the output does
    not depend on receive zero tensors. With ``create_graph`` the backward
    pass itself is recorded, enabling differentiation of the result.

    ``stop_at`` tensors act as cut points: cotangents are never propagated
    through them (an input listed there still receives its cotangent). This
    is how partial derivatives are taken while other quantities in the graph
    stay fixed.
    """
    single = isinstance(inputs, Tensor)
    inputs = _as_tensor_list(inputs)
    if output.node is None:
        raise ValueError("grad: output is not recorded on the tape")
    if output.size != 1:
        raise ValueError(f"grad: output must be scalar, got shape {output.shape}")
    for t in inputs:
        if t.node is None:
            raise ValueError("grad: every input must be recorded on the tape")
    input_nodes = {t.node for t in inputs}
    stop_nodes = {t.node for t in stop_at if t.node is not None} - input_nodes
    blocked = {t.node for t in stop_at if t.node is not None}

    # ancestors of the output, by parent links (cut points not expanded)
    seen: set[Node] = {output.node}
    stack = [output.node]
    while stack:
        node = stack.pop()
        if node in blocked:
            continue
        for parent, _ in node.edges:
            if parent not in seen:
                seen.add(parent)
                stack.append(parent)

    # restrict the sweep to nodes from which some input is reachable
    needed: dict[Node, bool] = {}
    for root in seen:
        if root in needed:
            continue
        walk = [(root, False)]
        while walk:
            node, expanded = walk.pop()
            if node in needed:
                continue
            if node in input_nodes:
                needed[node] = True
                continue
            if node in stop_nodes:
                needed[node] = False
                continue
            if not expanded:
                walk.append((node, True))
                walk.extend((p, False) for p, _ in node.edges if p not in needed)
            else:
                needed[node] = any(needed.get(p, False) for p, _ in node.edges)

    cotangents: dict[Node, Tensor] = {output.node: Tensor(np.ones_like(output.data))}
    results: dict[Node, Tensor] = {}
    ctx = recording_paused() if not create_graph else _noop_context()
    with ctx:
        for node in sorted(seen, key=lambda n: n.index, reverse=True):
            g = cotangents.pop(node, None)
            if g is None or not needed.get(node, False):
                continue
            if node in input_nodes:
                results[node] = g
            if node in blocked:
                continue
            for parent, back in node.edges:
                if not needed.get(parent, False):
                    continue
                pg = back(g)
                prev = cotangents.get(parent)
                cotangents[parent] = pg if prev is None else add(prev, pg)

    out = [results.get(t.node) or zeros_like(t) for t in inputs]
    return out[0] if single else out


@contextmanager
def _noop_context():
    yield


def hvp(output: Tensor, params, v, create_graph: bool = False):
    """Hessian-vector product via tape-on-tape double backward.

    Computes ``(d^2 output / d params^2) . v`` where ``v`` matches the
    parameter list element-wise.
    """
    single = isinstance(params, Tensor)
    params = _as_tensor_list(params)
    vs = _as_tensor_list(v)
    _check_matching(params, vs, "hvp")
    g = grad(output, params, create_graph=True)
    s = _contract(g, vs)
    if s.node is None:
        out = [zeros_like(p) for p in params]
    else:
        out = grad(s, params, create_graph=create_graph)
    return out[0] if single else out


def cross_vjp(output: Tensor, w_params, lambda_params, u, create_graph: bool = False):
    """Mixed second-order contraction ``u^T (d^2 output / d lambda d w)``.

    Returns tensors shaped like ``lambda_params``.
    """
    single = isinstance(lambda_params, Tensor)
    w = _as_tensor_list(w_params)
    lam = _as_tensor_list(lambda_params)
    us = _as_tensor_list(u)
    _check_matching(w, us, "cross_vjp")
    g = grad(output, w, create_graph=True)
    s = _contract(g, us)
    if s.node is None:
        out = [zeros_like(p) for p in lam]
    else:
        out = grad(s, lam, create_graph=create_graph)
    return out[0] if single else out


def _check_matching(params: list[Tensor], vs: list[Tensor], op: str) -> None:
    if len(params) != len(vs):
        raise ValueError(f"{op}: {len(vs)} vectors for {len(params)} parameters")
    for p, v in zip(params, vs):
        if p.shape != v.shape:
            raise ValueError(f"{op}: vector shape {v.shape} does not match {p.shape}")


def _contract(gs: list[Tensor], vs: list[Tensor]) -> Tensor:
    total = None
    for g, v in zip(gs, vs):
        term = dot(g, v.detach() if v.node is not None else v)
        total = term if total is None else add(total, term)
    return total


# ---------------------------------------------------------------------------
# flat-vector helpers (parameter lists as one concatenated vector)


def flatten_tensors(ts: Sequence[Tensor]) -> np.ndarray:
    return np.concatenate([t.data.ravel() for t in ts])


def unflatten_array(flat: np.ndarray, like: Sequence[Tensor]) -> list[np.ndarray]:
    out = []
    offset = 0
    for t in like:
        n = t.size
        out.append(flat[offset : offset + n].reshape(t.shape))
        offset += n
    return out
