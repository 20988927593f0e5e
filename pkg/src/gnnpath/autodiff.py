"""Small reverse-mode autodiff over dense float64 numpy arrays.

Every op builds a new :class:`Tensor` that remembers its parents and a
backward rule. :func:`backward` walks the recorded graph in reverse
topological order and accumulates gradients into leaf parameters.

There is no broadcasting: binary ops require equal shapes and callers expand
explicitly with :func:`expand_rows` / :func:`expand_cols`.
"""

from __future__ import annotations

import os
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

# NaN/Inf checks on every forward op; also enabled with GNNPATH_DEBUG=1.
DEBUG = os.environ.get("GNNPATH_DEBUG", "") not in ("", "0")


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An op was called outside its preconditions."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar
    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return hadamard(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if DEBUG and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise FloatingPointError("non-finite value produced from finite inputs")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        return g @ B.T, A.T @ g

    return _make(A @ B, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {old} -> {shape}") from exc
    return _make(data, (a,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "hadamard")
    A, B = a.data, b.data
    return _make(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def log(a: Tensor) -> Tensor:
    A = a.data
    return _make(np.log(A), (a,), lambda g: (g / A,))


def elementwise(op: str, a: Tensor, b: Tensor | float | None = None) -> Tensor:
    """Dispatch by name: ``add``, ``hadamard``, ``relu``, ``tanh`` or ``scale``."""
    if op == "add":
        return add(a, b)
    if op == "hadamard":
        return hadamard(a, b)
    if op == "relu":
        return relu(a)
    if op == "tanh":
        return tanh(a)
    if op == "scale":
        return scale(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------- reductions / indexing


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def pick(a: Tensor, index) -> Tensor:
    """Select a single element ``a[index]`` as a scalar tensor."""
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[index] = g
        return (out,)

    return _make(np.array(a.data[index]), (a,), bw)


def index_rows(a: Tensor, idx: Sequence[int] | np.ndarray) -> Tensor:
    """Gather rows ``a[idx]`` (repeats allowed); backward scatters with add."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"index_rows: index out of range for {a.shape[0]} rows")
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), bw)


def expand_rows(a: Tensor, n: int) -> Tensor:
    """Stack a vector of width K into an ``n x K`` matrix."""
    if a.data.ndim != 1:
        raise ShapeError(f"expand_rows: expected a vector, got {a.shape}")
    return _make(np.tile(a.data, (n, 1)), (a,), lambda g: (g.sum(axis=0),))


def expand_cols(a: Tensor, k: int) -> Tensor:
    """Repeat a length-n vector across ``k`` columns, giving ``n x k``."""
    if a.data.ndim != 1:
        raise ShapeError(f"expand_cols: expected a vector, got {a.shape}")
    return _make(np.repeat(a.data[:, None], k, axis=1), (a,), lambda g: (g.sum(axis=1),))


class Segments:
    """Flattened form of a list of index groups.

    ``idx`` concatenates the groups in order and ``seg`` gives the group id of
    each entry. Indices inside a group are summed in the order given, so
    callers pass ascending lists for reproducible results.
    """

    __slots__ = ("idx", "seg", "n_groups")

    def __init__(self, groups: Sequence[Sequence[int]]):
        lengths = [len(g) for g in groups]
        self.n_groups = len(groups)
        if sum(lengths):
            self.idx = np.concatenate([np.asarray(g, dtype=np.intp) for g in groups if len(g)])
        else:
            self.idx = np.zeros(0, dtype=np.intp)
        self.seg = np.repeat(np.arange(self.n_groups, dtype=np.intp), lengths)

    def check(self, n: int, op: str) -> None:
        if self.idx.size and (self.idx.min() < 0 or self.idx.max() >= n):
            raise IndexError(f"{op}: group index out of range for {n} rows")


def _as_segments(groups) -> Segments:
    return groups if isinstance(groups, Segments) else Segments(groups)


def gather_sum(messages: Tensor, groups) -> Tensor:
    """Row ``g`` of the result is the sum of ``messages[i]`` for ``i`` in group ``g``.

    Empty groups give a zero row. Accepts a list of index lists or a
    precomputed :class:`Segments`.
    """
    seg = _as_segments(groups)
    if messages.data.ndim != 2:
        raise ShapeError(f"gather_sum: expected a matrix, got {messages.shape}")
    seg.check(messages.shape[0], "gather_sum")
    n, k = messages.shape
    out = np.zeros((seg.n_groups, k))
    np.add.at(out, seg.seg, messages.data[seg.idx])

    def bw(g):
        gm = np.zeros((n, k))
        np.add.at(gm, seg.idx, g[seg.seg])
        return (gm,)

    return _make(out, (messages,), bw)


def segment_softmax(scores: Tensor, groups) -> Tensor:
    """Softmax of a score vector computed independently within each group.

    Positions outside every group come out as exactly 0. Each group is
    shifted by its own max before exponentiation. Groups must be disjoint.
    """
    seg = _as_segments(groups)
    if scores.data.ndim != 1:
        raise ShapeError(f"segment_softmax: expected a vector, got {scores.shape}")
    seg.check(scores.shape[0], "segment_softmax")
    x = scores.data[seg.idx]
    gmax = np.full(seg.n_groups, -np.inf)
    np.maximum.at(gmax, seg.seg, x)
    e = np.exp(x - gmax[seg.seg])
    gsum = np.zeros(seg.n_groups)
    np.add.at(gsum, seg.seg, e)
    y_sub = e / gsum[seg.seg]
    y = np.zeros(scores.shape[0])
    y[seg.idx] = y_sub

    def bw(g):
        g_sub = g[seg.idx]
        dot = np.zeros(seg.n_groups)
        np.add.at(dot, seg.seg, g_sub * y_sub)
        out = np.zeros(scores.shape[0])
        out[seg.idx] = y_sub * (g_sub - dot[seg.seg])
        return (out,)

    return _make(y, (scores,), bw)


def segment_log_softmax(scores: Tensor, groups) -> Tensor:
    """Log of :func:`segment_softmax`, computed without taking log of a probability.

    Every position must belong to exactly one group.
    """
    seg = _as_segments(groups)
    n = scores.shape[0] if scores.data.ndim == 1 else -1
    if n < 0:
        raise ShapeError(f"segment_log_softmax: expected a vector, got {scores.shape}")
    seg.check(n, "segment_log_softmax")
    if seg.idx.size != n or np.unique(seg.idx).size != n:
        raise ValueError("segment_log_softmax: groups must partition the positions")
    x = scores.data[seg.idx]
    gmax = np.full(seg.n_groups, -np.inf)
    np.maximum.at(gmax, seg.seg, x)
    shifted = x - gmax[seg.seg]
    gsum = np.zeros(seg.n_groups)
    np.add.at(gsum, seg.seg, np.exp(shifted))
    y_sub = shifted - np.log(gsum)[seg.seg]
    p_sub = np.exp(y_sub)
    y = np.empty(n)
    y[seg.idx] = y_sub

    def bw(g):
        g_sub = g[seg.idx]
        total = np.zeros(seg.n_groups)
        np.add.at(total, seg.seg, g_sub)
        out = np.empty(n)
        out[seg.idx] = g_sub - p_sub * total[seg.seg]
        return (out,)

    return _make(y, (scores,), bw)


def masked_softmax(scores: Tensor, subset: Sequence[int]) -> Tensor:
    if len(subset) == 0:
        raise ValueError("masked_softmax: empty subset")
    return segment_softmax(scores, [sorted(subset)])


# ---------------------------------------------------------------- parameters and gradients


class ParameterSet(Mapping[str, Tensor]):
    """Named trainable tensors, iterated in sorted-name order."""

    def __init__(self, params: Mapping[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        self.version = 0
        for name, p in (params or {}).items():
            self[name] = p

    def __setitem__(self, name: str, value: Tensor) -> None:
        value.requires_grad = True
        value.name = name
        self._params[name] = value

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def __len__(self) -> int:
        return len(self._params)

    def count(self) -> int:
        """Total number of scalar parameters."""
        return sum(p.size for p in self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def copy(self) -> ParameterSet:
        return ParameterSet({k: Tensor(v.data.copy()) for k, v in self.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self[k].data.ravel() for k in self])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(self[k].data)) for k in self)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Gradients add onto existing ``.grad`` values until zeroed.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def sgd_step(params: ParameterSet, lr: float) -> None:
    """Gradient-descent step ``p -= lr * grad`` on every parameter."""
    for name in params:
        p = params[name]
        if p.grad is None:
            raise ContractError(f"sgd_step: parameter {name!r} has no gradient")
    for name in params:
        p = params[name]
        p.data = p.data - lr * p.grad
    params.version += 1


class Adam:
    """Adam optimizer over a :class:`ParameterSet`.

    Parameters without a gradient at step time are left untouched.
    """

    def __init__(self, params: ParameterSet, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(params[k].data) for k in params}
        self.v = {k: np.zeros_like(params[k].data) for k in params}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in self.params:
            p = self.params[k]
            if p.grad is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * p.grad
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * p.grad * p.grad
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        self.params.version += 1
