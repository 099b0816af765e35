"""Small tape-based reverse-mode differentiation over numpy arrays.

Every operation returns a new :class:`Tensor` holding its forward value and a
closure that pushes an upstream gradient to its parents.  The graph is rebuilt
for every evaluation, so there is no global state; independent graphs can be
evaluated in parallel as long as they do not share a :class:`ParameterSet`.

Supported primitives: add, subtract, multiply, divide by a constant, matrix
multiply, tanh, relu / hinge, sigmoid, stabilised sqrt, sum, mean, row gather
and column-wise concatenation.
"""

from __future__ import annotations

import json
from collections.abc import Callable, Iterator, Mapping
from pathlib import Path

import numpy as np

SQRT_EPS = 1e-12
CHECKPOINT_FORMAT = "bwsembed-params/1"


class NonFiniteError(FloatingPointError):
    """Raised when a node of the graph produces NaN or infinity."""

    def __init__(self, op: str, where: str = "forward"):
        super().__init__(f"non-finite value in {where} pass at node '{op}'")
        self.op = op


def _check(value: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(op)
    return value


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("value", "parents", "backward_fn", "op")
    # make ndarray <op> Tensor dispatch to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, parents: tuple[Tensor, ...] = (), backward_fn=None, op: str = "const"):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by constants")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def backward(self) -> dict[int, np.ndarray]:
        """Propagate d(self)/d(node) to every ancestor; returns grads keyed by ``id(node)``."""
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None:
                    continue
                if not np.all(np.isfinite(pg)):
                    raise NonFiniteError(node.op, "backward")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return grads


def _topological(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(np.array(x, dtype=np.float64))


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _check(a.value + b.value, "add")
    sa, sb = a.shape, b.shape
    return Tensor(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _check(a.value - b.value, "sub")
    sa, sb = a.shape, b.shape
    return Tensor(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = _check(av * bv, "mul")
    return Tensor(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
        "mul",
    )


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = _check(np.tanh(x.value), "tanh")
    return Tensor(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    v = _check(x.value, "sigmoid")
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    s = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def relu(x) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is 0."""
    x = as_tensor(x)
    mask = _check(x.value, "relu") > 0
    return Tensor(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


hinge = relu


def sqrt(x) -> Tensor:
    """Exact sqrt(x) forward; the derivative uses sqrt(x + 1e-12) so it stays finite at 0."""
    x = as_tensor(x)
    if np.any(x.value < 0):
        raise NonFiniteError("sqrt")
    r = np.sqrt(x.value)
    safe = np.sqrt(x.value + SQRT_EPS)
    return Tensor(r, (x,), lambda g: (g * 0.5 / safe,), "sqrt")


# -- linear algebra and reductions -----------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = _check(av @ bv, "matmul")

    def backward(g):
        if bv.ndim == 1:
            ga = np.outer(g, bv) if av.ndim == 2 else g * bv
            gb = av.T @ g if av.ndim == 2 else g * av
        elif av.ndim == 1:
            ga = bv @ g
            gb = np.outer(av, g)
        else:
            ga = g @ bv.T
            gb = av.T @ g
        return ga, gb

    return Tensor(out, (a, b), backward, "matmul")


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape
    out = x.value.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor(out, (x,), backward, "sum")


def mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    n = x.value.size if axis is None else x.shape[axis]
    return sum(x, axis) / n


def take(x, idx) -> Tensor:
    """Gather along the first axis (``x[idx]``); gradients scatter-add back."""
    x = as_tensor(x)
    idx = np.asarray(idx)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(x.value[idx], (x,), backward, "take")


def concat(xs, axis: int = -1) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([x.value for x in xs], axis=axis)
    return Tensor(out, xs, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


# -- parameters ------------------------------------------------------------


class ParameterSet(Mapping):
    """Named float64 arrays with a stable insertion order.

    Shapes are fixed once a name is registered; assigning an array of another
    shape to an existing name raises ``ValueError``.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        for name, value in (arrays or {}).items():
            self[name] = value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value) -> None:
        value = np.array(value, dtype=np.float64)
        if name in self._arrays and self._arrays[name].shape != value.shape:
            raise ValueError(f"shape of '{name}' is fixed at {self._arrays[name].shape}, got {value.shape}")
        self._arrays[name] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}: {v.shape}" for k, v in self._arrays.items())
        return f"ParameterSet({inner})"

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._arrays.items()}

    def copy(self) -> ParameterSet:
        return ParameterSet({k: v.copy() for k, v in self._arrays.items()})

    def zeros_like(self) -> ParameterSet:
        return ParameterSet({k: np.zeros_like(v) for k, v in self._arrays.items()})

    def size(self) -> int:
        return int(np.sum([v.size for v in self._arrays.values()]))

    def flat(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._arrays.values()])

    def equals(self, other: ParameterSet) -> bool:
        return list(self) == list(other) and all(np.array_equal(self[k], other[k]) for k in self)


# ``Gradient`` has the same layout as the parameters it differentiates.
Gradient = ParameterSet


def evaluate_and_grad(
    loss_fn: Callable[[dict[str, Tensor]], Tensor], params: ParameterSet
) -> tuple[float, Gradient]:
    """Evaluate ``loss_fn`` on tensors wrapping ``params`` and differentiate it.

    ``loss_fn`` receives a dict of leaf tensors keyed like ``params`` and must
    return a scalar :class:`Tensor`.  Parameters that do not influence the
    loss receive a zero gradient.
    """
    leaves = {name: Tensor(value, op=f"param:{name}") for name, value in params.items()}
    out = loss_fn(leaves)
    if not isinstance(out, Tensor):
        raise TypeError("loss_fn must return a Tensor")
    _check(out.value, "loss")
    grads = out.backward()
    grad = ParameterSet()
    for name, leaf in leaves.items():
        g = grads.get(id(leaf))
        grad[name] = np.zeros_like(leaf.value) if g is None else g
    return float(out.value), grad


def forward(loss_fn: Callable[[dict[str, Tensor]], Tensor], params: ParameterSet) -> float:
    leaves = {name: Tensor(value, op=f"param:{name}") for name, value in params.items()}
    return float(loss_fn(leaves).value)


def finite_diff_check(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: ParameterSet,
    eps: float = 1e-5,
    grad: Gradient | None = None,
) -> float:
    """Largest relative error between ``grad`` and central differences.

    Each scalar parameter is perturbed by +/- ``eps``; the error on an entry is
    ``|a - b| / max(|a|, |b|, 1e-8)``.  ``grad`` defaults to the analytic
    gradient from :func:`evaluate_and_grad`.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if grad is None:
        _, grad = evaluate_and_grad(loss_fn, params)
    work = params.copy()
    worst = 0.0
    for name in work:
        arr = work[name]
        for i in np.ndindex(arr.shape):
            orig = arr[i]
            arr[i] = orig + eps
            up = forward(loss_fn, work)
            arr[i] = orig - eps
            down = forward(loss_fn, work)
            arr[i] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grad[name][i]
            err = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, err)
    return worst


# -- checkpoints -----------------------------------------------------------


def save_params(path: str | Path, params: ParameterSet) -> None:
    """Write a one-line JSON manifest followed by raw little-endian float64 data."""
    entries, offset = [], 0
    for name, value in params.items():
        entries.append({"name": name, "shape": list(value.shape), "offset": offset})
        offset += value.size
    header = {"format": CHECKPOINT_FORMAT, "dtype": "<f8", "entries": entries}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for value in params.values():
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def read_manifest(path: str | Path) -> dict[str, tuple[int, ...]]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a parameter checkpoint")
    return {e["name"]: tuple(e["shape"]) for e in header["entries"]}


def load_params(path: str | Path) -> ParameterSet:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a parameter checkpoint")
        data = np.frombuffer(fh.read(), dtype="<f8")
    params = ParameterSet()
    for e in header["entries"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        chunk = data[e["offset"] : e["offset"] + n]
        if chunk.size != n:
            raise ValueError(f"{path}: truncated data for '{e['name']}'")
        params[e["name"]] = chunk.reshape(e["shape"])
    return params
