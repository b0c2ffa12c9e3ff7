"""Dense float64 tensors with reverse-mode automatic differentiation.

Every array carries a leading batch axis where convenient, but all gradient
rules are written for one of two broadcast patterns only: identical shapes,
or a 1-D bias vector broadcast over every leading axis.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

MASK_FILL = -1e30


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class GraphError(RuntimeError):
    """Backward called on a consumed graph or a non-scalar output."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"tensor {name!r} has non-finite elements")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs one element, tensor has {self.data.size}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def backward(self) -> None:
        backward(self)

    # Operator sugar; each routes to the module-level op.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return hadamard(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], grad_fn, name: str) -> Tensor:
    """Wrap an op output and, when tracking, hook it into the graph."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{name} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = name
    out._consumed = False
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = grad_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    # never in place: a stored gradient may alias a buffer handed to another tensor
    t.grad = g if t.grad is None else t.grad + g


def _bias_compatible(a: np.ndarray, b: np.ndarray, op: str) -> bool:
    """True when b broadcasts as a bias vector over a; raise on anything else."""
    if a.shape == b.shape:
        return False
    if b.ndim == 1 and a.shape[-1] == b.shape[0]:
        return True
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible")


def _reduce_to_bias(g: np.ndarray, n: int) -> np.ndarray:
    return g.reshape(-1, n).sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    bias = _bias_compatible(a.data, b.data, "add")

    def grad_fn(g):
        _accumulate(a, g)
        _accumulate(b, _reduce_to_bias(g, b.shape[0]) if bias else g)

    return _result(a.data + b.data, (a, b), grad_fn, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    bias = _bias_compatible(a.data, b.data, "sub")

    def grad_fn(g):
        _accumulate(a, g)
        _accumulate(b, -(_reduce_to_bias(g, b.shape[0]) if bias else g))

    return _result(a.data - b.data, (a, b), grad_fn, "sub")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    bias = _bias_compatible(a.data, b.data, "hadamard")

    def grad_fn(g):
        _accumulate(a, g * b.data)
        gb = g * a.data
        _accumulate(b, _reduce_to_bias(gb, b.shape[0]) if bias else gb)

    return _result(a.data * b.data, (a, b), grad_fn, "hadamard")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(x.data * c, (x,), lambda g: _accumulate(x, g * c), "scale")


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _result(x.data + float(c), (x,), lambda g: _accumulate(x, g), "add_scalar")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def grad_fn(g):
        _accumulate(x, g * out * (1.0 - out))

    return _result(out, (x,), grad_fn, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: _accumulate(x, g * (1.0 - out * out)), "tanh")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _result(np.where(pos, x.data, 0.0), (x,), lambda g: _accumulate(x, g * pos), "relu")


def absolute(x: Tensor) -> Tensor:
    # subgradient 0 at exact zero
    sign = np.sign(x.data)
    return _result(np.abs(x.data), (x,), lambda g: _accumulate(x, g * sign), "abs")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes. ``b`` is either a plain matrix shared
    across the batch or carries the same leading axes as ``a``.
    """
    A, B = a.data, b.data
    if A.ndim < 2 or B.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {A.shape} and {B.shape}")
    if A.shape[-1] != B.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {A.shape} @ {B.shape}")
    if B.ndim > 2 and B.shape[:-2] != A.shape[:-2]:
        raise DimensionError(f"matmul batch extents differ: {A.shape} @ {B.shape}")
    shared = B.ndim == 2

    def grad_fn(g):
        if a.requires_grad:
            _accumulate(a, g @ np.swapaxes(B, -1, -2))
        if b.requires_grad:
            if shared:
                _accumulate(b, A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
            else:
                _accumulate(b, np.swapaxes(A, -1, -2) @ g)

    return _result(A @ B, (a, b), grad_fn, "matmul")


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` with ``b`` broadcast over rows."""
    out = matmul(x, W)
    return out if b is None else add(out, b)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim < 2:
        raise DimensionError("transpose needs at least two axes")
    return _result(
        np.swapaxes(x.data, -1, -2), (x,), lambda g: _accumulate(x, np.swapaxes(g, -1, -2)), "transpose"
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: _accumulate(x, g.reshape(src)), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    arrs = [t.data for t in tensors]
    ref = arrs[0]
    ax = axis % ref.ndim
    for arr in arrs[1:]:
        if arr.ndim != ref.ndim or any(
            arr.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise DimensionError(f"concat: shapes {[a.shape for a in arrs]} disagree off axis {axis}")
    bounds = np.cumsum([0] + [arr.shape[ax] for arr in arrs])

    def grad_fn(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

    return _result(np.concatenate(arrs, axis=ax), tuple(tensors), grad_fn, "concat")


def concat_cols(*tensors: Tensor) -> Tensor:
    return concat(tensors, axis=-1)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ax = axis % x.data.ndim
    idx = [slice(None)] * x.data.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        _accumulate(x, full)

    return _result(x.data[idx], (x,), grad_fn, "slice")


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    return slice_axis(x, -1, start, stop)


def select(x: Tensor, axis: int, index: int) -> Tensor:
    """Take one index along ``axis``, dropping that axis."""
    ax = axis % x.data.ndim
    idx = [slice(None)] * x.data.ndim
    idx[ax] = index
    idx = tuple(idx)

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        _accumulate(x, full)

    return _result(x.data[idx], (x,), grad_fn, "select")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    arrs = [t.data for t in tensors]
    if any(a.shape != arrs[0].shape for a in arrs):
        raise DimensionError("stack: all operands must share one shape")
    out = np.stack(arrs, axis=axis)
    ax = axis % out.ndim

    def grad_fn(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accumulate(t, np.take(g, i, axis=ax))

    return _result(out, tuple(tensors), grad_fn, "stack")


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Per-batch row gather: ``out[b, t] = x[b, index[b, t]]`` for x of shape (B, T, d)."""
    index = np.asarray(index, dtype=np.int64)
    if x.data.ndim != 3 or index.shape != x.shape[:2]:
        raise DimensionError(f"gather_rows: index {index.shape} does not match {x.shape}")
    rows = np.arange(x.shape[0])[:, None]

    def grad_fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (rows, index), g)
        _accumulate(x, full)

    return _result(x.data[rows, index], (x,), grad_fn, "gather_rows")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(
        np.array([x.data.sum()]), (x,), lambda g: _accumulate(x, np.full(shape, g[0])), "sum"
    )


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along the last axis with per-row max subtraction.

    ``mask`` (broadcastable to x, True = keep) adds ``MASK_FILL`` to dropped
    positions before normalizing, so they receive exactly zero weight.
    """
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not np.all(mask.any(axis=-1)):
            raise DimensionError("softmax_rows: a row has every position masked")
        z = np.where(mask, z, z + MASK_FILL)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        _accumulate(x, out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return _result(out, (x,), grad_fn, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row (last axis) to zero mean, unit variance, then scale and shift."""
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise DimensionError(f"layer_norm: gamma/beta must have shape ({n},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def grad_fn(g):
        if gamma.requires_grad:
            _accumulate(gamma, _reduce_to_bias(g * xhat, n))
        if beta.requires_grad:
            _accumulate(beta, _reduce_to_bias(g, n))
        if x.requires_grad:
            gx = g * gamma.data
            _accumulate(
                x,
                inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)),
            )

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), grad_fn, "layer_norm")


def graph_order(root: Tensor) -> list[Tensor]:
    """Topological order of the traced graph ending at ``root`` (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tracked tensor feeding ``loss``.

    The trace is consumed: closures are released afterwards and a second call
    raises :class:`GraphError`.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed by an earlier backward pass")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor requiring grad")
    order = graph_order(loss)
    interior = [node for node in order if node._backward is not None]
    loss.grad = np.ones_like(loss.data)
    for node in reversed(interior):
        if node.grad is not None:
            node._backward(node.grad)
    for node in interior:
        node._consumed = True
        node._backward = None
        node._parents = ()
        if node is not loss:
            node.grad = None


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients with central differences."""

    passed: bool
    max_rel_error: float
    rtol: float
    per_tensor: dict[str, float] = field(default_factory=dict)

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} max_rel_error={self.max_rel_error:.3e} (rtol {self.rtol:g})"


def finite_diff_check(
    f: Callable[[], Tensor] | Callable[[Tensor], Tensor],
    x: Tensor | Iterable[Tensor] | dict[str, Tensor],
    step: float = 1e-5,
    rtol: float = 1e-4,
    abs_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare backward() gradients against central differences.

    ``x`` is one tensor (``f`` is called as ``f(x)``) or a collection of
    tensors that ``f()`` closes over. The relative error of each element is
    ``|a - n| / max(|a| + |n|, abs_floor)``.
    """
    if not step > 0:
        raise ValueError(f"finite-difference step must be positive, got {step}")
    if isinstance(x, Tensor):
        named = {x.name or "x": x}
        call = lambda: f(x)  # noqa: E731
    else:
        named = dict(x) if isinstance(x, dict) else {t.name or f"x{i}": t for i, t in enumerate(x)}
        call = f

    def value() -> float:
        with no_grad():
            return call().item()

    base = value()
    if value() != base:
        raise ValueError("function is not deterministic: repeated evaluation differs")

    for t in named.values():
        t.requires_grad = True
        t.zero_grad()
    backward(call())
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in named.items()}

    per_tensor = {}
    for k, t in named.items():
        t.data = np.ascontiguousarray(t.data)  # so the flat view writes through
        flat = t.data.reshape(-1)
        num = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = value()
            flat[i] = orig - step
            lo = value()
            flat[i] = orig
            num[i] = (hi - lo) / (2 * step)
        a = analytic[k].reshape(-1)
        rel = np.abs(a - num) / np.maximum(np.abs(a) + np.abs(num), abs_floor)
        per_tensor[k] = float(rel.max()) if rel.size else 0.0
    worst = max(per_tensor.values()) if per_tensor else 0.0
    return GradCheckReport(worst <= rtol, worst, rtol, per_tensor)
