"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation that touches a tensor requiring gradients records a node
(op name, parents, backward closure). ``Tensor.backward`` walks the graph in
reverse topological order, visiting each node once.

Only scalar broadcasting is supported: binary ops take either equal shapes
or one operand of size 1.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    """Raised when an op is evaluated outside its domain (e.g. log of x <= 0)."""

    def __init__(self, message: str, index: tuple[int, ...] | None = None):
        super().__init__(message)
        self.index = index


# Active kink recorder (see `kink_signature`). None when not recording.
_kink_log: list[bytes] | None = None
_grad_enabled = True


@contextmanager
def no_grad():
    """Evaluate without recording graph nodes."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _record_kink(mask: np.ndarray) -> None:
    if _kink_log is not None:
        _kink_log.append(np.packbits(np.asarray(mask, dtype=bool).ravel()).tobytes())


@contextmanager
def kink_signature():
    """Collect the branch pattern of every piecewise op evaluated inside.

    relu masks, |x| signs, maxpool argmax choices and log clamps are appended
    to the yielded list. Two evaluations with equal lists lie on the same
    smooth piece of the function.
    """
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_op", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._op: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- graph construction -------------------------------------------------

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str,
              backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> "Tensor":
        """Wrap ``data`` as the output of ``op``.

        ``backward(g)`` receives the upstream gradient and returns one gradient
        per parent (``None`` where the parent needs none).
        """
        out = cls.__new__(cls)
        out.data = data if data.dtype == np.float64 else data.astype(np.float64)
        out.grad = None
        out.name = None
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._op = op
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._op = None
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return detach(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return abs_(self)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean(self)

    # -- backward -----------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every reachable t."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward called on a tensor that does not require grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        # Upstream grads for this pass live here, so earlier .grad values do
        # not leak into propagation when backward is called repeatedly.
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node))
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # gradient of a size-1 operand broadcast against a full tensor
    if g.shape == shape:
        return g
    return np.full(shape, g.sum())


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b), "add",
                        lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b), "sub",
                        lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._make(ad * bd, (a, b), "mul",
                        lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)))


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._make(a.data * c, (a,), "scalar_mul", lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    # derivative at exactly 0 is taken as 0
    mask = a.data > 0
    _record_kink(mask)
    return Tensor._make(np.maximum(a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), "exp", lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    bad = ~(a.data > 0)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DomainError(f"log of non-positive value {a.data[idx]!r} at index {idx}", idx)
    ad = a.data
    return Tensor._make(np.log(ad), (a,), "log", lambda g: (g / ad,))


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    _record_kink(sign > 0)
    _record_kink(sign < 0)
    return Tensor._make(np.abs(a.data), (a,), "abs", lambda g: (g * sign,))


def sum_(a: Tensor) -> Tensor:
    if a.size == 0:
        raise ShapeError("sum of empty tensor")
    shape = a.shape
    return Tensor._make(np.array(a.data.sum()), (a,), "sum",
                        lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    if a.size == 0:
        raise ShapeError("mean of empty tensor")
    shape, n = a.shape, a.size
    return Tensor._make(np.array(a.data.sum() / n), (a,), "mean",
                        lambda g: (np.full(shape, float(g) / n),))


def detach(a: Tensor) -> Tensor:
    """Same values, cut from the graph."""
    return Tensor(a.data.copy())


def elementwise(op: str, *inputs):
    """Dispatch by name: add, sub, mul, scalar-mul, relu, exp, log, abs."""
    table = {
        "add": add, "sub": sub, "mul": mul, "scalar-mul": scalar_mul,
        "relu": relu, "exp": exp, "log": log, "abs": abs_,
    }
    try:
        fn = table[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*inputs)


def reduce(op: str, a: Tensor) -> Tensor:
    if op == "sum":
        return sum_(a)
    if op == "mean":
        return mean(a)
    raise ValueError(f"unknown reduction {op!r}")


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# finite-difference gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    n_excluded: int
    worst: tuple[int, tuple[int, ...]] | None = None
    errors: list[float] = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.max_rel_error <= self.tol


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
               tol: float = 1e-4, n_samples: int | None = None,
               rng: np.random.Generator | None = None,
               floor: float = 1e-7) -> GradCheckReport:
    """Compare autodiff gradients of ``f()`` with central differences.

    ``f`` takes no arguments and must read ``params`` (mutated in place here).
    With ``n_samples`` set, that many entries are drawn uniformly from all
    parameter entries; otherwise every entry is checked.

    Entries whose ±h evaluations change the branch pattern of a relu, abs,
    maxpool or log clamp (see `kink_signature`) sit on a nondifferentiable
    point and are excluded; a replacement entry is drawn when sampling.

    The relative error is ``|a - n| / max(|a|, |n|, floor * max(1, |f|))``;
    the floor keeps entries with near-zero gradient from reporting
    cancellation noise as error.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = list(params)
    for p in params:
        p.zero_grad()
    with kink_signature() as base_sig:
        out = f()
    f0 = out.item()
    if not np.isfinite(f0):
        raise FloatingPointError("non-finite function value at base point")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()
    for a in analytic:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite analytic gradient")
    base_sig = list(base_sig)
    scale = floor * max(1.0, abs(f0))

    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    if n_samples is None:
        candidates: Iterable[int] = range(total)
        budget = total
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        candidates = iter(rng.permutation(total))
        budget = min(n_samples, total)

    errors: list[float] = []
    worst = None
    excluded = 0
    worst_err = 0.0
    for flat in candidates:
        if len(errors) >= budget:
            break
        pi = int(np.searchsorted(offsets, flat, side="right") - 1)
        p = params[pi]
        idx = np.unravel_index(int(flat - offsets[pi]), p.shape)
        orig = p.data[idx]
        vals = []
        same_piece = True
        for step in (h, -h):
            p.data[idx] = orig + step
            with kink_signature() as sig:
                v = f().item()
            if sig != base_sig:
                same_piece = False
            vals.append(v)
        p.data[idx] = orig
        if not all(np.isfinite(vals)):
            raise FloatingPointError(f"non-finite value perturbing param {pi} at {idx}")
        if not same_piece:
            excluded += 1
            continue
        numeric = (vals[0] - vals[1]) / (2 * h)
        a = analytic[pi][idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), scale)
        errors.append(err)
        if err >= worst_err:
            worst_err, worst = err, (pi, tuple(int(i) for i in idx))
    return GradCheckReport(max(errors, default=float("nan")), tol, len(errors), excluded,
                           worst, errors)
