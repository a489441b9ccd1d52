"""Truncated Taylor arithmetic in four coordinates.

A :class:`Jet` holds Taylor coefficients ``f_alpha = d^alpha f / alpha!`` of a
field at a point, for every multi-index ``alpha`` of total degree up to the
basis order (4 by default), optionally together with a nilpotent perturbation
parameter ``eps`` (``eps**2 == 0``).  The coefficient array may carry any
number of leading axes, so a whole tensor of jets, or a batch of points, is a
single ``Jet``.

Every jet also carries a *cap*: the highest degree whose coefficients are
exact.  Differentiation lowers the cap by one and products keep the smaller
cap, so the curvature pipeline ``g -> Gamma -> Riem -> grad Ric -> box Ric``
walks the cap from 4 down to 0 without ever reporting truncated garbage.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

NDIM = 4
DEFAULT_ORDER = 4


class JetError(ArithmeticError):
    pass


class ZeroConstantTerm(JetError):
    pass


class DomainError(JetError):
    pass


@dataclass(frozen=True)
class MultiIndex:
    exponents: tuple[int, int, int, int]
    eps: int = 0

    def __post_init__(self):
        if len(self.exponents) != NDIM or min(self.exponents) < 0:
            raise ValueError(f"bad exponents {self.exponents}")
        if self.eps not in (0, 1):
            raise ValueError("eps order must be 0 or 1")

    @property
    def degree(self) -> int:
        return sum(self.exponents)


class Basis:
    """Fixed enumeration of monomials plus product and shift tables."""

    def __init__(self, order: int, eps: bool):
        self.order = order
        self.eps = eps
        mono = []
        for d in range(order + 1):
            for e in itertools.product(range(d + 1), repeat=NDIM):
                if sum(e) == d:
                    mono.append(tuple(e))
        # degree-major, then reverse-lexicographic so (1,0,0,0) comes first
        mono.sort(key=lambda e: (sum(e), tuple(-x for x in e)))
        self.monomials = mono
        self.n_mono = len(mono)
        self.index = {e: i for i, e in enumerate(mono)}
        self.size = self.n_mono * (2 if eps else 1)
        self.degree = np.array([sum(e) for e in mono] * (2 if eps else 1))
        self.eps_of = np.repeat([0, 1] if eps else [0], self.n_mono)
        self._products: dict[int, tuple] = {}
        self._shifts: dict[int, tuple] = {}

    def multi_index(self, k: int) -> MultiIndex:
        return MultiIndex(self.monomials[k % self.n_mono], int(k >= self.n_mono))

    def position(self, exponents: Sequence[int], eps: int = 0) -> int:
        return self.index[tuple(exponents)] + eps * self.n_mono

    def product_table(self, cap: int):
        """Gather indices and reduceat segments for products exact to ``cap``."""
        tab = self._products.get(cap)
        if tab is not None:
            return tab
        I, J, K = [], [], []
        for i in range(self.size):
            ei, di = self.monomials[i % self.n_mono], self.degree[i]
            if di > cap:
                continue
            for j in range(self.size):
                if self.eps_of[i] + self.eps_of[j] > 1 or di + self.degree[j] > cap:
                    continue
                ej = self.monomials[j % self.n_mono]
                e = tuple(a + b for a, b in zip(ei, ej))
                I.append(i)
                J.append(j)
                K.append(self.position(e, self.eps_of[i] + self.eps_of[j]))
        order = np.lexsort((J, I, K))
        I = np.asarray(I)[order]
        J = np.asarray(J)[order]
        K = np.asarray(K)[order]
        targets, starts = np.unique(K, return_index=True)
        tab = (I, J, targets, starts)
        self._products[cap] = tab
        return tab

    def shift_table(self, axis: int):
        """Source indices and factors for d/dx^axis."""
        tab = self._shifts.get(axis)
        if tab is not None:
            return tab
        src = np.zeros(self.size, dtype=np.intp)
        fac = np.zeros(self.size)
        for k in range(self.size):
            e = list(self.monomials[k % self.n_mono])
            if sum(e) >= self.order:
                continue
            e[axis] += 1
            src[k] = self.position(e, self.eps_of[k])
            fac[k] = e[axis]
        self._shifts[axis] = (src, fac)
        return src, fac


@lru_cache(maxsize=None)
def basis(order: int = DEFAULT_ORDER, eps: bool = False) -> Basis:
    return Basis(order, eps)


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


class Jet:
    """Array of truncated Taylor expansions; last axis indexes the basis."""

    __slots__ = ("coeffs", "basis", "cap")
    __array_priority__ = 100

    def __init__(self, coeffs: np.ndarray, basis_: Basis, cap: int | None = None):
        self.coeffs = coeffs
        self.basis = basis_
        self.cap = basis_.order if cap is None else cap

    # construction -------------------------------------------------------
    @classmethod
    def constant(cls, value, order: int = DEFAULT_ORDER, eps: bool = False) -> "Jet":
        b = basis(order, eps)
        value = _as_array(value)
        c = np.zeros(value.shape + (b.size,))
        c[..., 0] = value
        return cls(c, b)

    @classmethod
    def zeros(cls, shape=(), order: int = DEFAULT_ORDER, eps: bool = False) -> "Jet":
        b = basis(order, eps)
        return cls(np.zeros(tuple(shape) + (b.size,)), b)

    # structure ----------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.coeffs.shape[:-1]

    @property
    def has_eps(self) -> bool:
        return self.basis.eps

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[..., 0]

    def __len__(self):
        return self.shape[0]

    def __getitem__(self, idx) -> "Jet":
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.coeffs[idx + (slice(None),)], self.basis, self.cap)

    def __repr__(self):
        return f"Jet(shape={self.shape}, order={self.basis.order}, eps={self.has_eps}, cap={self.cap})"

    def copy(self) -> "Jet":
        return Jet(self.coeffs.copy(), self.basis, self.cap)

    def coefficient(self, exponents: Sequence[int], eps: int = 0) -> np.ndarray:
        return self.coeffs[..., self.basis.position(exponents, eps)]

    def with_eps(self) -> "Jet":
        if self.has_eps:
            return self
        b = basis(self.basis.order, True)
        c = np.zeros(self.shape + (b.size,))
        c[..., : self.basis.size] = self.coeffs
        return Jet(c, b, self.cap)

    def base(self) -> "Jet":
        """The eps-free part."""
        b = basis(self.basis.order, False)
        return Jet(self.coeffs[..., : b.size].copy(), b, self.cap)

    def eps_part(self) -> "Jet":
        """Coefficient of eps, as an eps-free jet."""
        b = basis(self.basis.order, False)
        if not self.has_eps:
            return Jet(np.zeros(self.shape + (b.size,)), b, self.cap)
        return Jet(self.coeffs[..., b.size:].copy(), b, self.cap)

    def truncated(self, cap: int) -> "Jet":
        cap = min(cap, self.cap)
        c = self.coeffs.copy()
        c[..., self.basis.degree > cap] = 0.0
        return Jet(c, self.basis, cap)

    def reshape(self, *shape) -> "Jet":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Jet(self.coeffs.reshape(tuple(shape) + (self.basis.size,)), self.basis, self.cap)

    def swapaxes(self, a: int, b: int) -> "Jet":
        a = a if a >= 0 else a - 1
        b = b if b >= 0 else b - 1
        return Jet(np.swapaxes(self.coeffs, a, b), self.basis, self.cap)

    def sum(self, axis) -> "Jet":
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a if a >= 0 else a - 1 for a in axes)
        return Jet(self.coeffs.sum(axis=axes), self.basis, self.cap)

    def norm_scale(self) -> float:
        return float(np.max(np.abs(self.coeffs))) if self.coeffs.size else 0.0

    # arithmetic ---------------------------------------------------------
    def _coerce(self, other) -> tuple["Jet", "Jet"]:
        if not isinstance(other, Jet):
            other = Jet.constant(other, self.basis.order, self.has_eps)
            other.cap = self.basis.order
        if other.basis.order != self.basis.order:
            raise JetError("cannot mix jets of different orders")
        a, b = self, other
        if a.has_eps != b.has_eps:
            a, b = a.with_eps(), b.with_eps()
        return a, b

    def __add__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            c = self.coeffs.copy()
            c[..., 0] = c[..., 0] + _as_array(other)
            return Jet(c, self.basis, self.cap)
        a, b = self._coerce(other)
        return Jet(a.coeffs + b.coeffs, a.basis, min(a.cap, b.cap))

    __radd__ = __add__

    def __neg__(self) -> "Jet":
        return Jet(-self.coeffs, self.basis, self.cap)

    def __sub__(self, other) -> "Jet":
        return self + (-other)

    def __rsub__(self, other) -> "Jet":
        return (-self) + other

    def __mul__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            o = _as_array(other)
            return Jet(self.coeffs * o[..., None], self.basis, self.cap)
        a, b = self._coerce(other)
        return _product("...,...->...", a, b)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            o = _as_array(other)
            return Jet(self.coeffs / o[..., None], self.basis, self.cap)
        return self * reciprocal(other)

    def __rtruediv__(self, other) -> "Jet":
        return reciprocal(self) * other

    def __pow__(self, p) -> "Jet":
        if isinstance(p, (int, np.integer)) and p >= 0:
            out = Jet.constant(np.ones(self.shape), self.basis.order, self.has_eps)
            base = self
            n = int(p)
            while n:
                if n & 1:
                    out = out * base
                n >>= 1
                if n:
                    base = base * base
            if p == 0:
                out.cap = self.basis.order
            return out
        return jet_elementary("pow", self, float(p))

    # calculus -----------------------------------------------------------
    def partial(self, axis: int) -> "Jet":
        if self.cap <= 0:
            raise JetError("no derivative information left in jet")
        src, fac = self.basis.shift_table(axis)
        c = self.coeffs[..., src] * fac
        return Jet(c, self.basis, self.cap - 1).truncated(self.cap - 1)

    def grad(self) -> "Jet":
        """Stack of partials; the derivative index is appended last."""
        parts = [self.partial(a) for a in range(NDIM)]
        return stack(parts, axis=-1)


def stack(jets: Sequence[Jet], axis: int = 0) -> Jet:
    jets = list(jets)
    if any(j.has_eps for j in jets):
        jets = [j.with_eps() for j in jets]
    ax = axis if axis >= 0 else axis - 1
    return Jet(np.stack([j.coeffs for j in jets], axis=ax), jets[0].basis, min(j.cap for j in jets))


def _product(subscripts: str, a: Jet, b: Jet) -> Jet:
    cap = min(a.cap, b.cap)
    I, J, targets, starts = a.basis.product_table(cap)
    lhs, out = subscripts.split("->")
    sa, sb = lhs.split(",")
    ag = a.coeffs[..., I]
    bg = b.coeffs[..., J]
    if sa == "..." and sb == "..." and out == "...":
        prod = ag * bg
    else:
        prod = np.einsum(f"{sa}z,{sb}z->{out}z", ag, bg)
    red = np.add.reduceat(prod, starts, axis=-1)
    c = np.zeros(prod.shape[:-1] + (a.basis.size,))
    c[..., targets] = red
    return Jet(c, a.basis, cap)


def einsum(subscripts: str, a: Jet, b) -> Jet:
    """Two-operand einsum where every scalar product is a jet product.

    ``b`` may be a plain numpy array, in which case the operation is linear.
    Subscripts refer to the tensor axes only; use ``...`` for batch axes.
    """
    if not isinstance(b, Jet):
        lhs, out = subscripts.split("->")
        sa, sb = lhs.split(",")
        c = np.einsum(f"{sa}z,{sb}->{out}z", a.coeffs, _as_array(b))
        return Jet(c, a.basis, a.cap)
    a, b = a._coerce(b)
    return _product(subscripts, a, b)


def contract(subscripts: str, a: Jet) -> Jet:
    """Single-operand linear einsum (traces, transposes)."""
    lhs, out = subscripts.split("->")
    return Jet(np.einsum(f"{lhs}z->{out}z", a.coeffs), a.basis, a.cap)


# ---------------------------------------------------------------------------
# univariate composition


def _compose(a: Jet, derivs: Sequence[np.ndarray]) -> Jet:
    """sum_k derivs[k]/k! * (a - a0)^k, derivs evaluated at the constant term."""
    a0 = a.value
    u = a - a0
    nterms = a.basis.order + (2 if a.has_eps else 1)
    out = Jet.constant(derivs[0], a.basis.order, a.has_eps)
    out.cap = a.cap
    power = None
    for k in range(1, nterms):
        power = u if power is None else power * u
        out = out + power * (derivs[k] / math.factorial(k))
    return out


def _n_terms(a: Jet) -> int:
    return a.basis.order + (2 if a.has_eps else 1)


def reciprocal(b: Jet) -> Jet:
    b0 = b.value
    if np.any(b0 == 0):
        raise ZeroConstantTerm("division by a jet with zero constant term")
    n = _n_terms(b)
    derivs = [math.factorial(k) * (-1) ** k / b0 ** (k + 1) for k in range(n)]
    return _compose(b, derivs)


def _pow_derivs(a0: np.ndarray, p: float, n: int) -> list:
    out = []
    coef = 1.0
    for k in range(n):
        out.append(coef * a0 ** (p - k))
        coef *= p - k
    return out


def _series_from_derivative(a: Jet, f0: np.ndarray, dfun: Callable[[Jet], Jet]) -> Jet:
    """Compose a with f, given f(a0) and a jet-level formula for f'."""
    n = _n_terms(a)
    a0 = a.value
    flat = a0.reshape(-1)
    pts = np.zeros((flat.size, NDIM))
    pts[:, 0] = flat
    d = dfun(jet_seed(pts, 0, order=n - 1))
    derivs = [np.asarray(f0, dtype=float)]
    for k in range(n - 1):
        derivs.append((d.coefficient((k, 0, 0, 0)) * math.factorial(k)).reshape(a0.shape))
    return _compose(a, derivs)


def jet_elementary(kind: str, a: Jet, p: float | None = None) -> Jet:
    """Compose a univariate elementary function with a jet."""
    a0 = a.value
    n = _n_terms(a)
    if kind == "sqrt":
        if np.any(a0 <= 0):
            raise DomainError("sqrt needs a positive constant term")
        return _compose(a, _pow_derivs(a0, 0.5, n))
    if kind == "pow":
        if p is None:
            raise ValueError("pow needs an exponent")
        if float(p).is_integer() and p >= 0:
            return a ** int(p)
        if np.any(a0 <= 0) and not float(p).is_integer():
            raise DomainError("non-integer power needs a positive constant term")
        if np.any(a0 == 0):
            raise ZeroConstantTerm("negative power of a jet with zero constant term")
        return _compose(a, _pow_derivs(a0, float(p), n))
    if kind == "exp":
        e = np.exp(a0)
        return _compose(a, [e] * n)
    if kind in ("sin", "cos"):
        s, c = np.sin(a0), np.cos(a0)
        cyc = [s, c, -s, -c] if kind == "sin" else [c, -s, -c, s]
        return _compose(a, [cyc[k % 4] for k in range(n)])
    if kind == "log":
        if np.any(a0 <= 0):
            raise DomainError("log needs a positive constant term")
        derivs = [np.log(a0)] + [(-1) ** (k - 1) * math.factorial(k - 1) / a0 ** k for k in range(1, n)]
        return _compose(a, derivs)
    if kind == "atan":
        return _series_from_derivative(a, np.arctan(a0), lambda t: 1.0 / (1.0 + t * t))
    if kind == "acos":
        if np.any(np.abs(a0) >= 1):
            raise DomainError("acos needs |constant term| < 1")
        return _series_from_derivative(
            a, np.arccos(a0), lambda t: -jet_elementary("pow", 1.0 - t * t, -0.5))
    raise ValueError(f"unknown elementary function {kind!r}")


def sqrt(a: Jet) -> Jet:
    return jet_elementary("sqrt", a)


def exp(a: Jet) -> Jet:
    return jet_elementary("exp", a)


def sin(a: Jet) -> Jet:
    return jet_elementary("sin", a)


def cos(a: Jet) -> Jet:
    return jet_elementary("cos", a)


def log(a: Jet) -> Jet:
    return jet_elementary("log", a)


def atan(a: Jet) -> Jet:
    return jet_elementary("atan", a)


def acos(a: Jet) -> Jet:
    return jet_elementary("acos", a)


# ---------------------------------------------------------------------------
# named operations


def jet_seed(point, axis: int, order: int = DEFAULT_ORDER, eps: bool = False) -> Jet:
    """Coordinate function ``x^axis`` expanded at ``point`` (shape (..., 4))."""
    point = _as_array(point)
    b = basis(order, eps)
    c = np.zeros(point.shape[:-1] + (b.size,))
    c[..., 0] = point[..., axis]
    e = [0, 0, 0, 0]
    e[axis] = 1
    c[..., b.position(e)] = 1.0
    return Jet(c, b)


def seeds(point, order: int = DEFAULT_ORDER) -> list[Jet]:
    return [jet_seed(point, a, order) for a in range(NDIM)]


def jet_add(a: Jet, b: Jet) -> Jet:
    return a + b


def jet_mul(a: Jet, b: Jet) -> Jet:
    return a * b


def jet_div(a: Jet, b: Jet) -> Jet:
    return a / b


def jet_partial(a: Jet, axis: int) -> Jet:
    return a.partial(axis)


def compose(f: Jet, displacement: Sequence[Jet]) -> Jet:
    """Substitute ``x - x0 = displacement`` into the Taylor polynomial of f.

    The displacement jets must have zero constant term; the result is exact to
    the smaller of the caps involved.
    """
    d = list(displacement)
    if any(np.any(np.abs(x.value) > 0) for x in d):
        raise JetError("displacement must vanish at the expansion point")
    b = f.basis
    cap = min([f.cap] + [x.cap for x in d])
    nb = basis(b.order, False)
    shape = np.broadcast_shapes(*[x.shape for x in d])
    one = Jet.constant(np.ones(shape), b.order)
    one.cap = cap
    powers = {(0, 0, 0, 0): one}
    for e in nb.monomials[1:]:
        ax = next(i for i in range(NDIM) if e[i] > 0)
        prev = list(e)
        prev[ax] -= 1
        powers[e] = powers[tuple(prev)] * d[ax]
    if any(x.has_eps for x in d):
        raise JetError("coordinate maps carry no perturbation part")
    mono = np.stack([powers[e].coeffs for e in nb.monomials], axis=-2)
    extra = len(f.shape) - len(shape)
    if extra > 0:
        mono = mono.reshape(tuple(shape) + (1,) * extra + mono.shape[-2:])
    out0 = np.einsum("...k,...kl->...l", f.coeffs[..., : nb.size], mono)
    if f.has_eps:
        out1 = np.einsum("...k,...kl->...l", f.coeffs[..., nb.size:], mono)
        res = Jet(np.concatenate([out0, out1], axis=-1), f.basis, cap)
    else:
        res = Jet(out0, f.basis, cap)
    return res.truncated(cap)


def evaluate(f: Jet, offset: Sequence[float]) -> np.ndarray:
    """Evaluate the Taylor polynomial (eps-free part) at ``x0 + offset``."""
    nb = basis(f.basis.order, False)
    off = _as_array(offset)
    vals = np.array([np.prod(off ** np.array(e)) for e in nb.monomials])
    return f.coeffs[..., : nb.size] @ vals


def random_jet(rng: np.random.Generator, shape=(), order: int = DEFAULT_ORDER,
               eps: bool = False, scale: float = 1.0) -> Jet:
    b = basis(order, eps)
    return Jet(scale * rng.standard_normal(tuple(shape) + (b.size,)), b)


def max_abs(jets: Iterable[Jet]) -> float:
    return max(j.norm_scale() for j in jets)
