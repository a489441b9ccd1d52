"""Static spherically symmetric A-flat metrics in Schwarzschild form.

The lapse is written ``1 - M(r)/r`` with
``M = m + Lambda r^3/3 + C1 r^f + C2 r^g`` where f, g are the roots of the
indicial equation of ``chi r^3 M'''' - 4 (3 alpha + beta)(r M'' - 2 M') = 0``,
``chi = 2 alpha + beta``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np

from . import geometry as geo
from . import jets
from .geometry import SPHERICAL, ChartPoint, CouplingPair, MetricSpec

SPECIAL_RATIOS = (Fraction(0), Fraction(2), Fraction(21, 8), Fraction(25, 8), Fraction(28, 9), Fraction(3))
RATIO_TOL = 1e-12
FLAT_TOL = 1e-8


class ClassifyError(ValueError):
    pass


class DegenerateCoupling(ClassifyError):
    pass


class NotAdmissible(ClassifyError):
    def __init__(self, msg: str, label: str | None = None):
        super().__init__(msg)
        self.label = label


class SingularFactor(ClassifyError):
    pass


class OutsideDomain(ClassifyError):
    pass


class DegenerateChange(ClassifyError):
    pass


# ---------------------------------------------------------------------------
# exponents and special ratios


@dataclass(frozen=True)
class MassFunctionCoeffs:
    m: float = 0.0
    lam: float = 0.0
    C1: float = 0.0
    C2: float = 0.0
    f: complex = 2.0
    g: complex = 1.0

    @property
    def complex_pair(self) -> bool:
        return abs(complex(self.f).imag) > 0

    def M(self, r):
        return (self.m + self.lam * r ** 3 / 3.0 + self.C1 * _cpow(r, self.f) + self.C2 * _cpow(r, self.g))


def _cpow(r, e):
    e = complex(e)
    if e.imag == 0:
        return r ** e.real
    return np.exp(e * np.log(r))


def discriminant(c: CouplingPair) -> float:
    return 100 * c.alpha ** 2 + 84 * c.alpha * c.beta + 17 * c.beta ** 2


def ratio(c: CouplingPair) -> float:
    if c.chi == 0:
        raise DegenerateCoupling("2 alpha + beta = 0: the mass equation drops order")
    return c.beta / c.chi


def exponents(c: CouplingPair) -> tuple[complex, complex]:
    """``(f, g) = 3/2 +- sqrt(25 - 8 beta/chi)/2``; a conjugate pair when negative."""
    b = ratio(c)
    d = 25.0 - 8.0 * b
    if d >= 0:
        s = math.sqrt(d)
        return 1.5 + 0.5 * s, 1.5 - 0.5 * s
    s = cmath.sqrt(d)
    return 1.5 + 0.5 * s, 1.5 - 0.5 * s


def t_values(s):
    """The shifted exponents ``t_i^+-`` as functions of ``s = sqrt(25 - 8 beta/chi)``."""
    half = s / 2
    return {
        "t1+": Fraction(9, 2) + half, "t1-": Fraction(9, 2) - half,
        "t2+": Fraction(5, 2) + half, "t2-": Fraction(5, 2) - half,
        "t3+": Fraction(3, 2) + half, "t3-": Fraction(3, 2) - half,
        "t4+": 3 + s, "t4-": 3 - s,
    }


def _t_linear():
    """Each t value as (constant, coefficient of s)."""
    return {
        "t1+": (Fraction(9, 2), Fraction(1, 2)), "t1-": (Fraction(9, 2), Fraction(-1, 2)),
        "t2+": (Fraction(5, 2), Fraction(1, 2)), "t2-": (Fraction(5, 2), Fraction(-1, 2)),
        "t3+": (Fraction(3, 2), Fraction(1, 2)), "t3-": (Fraction(3, 2), Fraction(-1, 2)),
        "t4+": (Fraction(3), Fraction(1)), "t4-": (Fraction(3), Fraction(-1)),
    }


def residual_factors(b, s) -> tuple:
    """Factors multiplying C2 and C1 in the residual conditions."""
    return (-(2 - b) * s + 10 - 3 * b, (2 - b) * s + 10 - 3 * b)


def coincidence_ratios() -> dict:
    """Ratios ``beta/chi`` where two t values coincide, from exact arithmetic."""
    lin = _t_linear()
    out: dict = {}
    for (ka, (a0, a1)), (kb, (b0, b1)) in combinations(lin.items(), 2):
        if a1 == b1:
            if a0 == b0:
                continue
            continue
        s = (b0 - a0) / (a1 - b1)
        if s < 0:
            continue
        b = (25 - s * s) / 8
        out.setdefault(b, []).append((ka, kb))
    return out


def residual_ratios() -> set:
    """Ratios where a residual factor vanishes: ``-8 b (b - 3)^2 = 0`` after squaring.

    Candidates are roots of the squared condition, kept only when the
    unsquared factor vanishes exactly with ``s = sqrt(25 - 8 b)`` rational.
    """
    roots = np.roots([-8.0, 48.0, -72.0, 0.0])
    out = set()
    for r in roots:
        b = Fraction(float(np.real(r))).limit_denominator(1000)
        s2 = 25 - 8 * b
        if s2 < 0:
            continue
        s = Fraction(math.isqrt(s2.numerator), math.isqrt(s2.denominator))
        if s * s != s2:
            continue
        if any(f == 0 for f in residual_factors(b, s)):
            out.add(b)
    return out


def scan_ratios() -> list:
    return sorted(set(coincidence_ratios()) | residual_ratios())


def special_ratio(c: CouplingPair) -> Fraction | None:
    b = ratio(c)
    for t in SPECIAL_RATIOS:
        if abs(b - float(t)) <= RATIO_TOL * max(1.0, abs(b)):
            return t
    return None


# ---------------------------------------------------------------------------
# mass function


def _dpow(e, k):
    out = 1.0
    for i in range(k):
        out *= (e - i)
    return out


def mass_ode_residual(Mc: MassFunctionCoeffs, c: CouplingPair, r: float) -> float:
    """``chi r^3 M'''' - 4 (3 alpha + beta)(r M'' - 2 M')`` with exact derivatives."""
    terms = [(Mc.m, 0.0), (Mc.lam / 3.0, 3.0), (Mc.C1, Mc.f), (Mc.C2, Mc.g)]
    res = 0j
    for coef, e in terms:
        if coef == 0:
            continue
        e = complex(e)
        d1 = coef * _dpow(e, 1) * _cpow(r, e - 1)
        d2 = coef * _dpow(e, 2) * _cpow(r, e - 2)
        d4 = coef * _dpow(e, 4) * _cpow(r, e - 4)
        res += c.chi * r ** 3 * d4 - 4 * (3 * c.alpha + c.beta) * (r * d2 - 2 * d1)
    return float(res.real) if abs(res.imag) <= 1e-12 * max(1.0, abs(res)) else float(abs(res))


def conformal_constraint(m: float, C1: float, C2: float) -> float:
    return 3 * C1 * m - C2 * C2 + 2 * C2


def fsmk_mass_coeffs(m: float, mu: float) -> tuple[float, float]:
    """``(C1, C2) = (mu (3 m mu - 2), 3 m mu)``."""
    return mu * (3 * m * mu - 2), 3 * m * mu


# ---------------------------------------------------------------------------
# admissible domains


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    closed_lo: bool = False

    def midpoint(self) -> float:
        if math.isinf(self.hi):
            return self.lo + max(1.0, abs(self.lo))
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class AdmissibleDomain:
    label: str
    intervals: tuple
    family: str = "1"
    params: dict = field(default_factory=dict)


def fsmk_lapse(m, lam, mu, r):
    return 1 - 3 * m * mu - m / r - mu * (3 * m * mu - 2) * r - lam * r * r / 3


def family_a_lapse(lam, mu, r):
    return 1 + 2 * mu * r - lam * r * r / 3


def family_b_lapse(lam, mu, r):
    return -lam * r * r / 3 - mu * r - 1


def _positive_roots(coeffs) -> list:
    """Distinct real positive roots, polished by bisection on a sign change."""
    c = np.trim_zeros(np.asarray(coeffs, float), "f")
    if c.size <= 1:
        return []
    roots = []
    for z in np.roots(c):
        if abs(z.imag) > 1e-9 * max(1.0, abs(z)) or z.real <= 0:
            continue
        roots.append(_polish(c, z.real))
    roots.sort()
    out = []
    for r in roots:
        if not out or abs(r - out[-1]) > 1e-9 * max(1.0, r):
            out.append(r)
    return out


def _polish(c, x):
    p = np.poly1d(c)
    h = 1e-6 * max(1.0, abs(x))
    a, b = x - h, x + h
    if p(a) * p(b) > 0:
        return x
    for _ in range(200):
        mid = 0.5 * (a + b)
        if p(a) * p(mid) <= 0:
            b = mid
        else:
            a = mid
        if b - a <= 1e-15 * max(1.0, abs(x)):
            break
    return 0.5 * (a + b)


def _positivity_intervals(fun, roots, closed_zero=False) -> tuple:
    edges = [0.0] + list(roots) + [math.inf]
    out = []
    for lo, hi in zip(edges, edges[1:]):
        iv = Interval(lo, hi, closed_zero and lo == 0.0)
        if fun(iv.midpoint()) > 0:
            out.append(iv)
    return tuple(out)


def _label_massive(m, lam, mu) -> str:
    if mu == 0 and lam == 0:
        return "1e"
    if mu < 0:
        return "1g" if lam >= 0 else "1h"
    if 3 * m * mu >= 2:
        return "1a" if lam >= 0 else "1b"
    return "1c" if lam > 0 else "1d"


def fsmk_domain(m: float, lam: float, mu: float, family: str | None = None) -> AdmissibleDomain:
    """Positivity set of the lapse with its case label.

    For ``m > 0`` the lapse is ``f``; for ``m = 0`` family ``"a"`` uses
    ``N = 1 + 2 mu r - Lambda r^2/3`` (regular centre, r = 0 included) and
    family ``"b"`` uses ``h = -Lambda r^2/3 - mu r - 1``.
    """
    prm = {"m": m, "lambda": lam, "mu": mu}
    if m < 0:
        raise ClassifyError("m must be non-negative")
    if m > 0:
        label = _label_massive(m, lam, mu)
        # r f(r) = -lam/3 r^3 - mu (3 m mu - 2) r^2 + (1 - 3 m mu) r - m
        roots = _positive_roots([-lam / 3.0, -mu * (3 * m * mu - 2), 1 - 3 * m * mu, -m])
        ivs = _positivity_intervals(lambda r: fsmk_lapse(m, lam, mu, r), roots)
        fam = "1"
    elif (family or "a") == "a":
        fam = "2a"
        if mu >= 0:
            label = "2a.i" if lam > 0 else "2a.ii"
        else:
            label = "2a.iii" if lam >= 0 else "2a.iv"
        roots = _positive_roots([-lam / 3.0, 2 * mu, 1.0])
        ivs = _positivity_intervals(lambda r: family_a_lapse(lam, mu, r), roots, closed_zero=True)
    elif family == "b":
        fam = "2b"
        if lam == 0:
            label = "2b.i"
            if mu >= 0:
                raise NotAdmissible("Lambda = 0 needs mu < 0", label)
        else:
            label = "2b.ii"
            if mu * mu - 4 * lam / 3 <= 0:
                raise NotAdmissible("needs mu^2 - 4 Lambda/3 > 0", label)
            if lam > 0 and mu >= 0:
                raise NotAdmissible("Lambda > 0 needs mu < 0", label)
        roots = _positive_roots([-lam / 3.0, -mu, -1.0])
        ivs = _positivity_intervals(lambda r: family_b_lapse(lam, mu, r), roots)
    else:
        raise ClassifyError(f"unknown family {family!r}")
    if not ivs:
        raise NotAdmissible(f"lapse is nowhere positive (case {label})", label)
    return AdmissibleDomain(label, ivs, fam, prm)


# ---------------------------------------------------------------------------
# conformal maps


@dataclass(frozen=True)
class MapResult:
    coordinate: float
    lam_tilde: float | None
    residual: float


def lambda_tilde(m: float, lam: float, mu: float) -> float:
    return lam - 3 * mu * mu * (mu * m - 1)


def conformal_to_sds(m: float, lam: float, mu: float, r: float) -> MapResult:
    """``(1 + mu r)^-2 g(m, Lambda, mu)`` in ``R = r/(1 + mu r)`` against ``sds(m, Lambda~)``.

    Compares the (t, R, theta, phi) components at the point.
    """
    w = 1 + mu * r
    if abs(w) < 1e-14:
        raise SingularFactor("1 + mu r vanishes")
    f = fsmk_lapse(m, lam, mu, r)
    if f <= 0:
        raise OutsideDomain("lapse is not positive at r")
    R = r / w
    lt = lambda_tilde(m, lam, mu)
    dr_dR = w * w
    th = 1.0  # any regular angle
    got = np.array([-f / w ** 2, dr_dR ** 2 / (f * w ** 2), r * r / w ** 2, r * r * math.sin(th) ** 2 / w ** 2])
    fs = 1 - m / R - lt * R * R / 3
    want = np.array([-fs, 1 / fs, R * R, R * R * math.sin(th) ** 2])
    res = float(np.max(np.abs(got - want) / np.maximum(1.0, np.abs(want))))
    return MapResult(R, lt, res)


def cylindrical_map(lam: float, mu: float, r: float) -> MapResult:
    """``x = arctan(-(mu r + 2)/(2 sqrt h))`` for the second m = 0 family.

    ``r^-2 g_0 = -(D/4) cos^2 x dt^2 + dx^2 + g_S2`` with ``D = mu^2 - 4 Lambda/3``;
    the residual compares the tt and radial components.
    """
    D = mu * mu - 4 * lam / 3
    if D <= 0:
        raise OutsideDomain("needs mu^2 - 4 Lambda/3 > 0")
    h0 = family_b_lapse(lam, mu, r)
    if h0 <= 0:
        raise OutsideDomain("h is not positive at r")
    rj = jets.jet_seed(np.array([0.0, r, 0.0, 0.0]), 1, order=1)
    h = rj * rj * (-lam / 3) - rj * mu - 1.0
    x = jets.atan(-(rj * mu + 2.0) / (jets.sqrt(h) * 2.0))
    xv = float(x.value)
    dx = float(x.partial(1).value)
    tt = abs(h0 / r ** 2 - 0.25 * D * math.cos(xv) ** 2)
    rr = abs(1.0 / (r * r * h0) - dx * dx) * r * r * h0
    return MapResult(xv, None, float(max(tt, rr)))


# ---------------------------------------------------------------------------
# reduction to Schwarzschild form


@dataclass
class Reduction:
    r: np.ndarray
    F: np.ndarray
    R: np.ndarray
    P: np.ndarray
    coeffs: dict
    fit_residual: float


def _rk4(fun, y0, r0, r1, n):
    h = (r1 - r0) / n
    rs = r0 + h * np.arange(n + 1)
    ys = np.empty(n + 1)
    y = y0
    ys[0] = y
    for k in range(n):
        r = rs[k]
        k1 = fun(r)
        k2 = fun(r + h / 2)
        k4 = fun(r + h)
        y = y + h / 6 * (k1 + 4 * k2 + k4)  # right-hand side depends on r only
        ys[k + 1] = y
    return rs, ys


def schwarzschild_form_reduction(U, V, r0: float, F0: float, r_span: tuple, n_steps: int = 4000,
                                 n_fit: int = 41) -> Reduction:
    """Conformal factor from ``d/dr(F/r) = -U V / r^2`` and the lapse in ``R = -r/F``.

    ``g = -U^2 dt^2 + V^2 dr^2 + r^2 g_S2`` becomes ``F^-2 g = -P dt^2 + dR^2/P + R^2 g_S2``
    with ``P = (U/F)^2``.  M is fitted in the convention ``P = 1 - M(R)/R`` to
    ``m + Lambda R^3/3 + C1 R^2 + C2 R``.
    """
    if F0 >= 0:
        raise ClassifyError("the initial value of F must be negative")
    a, b = r_span
    if not a <= r0 <= b:
        raise ClassifyError("r0 must lie in the span")
    rhs = lambda r: -U(r) * V(r) / (r * r)
    y0 = F0 / r0
    parts = []
    if r0 > a:
        n = max(2, int(n_steps * (r0 - a) / (b - a)))
        rl, yl = _rk4(rhs, y0, r0, a, n)
        parts.append((rl[::-1], yl[::-1]))
    if b > r0:
        n = max(2, int(n_steps * (b - r0) / (b - a)))
        rr, yr = _rk4(rhs, y0, r0, b, n)
        parts.append((rr, yr))
    rs = np.concatenate([p[0] for p in parts])
    ys = np.concatenate([p[1] for p in parts])
    rs, idx = np.unique(rs, return_index=True)
    ys = ys[idx]
    F = ys * rs
    if np.any(F >= 0):
        raise DegenerateChange("F changes sign on the span")
    R = -rs / F
    if not (np.all(np.diff(R) > 0) or np.all(np.diff(R) < 0)):
        raise DegenerateChange("R is not monotone on the span")
    Uv = np.array([U(r) for r in rs])
    P = (Uv / F) ** 2
    sel = np.linspace(0, rs.size - 1, min(n_fit, rs.size)).astype(int)
    Rs, Ms = R[sel], R[sel] * (1 - P[sel])
    A = np.stack([np.ones_like(Rs), Rs, Rs ** 2, Rs ** 3], axis=-1)
    coef, *_ = np.linalg.lstsq(A, Ms, rcond=None)
    fit = float(np.max(np.abs(A @ coef - Ms)) / max(1.0, float(np.max(np.abs(Ms)))))
    coeffs = {"m": float(coef[0]), "C2": float(coef[1]), "C1": float(coef[2]), "lambda": float(3 * coef[3])}
    return Reduction(rs, F, R, P, coeffs, fit)


def reduction_prediction(c1: float, c2: float, m: float, lam: float, k: float) -> dict:
    """Closed-form result for ``U V = 1`` inputs, where ``F = 1 + k r``.

    With ``U^2 = c1 - m/r + c2 r - Lambda r^2/3`` one has ``r = -R/(1 + k R)`` and
    ``M(R) = R - c1 R (1+kR)^2 - m (1+kR)^3 + c2 R^2 (1+kR) + Lambda R^3/3``.
    """
    p = np.polynomial.Polynomial
    w = p([1.0, k])
    R = p([0.0, 1.0])
    M = R - c1 * R * w * w - m * w ** 3 + c2 * R * R * w + (lam / 3.0) * R ** 3
    co = np.concatenate([M.coef, np.zeros(4)])[:4]
    return {"m": float(co[0]), "C2": float(co[1]), "C1": float(co[2]), "lambda": float(3 * co[3])}


# ---------------------------------------------------------------------------
# classification by A evaluation


TAGS = ("SdS/SAdS", "Reissner-Nordstrom", "FSMK-family", "A-flat", "not-A-flat")


def _sample_radii(spec: MetricSpec, n: int = 8) -> list:
    out = []
    for r in np.geomspace(0.7, 60.0, 64):
        try:
            f = float(spec.lapse2(r))
        except (ValueError, ZeroDivisionError):
            continue
        if f > 1e-3:
            out.append(float(r))
    if len(out) < n:
        raise OutsideDomain("lapse is positive at too few sample radii")
    idx = np.linspace(0, len(out) - 1, n).astype(int)
    return [out[i] for i in idx]


def a_flatness(c: CouplingPair, Mc: MassFunctionCoeffs, n: int = 8) -> float:
    """Max of ``|A| / scale`` over n radii of the schwarzschild_form metric."""
    if Mc.complex_pair and (Mc.C1 or Mc.C2):
        raise ClassifyError("complex exponents need a real combination; not supported here")
    prm = {"m": Mc.m, "lambda": Mc.lam, "C1": Mc.C1, "C2": Mc.C2,
           "e1": float(complex(Mc.f).real), "e2": float(complex(Mc.g).real)}
    spec = MetricSpec("schwarzschild_form", prm)
    rs = _sample_radii(spec, n)
    coords = np.array([[0.0, r, 1.1, 0.3] for r in rs])
    g = geo.eval_metric(spec, ChartPoint(SPHERICAL, coords), 4)
    res = geo.a_tensor(g, c, strict=False)
    return float(np.max(np.abs(res.A.value)) / max(res.scale, 1e-300))


def classify_solution(c: CouplingPair, Mc: MassFunctionCoeffs) -> str:
    if c.chi == 0:
        raise DegenerateCoupling("2 alpha + beta = 0")
    flat = a_flatness(c, Mc) < FLAT_TOL
    if not flat:
        return "not-A-flat"
    if Mc.C1 == 0 and Mc.C2 == 0:
        return "SdS/SAdS"
    if c.conformal:
        return "FSMK-family"
    if Mc.C1 == 0 and special_ratio(c) == 0:
        return "Reissner-Nordstrom"
    return "A-flat"


def coeffs_for(c: CouplingPair, m=0.0, lam=0.0, C1=0.0, C2=0.0) -> MassFunctionCoeffs:
    f, g = exponents(c)
    return MassFunctionCoeffs(m, lam, C1, C2, f, g)


NAMED_DOMAINS = {
    "schwarzschild": (1.0, 0.0, 0.0, None),
    "sds": (1.0, 0.05, 0.0, None),
    "sads": (1.0, -0.3, 0.0, None),
    "fsmk_excluded": (1.0, 0.1, 1.0, None),
    "fsmk_ads_large_mu": (1.0, -0.5, 1.0, None),
    "fsmk_small_mu_ds": (1.0, 0.01, 0.1, None),
    "fsmk_negative_mu": (1.0, 0.01, -0.1, None),
    "fsmk_negative_mu_ads": (1.0, -0.3, -0.1, None),
    "regular_centre_ads": (0.0, -0.3, 0.5, "a"),
    "cylindrical_flat": (0.0, 0.0, -0.5, "b"),
}
