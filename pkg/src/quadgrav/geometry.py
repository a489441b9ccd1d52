"""Metric catalog, chart handling and the curvature stack up to the tensor A.

Conventions: signature (-,+,+,+);
``R^i_{jkl} = d_k Gamma^i_{lj} - d_l Gamma^i_{kj} + Gamma^i_{ku} Gamma^u_{jl} - Gamma^i_{lu} Gamma^u_{jk}``
and ``Ric_{jl} = R^i_{jil}``.  Tensor axes come before the jet axis, derivative
indices produced by covariant differentiation are appended last, and any
leading axes beyond the tensor rank are batch axes (many points at once).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import jets
from .jets import Jet, contract, einsum

CARTESIAN = "cartesian"
SPHERICAL = "schwarzschild_spherical"
CHARTS = (CARTESIAN, SPHERICAL)

TensorJet = Jet


class GeometryError(ValueError):
    pass


class OutsideDomain(GeometryError):
    pass


class BadParams(GeometryError):
    pass


class DegenerateMetric(GeometryError):
    pass


class SingularTransform(GeometryError):
    pass


class FormMismatch(GeometryError):
    pass


@dataclass(frozen=True)
class ChartPoint:
    chart: str
    coords: np.ndarray

    def __post_init__(self):
        if self.chart not in CHARTS:
            raise BadParams(f"unknown chart {self.chart!r}")
        c = np.asarray(self.coords, dtype=float)
        if c.shape[-1] != 4:
            raise BadParams("a chart point needs four coordinates")
        object.__setattr__(self, "coords", c)
        if self.chart == SPHERICAL:
            if np.any(c[..., 1] <= 0) or np.any(np.abs(np.sin(c[..., 2])) < 1e-12):
                raise SingularTransform("spherical chart needs r > 0 and sin(theta) != 0")


@dataclass(frozen=True)
class CouplingPair:
    alpha: float
    beta: float

    @property
    def chi(self) -> float:
        return 2 * self.alpha + self.beta

    @property
    def conformal(self) -> bool:
        return abs(3 * self.alpha + self.beta) <= 1e-14 * max(1.0, abs(self.alpha), abs(self.beta))


# ---------------------------------------------------------------------------
# chart maps


def to_cartesian(coords: np.ndarray) -> np.ndarray:
    t, r, th, ph = np.moveaxis(np.asarray(coords, dtype=float), -1, 0)
    return np.stack([t, r * np.sin(th) * np.cos(ph), r * np.sin(th) * np.sin(ph), r * np.cos(th)], -1)


def to_spherical(coords: np.ndarray) -> np.ndarray:
    t, x, y, z = np.moveaxis(np.asarray(coords, dtype=float), -1, 0)
    r = np.sqrt(x * x + y * y + z * z)
    return np.stack([t, r, np.arccos(z / r), np.arctan2(y, x)], -1)


def convert(p: ChartPoint, chart: str) -> ChartPoint:
    if p.chart == chart:
        return p
    if chart == CARTESIAN:
        return ChartPoint(CARTESIAN, to_cartesian(p.coords))
    return ChartPoint(SPHERICAL, to_spherical(p.coords))


def _map_jets(p: ChartPoint, target: str, order: int) -> list[Jet]:
    """Coordinates of chart ``target`` as jets in the variables of ``p.chart``."""
    s = jets.seeds(p.coords, order)
    if p.chart == target:
        return s
    t, a, b, c = s
    if target == CARTESIAN:  # spherical -> cartesian
        st = jets.sin(b)
        return [t, a * st * jets.cos(c), a * st * jets.sin(c), a * jets.cos(b)]
    # cartesian -> spherical
    rho2 = a * a + b * b
    if np.any(rho2.value <= 0):
        raise SingularTransform("point on the polar axis")
    r = jets.sqrt(rho2 + c * c)
    th = jets.acos(c / r)
    ph0 = np.arctan2(b.value, a.value)
    # phi = ph0 + atan of the rotated ratio keeps the branch regular everywhere
    cph, sph = np.cos(ph0), np.sin(ph0)
    u = a * cph + b * sph
    v = b * cph - a * sph
    ph = jets.atan(v / u) + ph0
    return [t, r, th, ph]


def _jacobian(p: ChartPoint, source: str, order: int) -> Jet:
    """d x_source^mu / d y^a at p, as full-cap jets in the variables of p.chart."""
    s = jets.seeds(p.coords, order)
    one = Jet.constant(np.ones(p.coords.shape[:-1]), order)
    zero = one * 0.0
    if source == p.chart:
        rows = [[one if i == j else zero for j in range(4)] for i in range(4)]
        return jets.stack([jets.stack(r, -1) for r in rows], -1).swapaxes(-1, -2)
    t, a, b, c = s
    if source == SPHERICAL:  # y cartesian, x spherical
        r = jets.sqrt(a * a + b * b + c * c)
        rho2 = a * a + b * b
        rho = jets.sqrt(rho2)
        r2 = r * r
        rows = [
            [one, zero, zero, zero],
            [zero, a / r, b / r, c / r],
            [zero, a * c / (r2 * rho), b * c / (r2 * rho), -rho / r2],
            [zero, -b / rho2, a / rho2, zero],
        ]
    else:  # y spherical, x cartesian
        st, ct, sp, cp = jets.sin(b), jets.cos(b), jets.sin(c), jets.cos(c)
        rows = [
            [one, zero, zero, zero],
            [zero, st * cp, a * ct * cp, -a * st * sp],
            [zero, st * sp, a * ct * sp, a * st * cp],
            [zero, ct, -a * st, zero],
        ]
    # rows[mu][a] = d x^mu / d y^a ; stack as [..., mu, a]
    return jets.stack([jets.stack(row, -1) for row in rows], -2)


def pullback(g_x: Jet, J: Jet) -> Jet:
    """g'_{ab} = J^mu_a J^nu_b g_{mu nu}."""
    tmp = einsum("...mn,...nb->...mb", g_x, J)
    return einsum("...ma,...mb->...ab", J, tmp)


def chart_transform(g: Jet, source: str, target: str, p: ChartPoint) -> Jet:
    """Re-express a (0,2) jet tensor given in chart ``source`` at ``p``.

    ``p`` is the expansion point in the source chart; the result is expanded at
    the image point in the target chart's variables.
    """
    if p.chart != source:
        raise BadParams("expansion point must be given in the source chart")
    if source == target:
        return g
    q = convert(p, target)
    order = g.basis.order
    xs = _map_jets(q, source, order)
    disp = [x - x.value for x in xs]
    g_y = jets.compose(g, disp)
    J = _jacobian(q, source, order)
    return pullback(g_y, J)


# ---------------------------------------------------------------------------
# metric catalog


def _radius(x: list[Jet], chart: str) -> Jet:
    if chart == SPHERICAL:
        return x[1]
    return jets.sqrt(x[1] * x[1] + x[2] * x[2] + x[3] * x[3])


def _static_spherical(x: list[Jet], chart: str, A: Jet, B: Jet) -> Jet:
    """-A dt^2 + B dr^2 + r^2 dOmega^2 in either chart."""
    one = x[0] * 0.0 + 1.0
    zero = x[0] * 0.0
    if chart == SPHERICAL:
        r, th = x[1], x[2]
        r2 = r * r
        s = jets.sin(th)
        comps = [-A, B, r2, r2 * s * s]
        rows = [[comps[i] if i == j else zero for j in range(4)] for i in range(4)]
    else:
        r2 = x[1] * x[1] + x[2] * x[2] + x[3] * x[3]
        k = (B - 1.0) / r2
        rows = [[zero] * 4 for _ in range(4)]
        rows[0][0] = -A
        for i in range(1, 4):
            for j in range(i, 4):
                v = k * x[i] * x[j]
                if i == j:
                    v = v + one
                rows[i][j] = v
                rows[j][i] = v
    return jets.stack([jets.stack(r, -1) for r in rows], -2)


def _lapse_metric(fun: Callable[[Jet, Mapping], Jet]):
    def build(x, chart, prm):
        r = _radius(x, chart)
        f = fun(r, prm)
        if np.any(f.value <= 0):
            raise OutsideDomain("lapse function is not positive at the requested point")
        return _static_spherical(x, chart, f, 1.0 / f)
    return build


def _f_sds(r, p):
    return 1.0 - p.get("m", 0.0) / r - p.get("lambda", 0.0) * r * r / 3.0


def fsmk_coefficients(p: Mapping) -> tuple[float, float]:
    """(c1, c2) of the lapse c1 - m/r + c2 r - lambda r^2/3."""
    if "mu" in p:
        m, mu = p.get("m", 0.0), p["mu"]
        return 1.0 - 3 * m * mu, -mu * (3 * m * mu - 2.0)
    return p.get("c1", 1.0), p.get("c2", 0.0)


def _f_fsmk(r, p):
    c1, c2 = fsmk_coefficients(p)
    return c1 - p.get("m", 0.0) / r + c2 * r - p.get("lambda", 0.0) * r * r / 3.0


def _f_rn(r, p):
    return 1.0 - p.get("r0", 1.0) / r + p.get("rq", 0.0) ** 2 / (r * r)


def _f_g0_linear(r, p):
    return 1.0 + 2 * p.get("mu", 0.0) * r - p.get("lambda", 0.0) * r * r / 3.0


def _f_g0_neg(r, p):
    return -p.get("lambda", 0.0) * r * r / 3.0 - p.get("mu", 0.0) * r - 1.0


def mass_function(r, p):
    """M(r) = m + lambda r^3/3 + C1 r^e1 + C2 r^e2 (lapse 1 - M/r)."""
    e1, e2 = p.get("e1", 2.0), p.get("e2", 1.0)
    M = p.get("m", 0.0) + p.get("lambda", 0.0) * r * r * r / 3.0
    if p.get("C1", 0.0):
        M = M + p["C1"] * _rpow(r, e1)
    if p.get("C2", 0.0):
        M = M + p["C2"] * _rpow(r, e2)
    return M


def _rpow(r, e):
    if isinstance(r, Jet):
        return r ** int(e) if float(e).is_integer() and e >= 0 else jets.jet_elementary("pow", r, e)
    return r ** e


def _f_schw_form(r, p):
    return 1.0 - mass_function(r, p) / r


def _minkowski(x, chart, prm):
    return _static_spherical(x, chart, x[0] * 0.0 + 1.0, x[0] * 0.0 + 1.0)


def _de_sitter_flat(x, chart, prm):
    """-dt^2 + exp(2 c t) delta, c^2 = lambda/3 (cartesian only)."""
    if chart != CARTESIAN:
        raise BadParams("de_sitter_flat is defined in the cartesian chart")
    c = math.sqrt(prm.get("lambda", 0.0) / 3.0)
    a2 = jets.exp(x[0] * (2 * c))
    zero = x[0] * 0.0
    rows = [[zero] * 4 for _ in range(4)]
    rows[0][0] = zero - 1.0
    for i in range(1, 4):
        rows[i][i] = a2
    return jets.stack([jets.stack(r, -1) for r in rows], -2)


def _polywave(x, chart, prm):
    """A generic non-solution metric: every component varies in space and time."""
    if chart != CARTESIAN:
        raise BadParams("polywave is defined in the cartesian chart")
    a = prm.get("amp", 0.05)
    t, X, Y, Z = x
    zero = t * 0.0
    bump = jets.exp(-(X * X + Y * Y + Z * Z) * 0.05)
    h = [[zero] * 4 for _ in range(4)]
    h[0][0] = X * Y * 0.3 + jets.sin(t + Z) * 0.5
    h[1][1] = jets.cos(X * 0.7 - t * 0.2) * 0.4 + Y * Z * 0.1
    h[2][2] = bump * 0.6 + X * 0.2
    h[3][3] = jets.sin(Y * 0.5) * X * 0.3
    h[0][1] = h[1][0] = bump * Z * 0.3
    h[0][2] = h[2][0] = jets.sin(X + Y) * 0.2
    h[0][3] = h[3][0] = t * X * 0.1
    h[1][2] = h[2][1] = jets.cos(Z) * 0.25
    h[1][3] = h[3][1] = Y * Y * 0.05 + t * 0.1
    h[2][3] = h[3][2] = jets.exp(X * 0.2) * 0.1
    eta = np.diag([-1.0, 1.0, 1.0, 1.0])
    rows = [[h[i][j] * a + eta[i, j] for j in range(4)] for i in range(4)]
    return jets.stack([jets.stack(r, -1) for r in rows], -2)


def _bumpy_static(x, chart, prm):
    """Static spherical metric with unrelated lapse and radial factor (not Einstein)."""
    r = _radius(x, chart)
    m, q = prm.get("m", 1.0), prm.get("q", 0.7)
    A = 1.0 - m / r + q * jets.exp(-r * 0.3)
    B = 1.0 + m / r + q * q / (r * r)
    return _static_spherical(x, chart, A, B)


@dataclass(frozen=True)
class CatalogEntry:
    builder: Callable
    native: str
    charts: tuple[str, ...]
    params: tuple[str, ...]
    lapse: Callable | None = None
    einstein: bool = False
    doc: str = ""


CATALOG: dict[str, CatalogEntry] = {
    "minkowski": CatalogEntry(_minkowski, CARTESIAN, CHARTS, (), None, True, "flat space-time"),
    "schwarzschild": CatalogEntry(_lapse_metric(_f_sds), SPHERICAL, CHARTS, ("m",), _f_sds, True,
                                  "lapse^2 = 1 - m/r"),
    "sds": CatalogEntry(_lapse_metric(_f_sds), SPHERICAL, CHARTS, ("m", "lambda"), _f_sds, True,
                        "lapse^2 = 1 - m/r - lambda r^2/3"),
    "reissner_nordstrom": CatalogEntry(_lapse_metric(_f_rn), SPHERICAL, CHARTS, ("r0", "rq"), _f_rn, False,
                                       "lapse^2 = 1 - r0/r + rq^2/r^2"),
    "fsmk": CatalogEntry(_lapse_metric(_f_fsmk), SPHERICAL, CHARTS, ("m", "lambda", "mu", "c1", "c2"),
                         _f_fsmk, False, "lapse^2 = c1 - m/r + c2 r - lambda r^2/3"),
    "g0_linear": CatalogEntry(_lapse_metric(_f_g0_linear), SPHERICAL, CHARTS, ("lambda", "mu"),
                              _f_g0_linear, False, "lapse^2 = 1 + 2 mu r - lambda r^2/3"),
    "g0_neg": CatalogEntry(_lapse_metric(_f_g0_neg), SPHERICAL, CHARTS, ("lambda", "mu"), _f_g0_neg, False,
                           "lapse^2 = -lambda r^2/3 - mu r - 1"),
    "schwarzschild_form": CatalogEntry(_lapse_metric(_f_schw_form), SPHERICAL, CHARTS,
                                       ("m", "lambda", "C1", "C2", "e1", "e2"), _f_schw_form, False,
                                       "lapse^2 = 1 - M(r)/r"),
    "de_sitter_flat": CatalogEntry(_de_sitter_flat, CARTESIAN, (CARTESIAN,), ("lambda",), None, True,
                                   "flat slicing of de Sitter"),
    "polywave": CatalogEntry(_polywave, CARTESIAN, (CARTESIAN,), ("amp",), None, False,
                             "generic analytic non-solution metric"),
    "bumpy_static": CatalogEntry(_bumpy_static, SPHERICAL, CHARTS, ("m", "q"), None, False,
                                 "static spherical non-Einstein metric"),
}


@dataclass(frozen=True)
class MetricSpec:
    id: str
    params: Mapping[str, float] = field(default_factory=dict)
    conformal: tuple[float, float] | None = None  # Omega = 1 + s r^(-sigma)

    def __post_init__(self):
        if self.id not in CATALOG:
            raise BadParams(f"unknown metric {self.id!r}")
        allowed = set(CATALOG[self.id].params)
        extra = set(self.params) - allowed
        if extra:
            raise BadParams(f"unexpected parameters {sorted(extra)} for {self.id}")
        object.__setattr__(self, "params", dict(self.params))

    @property
    def entry(self) -> CatalogEntry:
        return CATALOG[self.id]

    def lapse2(self, r):
        if self.entry.lapse is None:
            raise BadParams(f"{self.id} is not a static lapse metric")
        return self.entry.lapse(r, self.params)

    def cosmological_constant(self) -> float:
        if self.id == "minkowski":
            return 0.0
        return float(self.params.get("lambda", 0.0))


def conformal_factor(x: list[Jet], chart: str, s: float, sigma: float) -> Jet:
    r = _radius(x, chart)
    return 1.0 + s * jets.jet_elementary("pow", r, -sigma)


def eval_metric(spec: MetricSpec, p: ChartPoint, order: int = jets.DEFAULT_ORDER) -> Jet:
    """Metric components at p as jets in the variables of p.chart."""
    e = spec.entry
    x = jets.seeds(p.coords, order)
    if p.chart in e.charts:
        g = e.builder(x, p.chart, spec.params)
    else:
        q = convert(p, e.native)
        xn = jets.seeds(q.coords, order)
        g_native = e.builder(xn, e.native, spec.params)
        g = chart_transform(g_native, e.native, p.chart, q)
    if spec.conformal is not None:
        s, sigma = spec.conformal
        om = conformal_factor(x, p.chart, s, sigma)
        g = g * (om * om)[..., None, None]
    return g


def lorentzian_check(g: Jet, tol: float = 0.0) -> None:
    vals = np.linalg.eigvalsh(g.value)
    neg = np.sum(vals < 0, axis=-1)
    if np.any(neg != 1):
        raise GeometryError("metric is not Lorentzian at the point")


# ---------------------------------------------------------------------------
# curvature


def inverse_metric(g: Jet) -> Jet:
    g0 = g.value
    det = np.linalg.det(g0)
    scale = np.max(np.abs(g0), axis=(-1, -2)) ** g0.shape[-1]
    if np.any(np.abs(det) <= 1e-14 * scale):
        raise DegenerateMetric("metric is degenerate at the point")
    inv0 = np.linalg.inv(g0)
    delta = g - g0
    M = -Jet(np.einsum("...ab,...bcz->...acz", inv0, delta.coeffs), g.basis, g.cap)
    term = Jet.constant(inv0, g.basis.order, g.has_eps)
    term.cap = g.cap
    total = term
    n = g.basis.order + (1 if g.has_eps else 0)
    for _ in range(n):
        term = einsum("...ab,...bc->...ac", M, term)
        total = total + term
    return total


def christoffels(g: Jet, ginv: Jet | None = None) -> Jet:
    """Gamma^a_{bc} (shape (..., a, b, c))."""
    if ginv is None:
        ginv = inverse_metric(g)
    dg = g.grad()  # dg[i,j,k] = d_k g_ij
    g1 = (contract("...dcb->...dbc", dg) + dg - contract("...bcd->...dbc", dg)) * 0.5
    return einsum("...ad,...dbc->...abc", ginv.truncated(g1.cap), g1)


def covariant_derivative(T: Jet, gamma: Jet, rank: int) -> Jet:
    """nabla_c T_{a1..an} with the derivative index appended last."""
    letters = "abdefghijk"[:rank]
    cap = T.cap - 1
    D = T.grad()
    if rank == 0:
        return D
    G = gamma.truncated(cap)
    Tt = T.truncated(cap)
    for k in range(rank):
        t_sub = letters[:k] + "u" + letters[k + 1:]
        D = D - einsum(f"...uc{letters[k]},...{t_sub}->...{letters}c", G, Tt)
    return D


def covariant_derivative_vector(V: Jet, gamma: Jet) -> Jet:
    """nabla_c V^a with shape (..., a, c)."""
    cap = V.cap - 1
    return V.grad() + einsum("...acu,...u->...ac", gamma.truncated(cap), V.truncated(cap))


@dataclass
class Curvature:
    g: Jet
    ginv: Jet
    gamma: Jet
    riem: Jet  # R^i_{jkl}
    riem_low: Jet  # R_{ijkl}
    ric: Jet
    R: Jet
    G: Jet
    _weyl: Jet | None = None

    @property
    def weyl(self) -> Jet:
        if self._weyl is None:
            self._weyl = weyl_tensor(self)
        return self._weyl

    def raise_both(self, T: Jet) -> Jet:
        gi = self.ginv.truncated(T.cap)
        return einsum("...ma,...ab->...mb", gi, einsum("...ab,...bn->...an", T, gi))


def curvature_stack(g: Jet) -> Curvature:
    ginv = inverse_metric(g)
    gamma = christoffels(g, ginv)
    dG = gamma.grad()  # dG[i,l,j,k] = d_k Gamma^i_{lj}
    cap = dG.cap
    gt = gamma.truncated(cap)
    quad = einsum("...iku,...ujl->...ijkl", gt, gt)
    riem = (contract("...iljk->...ijkl", dG) - contract("...ikjl->...ijkl", dG)
            + quad - contract("...ijlk->...ijkl", quad))
    ric = contract("...ijil->...jl", riem)
    R = einsum("...jl,...jl->...", ginv.truncated(cap), ric)
    gc = g.truncated(cap)
    riem_low = einsum("...ai,...ijkl->...ajkl", gc, riem)
    G = ric - gc * (R * 0.5)[..., None, None]
    return Curvature(g, ginv, gamma, riem, riem_low, ric, R, G)


def weyl_tensor(c: Curvature) -> Jet:
    """W_{rho mu lambda nu}, trace-free part of the Riemann tensor (space-time dimension 4)."""
    cap = c.riem.cap
    g = c.g.truncated(cap)
    ric = c.ric
    t1 = einsum("...rl,...mn->...rmln", ric, g)
    t2 = einsum("...rn,...ml->...rmln", ric, g)
    t3 = einsum("...mn,...rl->...rmln", ric, g)
    t4 = einsum("...ml,...rn->...rmln", ric, g)
    gg = einsum("...rn,...ml->...rmln", g, g)
    gg2 = einsum("...rl,...mn->...rmln", g, g)
    return (c.riem_low - (t1 - t2 + t3 - t4) * 0.5
            - (gg - gg2) * (c.R / 6.0)[..., None, None, None, None])


def _full_contract(a: Jet, b: Jet, ginv: Jet, rank: int) -> Jet:
    """a_{i..} b^{i..} with all indices raised on b by ginv."""
    letters = "abcd"[:rank]
    up = b
    for k in range(rank):
        sub = letters[:k] + "u" + letters[k + 1:]
        up = einsum(f"...{letters[k]}u,...{sub}->...{letters}", ginv.truncated(b.cap), up)
    return einsum(f"...{letters},...{letters}->...", a, up)


def quadratic_invariants(g_or_curv) -> dict:
    c = g_or_curv if isinstance(g_or_curv, Curvature) else curvature_stack(g_or_curv)
    gi = c.ginv
    riem2 = _full_contract(c.riem_low, c.riem_low, gi, 4).value
    ric2 = _full_contract(c.ric, c.ric, gi, 2).value
    R2 = c.R.value ** 2
    w2 = _full_contract(c.weyl, c.weyl, gi, 4).value
    return {"riem2": riem2, "ric2": ric2, "R2": R2, "weyl2": w2}


def bach(c: Curvature) -> Jet:
    """B_{mu nu} = (nabla^rho nabla^lambda + Ric^{rho lambda}/2) W_{rho mu lambda nu}."""
    W = c.weyl
    dW = covariant_derivative(W, c.gamma, 4)  # (r m l n b)
    V = einsum("...lb,...rmlnb->...rmn", c.ginv.truncated(dW.cap), dW)
    dV = covariant_derivative(V, c.gamma, 3)  # (r m n a)
    B1 = einsum("...ra,...rmna->...mn", c.ginv.truncated(dV.cap), dV)
    ric_up = c.raise_both(c.ric)
    B2 = einsum("...rl,...rmln->...mn", ric_up.truncated(0), W.truncated(0)) * 0.5
    return B1 + B2


@dataclass
class ATensorResult:
    A: Jet
    scale: float
    mismatch: float
    terms: dict


def _box(T: Jet, c: Curvature, rank: int) -> Jet:
    dT = covariant_derivative(T, c.gamma, rank)
    ddT = covariant_derivative(dT, c.gamma, rank + 1)
    letters = "abde"[:rank]
    return einsum(f"...xy,...{letters}xy->...{letters}", c.ginv.truncated(ddT.cap), ddT)


def hessian_scalar(f: Jet, c: Curvature) -> Jet:
    df = f.grad()
    return covariant_derivative(df, c.gamma, 1)


def a_tensor_terms(c: Curvature, cp: CouplingPair, need_cap: int = 0) -> dict:
    """Building blocks of A, truncated to the requested cap."""
    box_ric = _box(c.ric, c, 2)
    hessR = hessian_scalar(c.R, c)
    boxR = einsum("...ab,...ab->...", c.ginv.truncated(hessR.cap), hessR)
    cap = min(box_ric.cap, hessR.cap)
    g = c.g.truncated(cap)
    ric = c.ric.truncated(cap)
    R = c.R.truncated(cap)
    riem = c.riem_low.truncated(cap)
    ric_up = c.raise_both(c.ric).truncated(cap)
    ricriem = einsum("...rs,...rmsn->...mn", ric_up, riem)
    ric2 = einsum("...ab,...ab->...", ric_up, ric)
    return dict(box_ric=box_ric, hessR=hessR, boxR=boxR, g=g, ric=ric, R=R, riem=riem,
                ric_up=ric_up, ricriem=ricriem, ric2=ric2, cap=cap)


def a_tensor(g_or_curv, cp: CouplingPair, strict: bool = True, rtol: float = 1e-9) -> ATensorResult:
    """A from the Ricci form, cross-checked against the Einstein-tensor form."""
    c = g_or_curv if isinstance(g_or_curv, Curvature) else curvature_stack(g_or_curv)
    al, be = cp.alpha, cp.beta
    t = a_tensor_terms(c, cp)
    g, ric, R = t["g"], t["ric"], t["R"]
    s2 = lambda s: s[..., None, None]
    pieces = {
        "box_ric": t["box_ric"] * be,
        "boxR_g": g * s2(t["boxR"] * (0.5 * be + 2 * al)),
        "hessR": t["hessR"] * (-(2 * al + be)),
        "ricriem": t["ricriem"] * (2 * be),
        "R_ric": ric * s2(R * (2 * al)),
        "R2_g": g * s2(R * R * (-0.5 * al)),
        "ric2_g": g * s2(t["ric2"] * (-0.5 * be)),
    }
    A = pieces["box_ric"]
    for k in list(pieces)[1:]:
        A = A + pieces[k]
    # Einstein-tensor form
    G = c.G
    box_G = _box(G, c, 2)
    Gt = G.truncated(t["cap"])
    G_mixed = einsum("...la,...at->...lt", c.ginv.truncated(t["cap"]), Gt)  # G^l_t... raised first index
    ric_mixed = einsum("...ta,...al->...tl", c.ginv.truncated(t["cap"]), ric)  # Ric^t_l
    riem_up_first = c.riem.truncated(t["cap"])  # R^t_{m l n}
    GR = einsum("...lt,...tmln->...mn", G_mixed, riem_up_first)
    GRic = einsum("...lt,...tl->...", G_mixed, ric_mixed)
    A2 = ((box_G + (GR - g * s2(GRic * 0.25)) * 2.0) * be
          - (t["hessR"] - g * s2(t["boxR"]) - Gt * s2(R) - g * s2(R * R * 0.25)) * (2 * al + be))
    scale = max(p.norm_scale() for p in pieces.values())
    # Ricci-flat points have vanishing terms; curvature squared sets the floor
    scale = max(scale, (abs(al) + abs(be)) * c.riem_low.norm_scale() ** 2, 1e-300)
    mismatch = float(np.max(np.abs(A.coeffs - A2.coeffs))) / scale if A.coeffs.size else 0.0
    if strict and mismatch > rtol:
        raise FormMismatch(f"the two forms of A differ by {mismatch:.3e} relative")
    return ATensorResult(A, scale, mismatch, pieces)


def a_trace(g_or_curv, cp: CouplingPair) -> tuple[np.ndarray, np.ndarray]:
    """(g^{mu nu} A_{mu nu}, box R) at the expansion points."""
    c = g_or_curv if isinstance(g_or_curv, Curvature) else curvature_stack(g_or_curv)
    res = a_tensor(c, cp, strict=False)
    tr = einsum("...ab,...ab->...", c.ginv.truncated(res.A.cap), res.A)
    hessR = hessian_scalar(c.R, c)
    boxR = einsum("...ab,...ab->...", c.ginv.truncated(hessR.cap), hessR)
    return tr.value, boxR.value


TRACE_CONSTANT = 2.0  # g.A = TRACE_CONSTANT * (3 alpha + beta) * box R


def divergence(T: Jet, c: Curvature) -> Jet:
    """nabla^mu T_{mu nu} for a (0,2) tensor."""
    dT = covariant_derivative(T, c.gamma, 2)  # (m n a)
    return einsum("...ma,...mna->...n", c.ginv.truncated(dT.cap), dT)


def killing_residual(xi: Jet, c: Curvature) -> float:
    """max |nabla_a xi_b + nabla_b xi_a| at the expansion point."""
    xi_low = einsum("...ab,...b->...a", c.g, xi)
    d = covariant_derivative(xi_low, c.gamma, 1)
    return float(np.max(np.abs((d + d.swapaxes(-1, -2)).value)))
