"""Surface integrals at infinity: charges, energies and flux balance.

Spheres are parametrised by the round angles; ``dw`` is the unit-sphere
measure and ``dw_r = r^2 dw``.  Derivatives of the integrands come from jets,
so the only discretisation errors are the angular quadrature (spectral for
smooth integrands) and the radial extrapolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from . import geometry as geo
from . import initdata as idt
from . import jets
from . import linearize as lin
from .geometry import CARTESIAN, SPHERICAL, ChartPoint, CouplingPair, MetricSpec
from .initdata import SliceData, spatial_grad
from .jets import Jet, einsum

OMEGA2 = 4.0 * math.pi
DEFAULT_RADII = (50.0, 100.0, 200.0, 400.0)
FIT_RESIDUAL_TOL = 1e-3


class EnergyError(ValueError):
    pass


class BadOrder(EnergyError):
    pass


class NonConvergent(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class SphereQuadrature:
    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray
    n_theta: int
    n_phi: int

    @property
    def normals(self) -> np.ndarray:
        st = np.sin(self.theta)
        return np.stack([st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)], axis=-1)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * values))


def sphere_quadrature(n_theta: int = 16, n_phi: int = 32) -> SphereQuadrature:
    """Gauss-Legendre in cos(theta) times the trapezoid rule in phi."""
    if n_theta < 2 or n_phi < 4:
        raise BadOrder("need n_theta >= 2 and n_phi >= 4")
    u, wu = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    th = np.arccos(u)
    T, P = np.meshgrid(th, phi, indexing="ij")
    W = np.outer(wu, np.full(n_phi, 2.0 * math.pi / n_phi))
    return SphereQuadrature(T.ravel(), P.ravel(), W.ravel(), n_theta, n_phi)


def doubled(q: SphereQuadrature) -> SphereQuadrature:
    return sphere_quadrature(2 * q.n_theta, 2 * q.n_phi)


# ---------------------------------------------------------------------------
# extrapolation


@dataclass(frozen=True)
class Extrapolation:
    limit: float
    exponent: float
    residual: float


def extrapolate(pairs: Sequence[tuple[float, float]], floor: float = 1e-12,
                max_residual: float = FIT_RESIDUAL_TOL) -> Extrapolation:
    """Fit ``value(r) = L + a r^-p`` with p > 0.

    Three radii determine the model; more radii are fitted by least squares
    starting from the estimate of the last three.  Sequences whose successive
    differences sit below ``floor`` (relative to the values) count as
    converged with ``p = inf``.
    """
    pairs = sorted((float(r), float(v)) for r, v in pairs)
    if len(pairs) < 3:
        raise NonConvergent("need at least three radii")
    r = np.array([p[0] for p in pairs])
    v = np.array([p[1] for p in pairs])
    if np.any(np.diff(r) <= 0):
        raise NonConvergent("radii must be strictly increasing")
    scale = max(1.0, float(np.max(np.abs(v))))
    d = np.diff(v)
    if np.max(np.abs(d)) <= floor * scale:
        return Extrapolation(float(v[-1]), math.inf, 0.0)
    d1, d2 = d[-2], d[-1]
    q = r[-1] / r[-2]
    if d1 * d2 <= 0 or abs(d2) >= abs(d1):
        raise NonConvergent("differences do not shrink geometrically")
    p = math.log(d1 / d2) / math.log(q)
    a = d2 / (r[-1] ** -p - r[-2] ** -p)
    L = v[-1] - a * r[-1] ** -p
    if len(r) > 3:
        x0 = np.array([L, a * r[0] ** -p, p])

        def resid(z):
            return (z[0] + z[1] * (r / r[0]) ** -z[2] - v) / scale

        sol = least_squares(resid, x0, method="lm", xtol=1e-15, ftol=1e-15)
        L, p = float(sol.x[0]), float(sol.x[2])
        res = float(np.sqrt(np.mean(sol.fun ** 2)))
    else:
        res = 0.0
    if not p > 0:
        raise NonConvergent(f"fitted exponent {p:.3g} is not positive")
    if res > max_residual:
        raise NonConvergent(f"fit residual {res:.3g} above {max_residual:g}")
    return Extrapolation(float(L), float(p), res)


# ---------------------------------------------------------------------------
# reports


@dataclass
class EnergyReport:
    mode: str
    couplings: tuple[float, float]
    radii: list
    values: list
    limit: float | None
    exponent: float | None
    residual: float | None
    target: float | None = None
    tol: float = 0.01
    passed: bool | None = None
    terms: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise EnergyError("radii must be strictly increasing")

    def relative_error(self) -> float | None:
        if self.target is None or self.limit is None:
            return None
        return abs(self.limit - self.target) / max(abs(self.target), 1.0)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "couplings": list(self.couplings), "radii": list(self.radii),
            "values": list(self.values), "limit": self.limit, "exponent": self.exponent,
            "residual": self.residual, "target": self.target, "tol": self.tol, "pass": self.passed,
            "notes": list(self.notes),
        }


def _finish(report: EnergyReport) -> EnergyReport:
    try:
        ex = extrapolate(list(zip(report.radii, report.values)))
        report.limit, report.exponent, report.residual = ex.limit, ex.exponent, ex.residual
    except NonConvergent as err:
        report.notes.append(f"no limit: {err}")
        report.passed = False if report.target is not None else None
        return report
    if report.target is not None:
        report.passed = report.relative_error() <= report.tol
    return report


# ---------------------------------------------------------------------------
# charge integral


def _sphere_points(r: float, quad: SphereQuadrature, chart: str) -> ChartPoint:
    n = quad.theta.size
    if chart == SPHERICAL:
        c = np.stack([np.zeros(n), np.full(n, r), quad.theta, quad.phi], axis=-1)
    else:
        c = np.concatenate([np.zeros((n, 1)), r * quad.normals], axis=-1)
    return ChartPoint(chart, c)


def _sphere_frame(r: float, quad: SphereQuadrature, chart: str):
    """Coordinate components of d rho, e_theta, e_phi on the sphere of radius r."""
    n = quad.theta.size
    st, ct = np.sin(quad.theta), np.cos(quad.theta)
    sp, cp = np.sin(quad.phi), np.cos(quad.phi)
    drho = np.zeros((n, 4))
    eth = np.zeros((n, 4))
    eph = np.zeros((n, 4))
    if chart == SPHERICAL:
        drho[:, 1] = 1.0
        eth[:, 2] = 1.0
        eph[:, 3] = 1.0
    else:
        drho[:, 1:] = quad.normals
        eth[:, 1:] = r * np.stack([ct * cp, ct * sp, -st], axis=-1)
        eph[:, 1:] = r * np.stack([-st * sp, st * cp, np.zeros(n)], axis=-1)
    return drho, eth, eph


def unit_normals(g: np.ndarray, drho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Future unit normal n of t = const and the outward unit normal nu inside the slice."""
    gi = np.linalg.inv(g)
    lapse = 1.0 / np.sqrt(-gi[..., 0, 0])
    n = -lapse[..., None] * gi[..., :, 0]
    grad = np.einsum("...ab,...b->...a", gi, drho)
    nl = np.einsum("...ab,...b->...a", g, n)
    proj = grad + np.einsum("...a,...a->...", nl, grad)[..., None] * n
    norm = np.sqrt(np.einsum("...a,...ab,...b->...", proj, g, proj))
    return n, proj / norm[..., None]


def charge_integral(Q: Callable[[ChartPoint], np.ndarray], background: MetricSpec, r: float,
                    quad: SphereQuadrature, chart: str = SPHERICAL) -> float:
    """``-int Q(n, nu) dA`` over the coordinate sphere of radius r at t = 0.

    Q maps a batch of chart points to the (4, 4) components of the charge
    two-form; n, nu and the area element come from the background metric.
    """
    p = _sphere_points(r, quad, chart)
    g = geo.eval_metric(background, p, order=1).value
    drho, eth, eph = _sphere_frame(r, quad, chart)
    n, nu = unit_normals(g, drho)
    Qv = np.asarray(Q(p))
    qnn = np.einsum("...ab,...a,...b->...", Qv, n, nu)
    hab = np.stack([
        np.stack([np.einsum("...a,...ab,...b->...", u, g, w) for w in (eth, eph)], axis=-1)
        for u in (eth, eph)], axis=-2)
    area = np.sqrt(np.linalg.det(hab)) / np.sin(quad.theta)  # dA / dw
    return -quad.integrate(qnn * area)


def fourth_order_charge(background: MetricSpec, h: lin.Perturbation, xi: lin.KillingField,
                        cp: CouplingPair, variant: str = "general_einstein") -> Callable:
    def Q(p):
        return lin.q_fourth(background, h, xi, cp, p, variant=variant, with_direct=False).Q.value

    return Q


def gr_charge(background: MetricSpec, h: lin.Perturbation, xi: lin.KillingField) -> Callable:
    def Q(p):
        return lin.q_gr(background, h, xi, p).Q.value

    return Q


# ---------------------------------------------------------------------------
# energy densities


def _sphere_seeds(r: float, quad: SphereQuadrature, order: int) -> list:
    return idt.seeds(r * quad.normals, order)


def _d(f: Jet, k: int) -> Jet:
    for _ in range(k):
        f = spatial_grad(f)
    return f


def _mass_like(g: Jet) -> np.ndarray:
    """``d_j d_i d_i g_aa - d_j d_u d_i g_ui`` (index j free)."""
    d3 = _d(g, 3).value  # [a, b, i, u, j]: d_j d_u d_i g_ab
    t1 = np.einsum("...aaiij->...j", d3)
    t2 = np.einsum("...uiiuj->...j", d3)
    return t1 - t2


def _lapse_term(N2: Jet) -> np.ndarray:
    """``d_j d_i d_i N^2``."""
    return np.einsum("...iij->...j", _d(N2, 3).value)


def energy_terms(sl: SliceData, cp: CouplingPair, r: float, quad: SphereQuadrature,
                 order: int = 4) -> dict:
    """The six surface integrals of the energy at radius r (with couplings applied).

    The ``-|X|^2`` correction inside the lapse term is dropped.
    """
    if sl.g_ddot is None or sl.X_dot is None:
        raise idt.MissingField("slice needs gauge rates and g_ddot")
    al, be = cp.alpha, cp.beta
    x = _sphere_seeds(r, quad, order)
    nu = quad.normals
    g, N = sl.g(x), sl.N(x)
    gdd = sl.g_ddot(x)
    u = idt.lowered_shift_rate(sl, x)  # X_dot_i = d_t g_bar_0i
    dgdd = spatial_grad(gdd).value  # [j, i, k] = d_k g_ddot_ji
    ddu = _d(u, 2).value  # [j, a, b] = d_b d_a u_j
    r2 = r * r

    def surf(vec):
        return quad.integrate(np.einsum("...j,...j->...", vec, nu)) * r2

    m1 = surf(_mass_like(g))
    g_dd = surf(np.einsum("...jii->...j", dgdd) - np.einsum("...iij->...j", dgdd))
    x_dd = surf(np.einsum("...iij->...j", ddu) - np.einsum("...jii->...j", ddu))
    lap = surf(_lapse_term(N * N))
    tr_dd = surf(np.einsum("...iij->...j", dgdd))
    div_x = surf(np.einsum("...iji->...j", ddu))
    return {
        "metric": (1.5 * be + 2 * al) * m1,
        "g_ddot": 0.5 * be * g_dd,
        "x_dot": 0.5 * be * x_dd,
        "lapse": (be + 2 * al) * lap,
        "g_ddot_trace": -(be + 2 * al) * tr_dd,
        "x_dot_div": 2 * (be + 2 * al) * div_x,
    }


def energy_adm_form(sl: SliceData, cp: CouplingPair, r: float, quad: SphereQuadrature,
                    order: int = 4) -> float:
    return float(sum(energy_terms(sl, cp, r, quad, order).values()))


def energy_static(g: Callable, N2: Callable, cp: CouplingPair, r: float, quad: SphereQuadrature,
                  order: int = 3) -> float:
    """Static energy: metric term weighted by ``3 beta/2 + 2 alpha`` and lapse term by ``beta + 2 alpha``.

    g and N2 are closures on cartesian seeds returning the spatial metric and
    the squared lapse.
    """
    x = _sphere_seeds(r, quad, order)
    nu = quad.normals
    m1 = np.einsum("...j,...j->...", _mass_like(g(x)), nu)
    lap = np.einsum("...j,...j->...", _lapse_term(N2(x)), nu)
    al, be = cp.alpha, cp.beta
    return quad.integrate((1.5 * be + 2 * al) * m1 + (be + 2 * al) * lap) * r * r


def static_fields(spec: MetricSpec) -> tuple[Callable, Callable]:
    """Cartesian spatial metric and squared lapse of a static lapse metric."""
    def N2(x):
        return spec.lapse2(idt.radius(x))

    def g(x):
        r = idt.radius(x)
        f = spec.lapse2(r)
        w = (jets.reciprocal(f) - 1.0) / (r * r)
        xs = jets.stack([x[1], x[2], x[3]], axis=-1)
        outer = einsum("...i,...j->...ij", xs, xs)
        return idt._eye(x) + outer * w[..., None, None]

    return g, N2


def adm_mass_integral(g: Callable, r: float, quad: SphereQuadrature, order: int = 2) -> float:
    """``int (d_i g_ji - d_j g_ii) nu_j r^2 dw`` (unnormalised)."""
    x = _sphere_seeds(r, quad, order)
    dg = spatial_grad(g(x)).value  # [j, i, k] = d_k g_ji
    vec = np.einsum("...jii->...j", dg) - np.einsum("...iij->...j", dg)
    return quad.integrate(np.einsum("...j,...j->...", vec, quad.normals)) * r * r


# ---------------------------------------------------------------------------
# energies with targets


def lambda_ae_target(m: float, lam: float, cp: CouplingPair) -> float:
    return 40.0 * OMEGA2 * m * lam * (2.0 * cp.beta / 3.0 + cp.alpha)


def fsmk_target(cp: CouplingPair, c2: float) -> float:
    return 8.0 * math.pi * cp.alpha * c2


def energy_static_report(spec: MetricSpec, cp: CouplingPair, radii=DEFAULT_RADII,
                         quad: SphereQuadrature | None = None, target: float | None = None,
                         tol: float = 0.01) -> EnergyReport:
    quad = quad or sphere_quadrature(8, 16)
    g, N2 = static_fields(spec)
    vals = [energy_static(g, N2, cp, r, quad) for r in radii]
    rep = EnergyReport("static", (cp.alpha, cp.beta), list(radii), vals, None, None, None, target, tol)
    return _finish(rep)


def energy_lambda_ae(sl: SliceData, cp: CouplingPair, radii=DEFAULT_RADII,
                     quad: SphereQuadrature | None = None, mass: float | None = None,
                     tol: float = 0.01) -> EnergyReport:
    """Extrapolated energy of a populated slice with its closed-form target.

    For ``beta = -2 alpha`` the target is ``-(10/3) alpha Lambda`` times the
    extrapolated ADM integral; otherwise it needs the mass (slice metadata).
    """
    if sl.g_ddot is None:
        raise idt.MissingGaugeRates("populate rates and g_ddot first")
    quad = quad or sphere_quadrature(8, 16)
    radii = list(radii)
    terms = [energy_terms(sl, cp, r, quad) for r in radii]
    vals = [float(sum(t.values())) for t in terms]
    rep = EnergyReport("lambda-ae", (cp.alpha, cp.beta), radii, vals, None, None, None, None, tol,
                       terms=terms)
    rep.notes.append("lapse term without the -|X|^2 correction")
    if mass is None:
        mass = sl.meta.get("mass")
    if abs(cp.beta + 2 * cp.alpha) <= 1e-14 * max(1.0, abs(cp.alpha)):
        adm = [adm_mass_integral(sl.g, r, quad) for r in radii]
        lim = extrapolate(list(zip(radii, adm))).limit
        rep.target = -(10.0 / 3.0) * cp.alpha * sl.lam * lim
        rep.notes.append(f"ADM integral limit {lim:.12g}")
    elif mass is not None:
        rep.target = lambda_ae_target(mass, sl.lam, cp)
    return _finish(rep)


# ---------------------------------------------------------------------------
# flux balance


@dataclass(frozen=True)
class Cylinder:
    radius: float
    T: float
    center: tuple = (0.0, 0.0, 0.0)


@dataclass
class FluxBalance:
    top: float
    bottom: float
    lateral: float
    imbalance: float
    error_estimate: float

    @property
    def max_term(self) -> float:
        return max(abs(self.top), abs(self.bottom), abs(self.lateral))

    @property
    def passed(self) -> bool:
        return abs(self.imbalance) <= self.error_estimate


CHUNK = 48


def current_density(background: MetricSpec, h: lin.Perturbation, xi: lin.KillingField,
                    cp: CouplingPair, coords: np.ndarray, flat_tol: float = 1e-9) -> np.ndarray:
    """``sqrt|g| P^mu`` with ``P_m = (DA.h)_{n m} xi^n`` at cartesian points."""
    coords = np.asarray(coords, float)
    parts = [_current_chunk(background, h, xi, cp, coords[i:i + CHUNK], flat_tol)
             for i in range(0, coords.shape[0], CHUNK)]
    return np.concatenate(parts, axis=0)


def _current_chunk(background, h, xi, cp, coords, flat_tol):
    p = ChartPoint(CARTESIAN, coords)
    L = lin.linearize_at(background, h, p, 4)
    res = geo.a_tensor(L.pert, cp, strict=False)
    if float(np.max(np.abs(res.A.base().value))) > flat_tol * max(res.scale, 1.0):
        raise lin.BackgroundNotFlat("background A does not vanish on the cylinder")
    dA = res.A.eps_part().value
    xv = xi.components(p, 1).value
    P = np.einsum("...nm,...n->...m", dA, xv)
    g = L.bg.g.value
    Pu = np.einsum("...ab,...b->...a", L.bg.ginv.value, P)
    return np.sqrt(np.abs(np.linalg.det(g)))[..., None] * Pu


def _flux_terms(background, h, xi, cp, cyl: Cylinder, n_r: int, quad: SphereQuadrature, n_t: int):
    c = np.asarray(cyl.center, float)
    u, wu = np.polynomial.legendre.leggauss(n_r)
    rad = 0.5 * cyl.radius * (u + 1.0)
    wr = 0.5 * cyl.radius * wu * rad ** 2
    nodes = quad.normals
    ball = (rad[:, None, None] * nodes[None, :, :]).reshape(-1, 3) + c
    wball = (wr[:, None] * quad.weights[None, :]).ravel()

    def slab(t):
        pts = np.concatenate([np.full((ball.shape[0], 1), t), ball], axis=-1)
        J = current_density(background, h, xi, cp, pts)
        return float(np.sum(wball * J[:, 0]))

    bottom = slab(0.0)
    top = slab(cyl.T)
    v, wv = np.polynomial.legendre.leggauss(n_t)
    ts = 0.5 * cyl.T * (v + 1.0)
    wt = 0.5 * cyl.T * wv
    surf = nodes * cyl.radius + c
    pts = np.concatenate([
        np.repeat(ts, surf.shape[0])[:, None], np.tile(surf, (n_t, 1))], axis=-1)
    J = current_density(background, h, xi, cp, pts)
    flux = np.einsum("ka,ka->k", J[:, 1:], np.tile(nodes, (n_t, 1)))
    w = (wt[:, None] * quad.weights[None, :]).ravel() * cyl.radius ** 2
    lateral = float(np.sum(w * flux))
    return top, bottom, lateral


def flux_balance(background: MetricSpec, h: lin.Perturbation, xi: lin.KillingField, cp: CouplingPair,
                 cyl: Cylinder, n_r: int = 6, quad: SphereQuadrature | None = None,
                 n_t: int = 4) -> FluxBalance:
    """Stokes balance of the conserved current on ``ball x [0, T]``.

    With ``J = sqrt|g| P`` the coordinate divergence vanishes, so
    ``bottom - top - lateral = 0`` up to quadrature error.  The error estimate
    is the change of the three terms between the given and a refined rule.
    """
    quad = quad or sphere_quadrature(6, 12)
    top, bottom, lateral = _flux_terms(background, h, xi, cp, cyl, n_r, quad, n_t)
    fine = sphere_quadrature(quad.n_theta + 2, quad.n_phi + 4)
    t2, b2, l2 = _flux_terms(background, h, xi, cp, cyl, n_r + 2, fine, n_t + 2)
    imbalance = b2 - t2 - l2
    est = abs(t2 - top) + abs(b2 - bottom) + abs(l2 - lateral)
    scale = max(abs(t2), abs(b2), abs(l2))
    est = max(est, 1e-12 * scale)
    return FluxBalance(t2, b2, l2, imbalance, est)
