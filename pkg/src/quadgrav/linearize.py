"""First-order variations around a background metric and the associated charges.

Everything here is computed from ``A(g + eps h)`` with eps a nilpotent jet
direction, so ``DA.h`` and the linearized curvatures are exact to truncation.
The fourth-order superpotential ``Q`` is the negative of the antisymmetric
bracket whose divergence reproduces ``(DA.h)(xi, .)``; with the co-differential
``delta a = -nabla^i a_i.`` this means ``P = delta Q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import geometry as geo
from . import jets
from .geometry import CARTESIAN, SPHERICAL, ChartPoint, CouplingPair, Curvature, MetricSpec
from .jets import Jet, einsum

KILLING_TOL = 1e-10
EINSTEIN_TOL = 1e-9
VARIANTS = ("general_einstein", "general_einstein_g", "ricci_flat", "einstein_family")


class LinearizeError(ValueError):
    pass


class NotKilling(LinearizeError):
    pass


class NotEinstein(LinearizeError):
    pass


class BackgroundNotFlat(LinearizeError):
    pass


# ---------------------------------------------------------------------------
# perturbations


def _sym(rows: list[list[Jet]]) -> Jet:
    for i in range(4):
        for j in range(i):
            rows[i][j] = rows[j][i]
    return jets.stack([jets.stack(r, -1) for r in rows], -2)


def _h_inverse_r(x, chart, prm):
    a = prm.get("amp", 1.0)
    t, X, Y, Z = x
    zero = t * 0.0
    r = jets.sqrt(X * X + Y * Y + Z * Z)
    inv = a / r
    return _sym([[zero, zero, zero, zero], [None, inv, zero, zero], [None, None, inv, zero],
                 [None, None, None, inv]])


def _h_bump1(x, chart, prm):
    a = prm.get("amp", 1.0)
    t, X, Y, Z = x
    w = jets.exp(-((X - 1.0) * (X - 1.0) + Y * Y + (Z + 0.5) * (Z + 0.5)) * 0.1 - t * t * 0.05)
    rows = [
        [w * (1.0 + X * 0.3), w * Y * 0.2, w * jets.sin(Z) * 0.4, w * (t + X) * 0.1],
        [None, w * (0.5 + Y * Y * 0.1), w * X * Z * 0.2, w * jets.cos(Y) * 0.3],
        [None, None, w * (0.7 - Z * 0.2), w * (X + Y) * 0.15],
        [None, None, None, w * (0.4 + t * 0.3 + X * Y * 0.05)],
    ]
    return _sym(rows) * a


def _h_poly(x, chart, prm):
    a = prm.get("amp", 1.0)
    t, X, Y, Z = x
    rows = [
        [X * Y * 0.1 + 0.2, Z * 0.3 + t * 0.1, X * X * 0.05, jets.sin(Y) * 0.2],
        [None, jets.cos(X + t) * 0.3, Y * Z * 0.1, X * 0.2 + 0.1],
        [None, None, Z * Z * 0.1 - t * X * 0.05, jets.exp(Y * 0.3) * 0.1],
        [None, None, None, X * Y * Z * 0.02 + 0.3],
    ]
    return _sym(rows) * a


@dataclass(frozen=True)
class Perturbation:
    """A symmetric (0,2) field; ``kind`` selects a closed-form builder."""

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)
    tau: float = 1.0

    def __post_init__(self):
        if self.kind not in PERTURBATIONS:
            raise LinearizeError(f"unknown perturbation {self.kind!r}")
        object.__setattr__(self, "params", dict(self.params))


_CARTESIAN_H = {"inverse_r": _h_inverse_r, "bump1": _h_bump1, "poly": _h_poly}
PERTURBATIONS = ("zero", "inverse_r", "bump1", "poly", "family_tangent", "background")


def family_tangent(spec: MetricSpec, p: ChartPoint, order: int, param: str = "m") -> Jet:
    """d/ds of the catalog metric with ``param -> param + s`` at s = 0 (exact)."""
    prm = dict(spec.params)
    b = jets.basis(order, True)
    v = np.zeros(b.size)
    v[0] = prm.get(param, 0.0)
    v[jets.basis(order, False).size] = 1.0
    prm[param] = Jet(v, b)
    return _eval_with_params(spec, prm, p, order).eps_part()


def _eval_with_params(spec: MetricSpec, prm: dict, p: ChartPoint, order: int) -> Jet:
    e = spec.entry
    if p.chart in e.charts:
        x = [xi.with_eps() for xi in jets.seeds(p.coords, order)]
        g = e.builder(x, p.chart, prm)
    else:
        q = geo.convert(p, e.native)
        x = [xi.with_eps() for xi in jets.seeds(q.coords, order)]
        gn = e.builder(x, e.native, prm)
        g = geo.chart_transform(gn, e.native, p.chart, q)
    if spec.conformal is not None:
        s, sigma = spec.conformal
        om = geo.conformal_factor(jets.seeds(p.coords, order), p.chart, s, sigma)
        g = g * (om * om)[..., None, None]
    return g


def eval_perturbation(h: Perturbation, spec: MetricSpec, p: ChartPoint, order: int) -> Jet:
    if h.kind == "zero":
        return Jet.zeros(p.coords.shape[:-1] + (4, 4), order)
    if h.kind == "background":
        return geo.eval_metric(spec, p, order) * h.params.get("amp", 1.0)
    if h.kind == "family_tangent":
        param = "lambda" if h.params.get("lambda_direction") else "m"
        return family_tangent(spec, p, order, param) * h.params.get("amp", 1.0)
    build = _CARTESIAN_H[h.kind]
    if p.chart == CARTESIAN:
        return build(jets.seeds(p.coords, order), CARTESIAN, h.params)
    q = geo.convert(p, CARTESIAN)
    hc = build(jets.seeds(q.coords, order), CARTESIAN, h.params)
    return geo.chart_transform(hc, CARTESIAN, p.chart, q)


def perturbed(g: Jet, h: Jet) -> Jet:
    ge = g.with_eps()
    c = ge.coeffs.copy()
    nb = g.basis.size if not g.has_eps else jets.basis(g.basis.order, False).size
    c[..., nb:] = c[..., nb:] + h.coeffs[..., :nb]
    return Jet(c, ge.basis, min(g.cap, h.cap))


# ---------------------------------------------------------------------------
# Killing fields


def _xi_dt(x, chart):
    one = x[0] * 0.0 + 1.0
    zero = x[0] * 0.0
    return jets.stack([one, zero, zero, zero], -1)


def _xi_rot_z(x, chart):
    zero = x[0] * 0.0
    if chart == SPHERICAL:
        return jets.stack([zero, zero, zero, zero + 1.0], -1)
    return jets.stack([zero, -x[2], x[1], zero], -1)


def _xi_dx(x, chart):
    zero = x[0] * 0.0
    if chart == CARTESIAN:
        return jets.stack([zero, zero + 1.0, zero, zero], -1)
    r, th, ph = x[1], x[2], x[3]
    st, ct, sp, cp = jets.sin(th), jets.cos(th), jets.sin(ph), jets.cos(ph)
    return jets.stack([zero, st * cp, ct * cp / r, -sp / (r * st)], -1)


def _xi_boost_x(x, chart):
    if chart != CARTESIAN:
        raise LinearizeError("boost field is provided in the cartesian chart")
    zero = x[0] * 0.0
    return jets.stack([x[1], x[0], zero, zero], -1)


KILLING = {"dt": _xi_dt, "rot_z": _xi_rot_z, "dx": _xi_dx, "boost_x": _xi_boost_x}


@dataclass(frozen=True)
class KillingField:
    kind: str = "dt"

    def __post_init__(self):
        if self.kind not in KILLING:
            raise LinearizeError(f"unknown Killing field {self.kind!r}")

    def components(self, p: ChartPoint, order: int) -> Jet:
        return KILLING[self.kind](jets.seeds(p.coords, order), p.chart)


# ---------------------------------------------------------------------------
# core evaluation


@dataclass
class Linearization:
    """Background curvature plus eps-parts of the perturbed curvature stack."""

    bg: Curvature
    h: Jet
    ric1: Jet
    R1: Jet
    G1: Jet
    pert: Curvature


def linearize_at(spec: MetricSpec, h: Perturbation, p: ChartPoint, order: int = jets.DEFAULT_ORDER,
                 g: Jet | None = None) -> Linearization:
    if g is None:
        g = geo.eval_metric(spec, p, order)
    hj = eval_perturbation(h, spec, p, order)
    ge = perturbed(g, hj)
    pc = geo.curvature_stack(ge)
    bg = Curvature(pc.g.base(), pc.ginv.base(), pc.gamma.base(), pc.riem.base(), pc.riem_low.base(),
                   pc.ric.base(), pc.R.base(), pc.G.base())
    return Linearization(bg, hj, pc.ric.eps_part(), pc.R.eps_part(), pc.G.eps_part(), pc)


def linearized_a(spec: MetricSpec, h: Perturbation, c: CouplingPair, p: ChartPoint,
                 order: int = jets.DEFAULT_ORDER) -> Jet:
    lin = linearize_at(spec, h, p, order)
    return geo.a_tensor(lin.pert, c).A.eps_part()


def linearized_curvature(spec: MetricSpec, h: Perturbation, p: ChartPoint,
                         order: int = jets.DEFAULT_ORDER) -> dict:
    lin = linearize_at(spec, h, p, order)
    return {"ric": lin.ric1, "R": lin.R1, "G": lin.G1}


def trace_reversed(h: Jet, g: Jet, ginv: Jet) -> Jet:
    tr = einsum("...ab,...ab->...", ginv.truncated(h.cap), h)
    return h - g.truncated(h.cap) * (tr * 0.5)[..., None, None]


def k_from_h(h: Jet, g: Jet, ginv: Jet) -> Jet:
    """K_{b n a m} = (g_mb H_na + g_na H_mb - g_ab H_mn - g_mn H_ab)/2."""
    H = trace_reversed(h, g, ginv)
    gt = g.truncated(H.cap)
    t1 = einsum("...mb,...na->...bnam", gt, H)
    t2 = einsum("...na,...mb->...bnam", gt, H)
    t3 = einsum("...ab,...mn->...bnam", gt, H)
    t4 = einsum("...mn,...ab->...bnam", gt, H)
    return (t1 + t2 - t3 - t4) * 0.5


def k_tensor(spec: MetricSpec, h: Perturbation, p: ChartPoint, order: int = jets.DEFAULT_ORDER) -> Jet:
    g = geo.eval_metric(spec, p, order)
    return k_from_h(eval_perturbation(h, spec, p, order), g, geo.inverse_metric(g))


@dataclass
class ChargeForms:
    P: Jet
    Q: Jet
    variant: str
    floor: float = 0.0


def _xi_derivs(xi: Jet, bg: Curvature):
    """(xi_a, nabla_c xi^a as (a, c), nabla_c xi_a as (a, c))."""
    xi_low = einsum("...ab,...b->...a", bg.g.truncated(xi.cap), xi)
    dxi_up = geo.covariant_derivative_vector(xi, bg.gamma)
    dxi_low = geo.covariant_derivative(xi_low, bg.gamma, 1)
    return xi_low, dxi_up, dxi_low


def killing_residual(xi: Jet, bg: Curvature) -> float:
    _, _, d = _xi_derivs(xi, bg)
    scale = max(1.0, float(np.max(np.abs(d.value))))
    return float(np.max(np.abs((d + d.swapaxes(-1, -2)).value))) / scale


def _check_killing(xi: Jet, bg: Curvature, tol: float = KILLING_TOL) -> float:
    res = killing_residual(xi, bg)
    if res > tol:
        raise NotKilling(f"Killing residual {res:.3e} exceeds {tol:.1e}")
    return res


def background_lambda(bg: Curvature, tol: float = EINSTEIN_TOL) -> float:
    """Lambda with Ric = Lambda g, or NotEinstein."""
    lam = bg.R.value / 4.0
    res = bg.ric.value - bg.g.value * np.asarray(lam)[..., None, None]
    scale = max(1.0, float(np.max(np.abs(bg.ric.value))))
    if np.max(np.abs(res)) > tol * scale:
        raise NotEinstein(f"background is not Einstein (residual {np.max(np.abs(res)):.3e})")
    lam = np.atleast_1d(lam)
    if np.ptp(lam) > tol * max(1.0, np.max(np.abs(lam))):
        raise NotEinstein("Einstein constant varies between points")
    return float(lam.flat[0])


def _qgr(lin: Linearization, xi: Jet) -> tuple[Jet, Jet]:
    """(Q^GR_{b m}, P^GR_m) for the background of ``lin``."""
    bg = lin.bg
    K = k_from_h(lin.h, bg.g, bg.ginv)  # (b n a m)
    dK = geo.covariant_derivative(K, bg.gamma, 4)  # (b m a n c) with derivative last
    cap = dK.cap
    gi = bg.ginv.truncated(cap)
    divK = einsum("...nc,...bmanc->...bma", gi, dK)
    _, dxi_up, _ = _xi_derivs(xi, bg)
    dxi_raised = einsum("...nc,...ac->...an", gi, dxi_up.truncated(cap))  # nabla^n xi^a as (a, n)
    Kt = K.truncated(cap)
    Q = einsum("...bma,...a->...bm", divK, xi.truncated(cap)) - einsum("...bnam,...an->...bm", Kt, dxi_raised)
    lam = float(np.mean(bg.R.value)) / 4.0
    E1 = lin.G1 + lin.h.truncated(lin.G1.cap) * lam  # D(G + Lambda g).h
    P = einsum("...nm,...n->...m", E1, xi.truncated(E1.cap))
    return Q, P


def q_gr(spec: MetricSpec, h: Perturbation, xi: KillingField, p: ChartPoint,
         order: int = jets.DEFAULT_ORDER, check: bool = True) -> ChargeForms:
    lin = linearize_at(spec, h, p, order)
    xj = xi.components(p, order)
    if check:
        _check_killing(xj, lin.bg)
    Q, P = _qgr(lin, xj)
    return ChargeForms(P, Q, "gr")


def codifferential(Q: Jet, bg: Curvature) -> Jet:
    """(delta Q)_m = -nabla^t Q_{t m}."""
    dQ = geo.covariant_derivative(Q, bg.gamma, 2)  # (t m c)
    return -einsum("...tc,...tmc->...m", bg.ginv.truncated(dQ.cap), dQ)


def _bracket(lin: Linearization, xi: Jet, cp: CouplingPair, lam: float, variant: str) -> Jet:
    al, be = cp.alpha, cp.beta
    bg = lin.bg
    QGR, PGR = _qgr(lin, xi)
    if variant == "einstein_family":
        return QGR * (-2 * (4 * al + be) * lam)
    xi_low, dxi_up, dxi_low = _xi_derivs(xi, bg)
    dP = geo.covariant_derivative(PGR, bg.gamma, 1)  # (m t) = nabla_t P_m
    cap = dP.cap
    dPform = dP.swapaxes(-1, -2) - dP  # nabla_t P_m - nabla_m P_t as (t m)
    dR = lin.R1.grad().truncated(cap)  # nabla_m R'
    R1 = lin.R1.truncated(cap)
    xl = xi_low.truncated(cap)
    dxu = dxi_up.truncated(cap)  # nabla_c xi^a as (a, c)
    dxl = dxi_low.truncated(cap)  # nabla_c xi_a as (a, c)
    h = lin.h.truncated(cap)
    if variant == "general_einstein_g":
        E1 = (lin.G1 + lin.h.truncated(lin.G1.cap) * lam).truncated(cap)
        # E1_{t n} nabla_m xi^n - E1_{m n} nabla_t xi^n
        t = einsum("...tn,...nm->...tm", E1, dxu)
        two_form = t - t.swapaxes(-1, -2)
        grad_r = einsum("...m,...t->...tm", dR, xl)
        grad_r = grad_r - grad_r.swapaxes(-1, -2)  # nabla_m R' xi_t - nabla_t R' xi_m
        r_term = R1[..., None, None] * dxl  # R' nabla_t xi_m  (dxl[t?]) see below
        r_term = r_term.swapaxes(-1, -2)  # dxl is (a=m, c=t); need (t, m) = nabla_t xi_m
        out = ((dPform + two_form * 2.0) * be
               - (grad_r + r_term) * (2 * al + be)
               + QGR.truncated(cap) * (-2 * (4 * al + be) * lam))
        return out
    ric1 = lin.ric1.truncated(cap)
    t = einsum("...tn,...nm->...tm", ric1, dxu)
    two_form = t - t.swapaxes(-1, -2)
    grad_r = einsum("...m,...t->...tm", dR, xl)
    grad_r = grad_r - grad_r.swapaxes(-1, -2)
    r_term = (R1[..., None, None] * dxl).swapaxes(-1, -2)
    out = dPform * be + two_form * (2 * be) - grad_r * (2 * al + be) - r_term * (2 * al - be)
    if variant == "ricci_flat":
        return out
    th = einsum("...tn,...nm->...tm", h, dxu)
    out = out + QGR.truncated(cap) * (-2 * (4 * al + be) * lam) - (th - th.swapaxes(-1, -2)) * (2 * be * lam)
    return out


def q_fourth(spec: MetricSpec, h: Perturbation, xi: KillingField, cp: CouplingPair, p: ChartPoint,
             variant: str = "general_einstein", order: int = jets.DEFAULT_ORDER,
             lam: float | None = None, with_direct: bool = True) -> ChargeForms:
    """Q (antisymmetric) and the direct P_m = (DA.h)_{n m} xi^n."""
    if variant not in VARIANTS:
        raise LinearizeError(f"unknown variant {variant!r}")
    lin = linearize_at(spec, h, p, order)
    xj = xi.components(p, order)
    _check_killing(xj, lin.bg)
    lam_bg = background_lambda(lin.bg)
    if lam is None:
        lam = lam_bg
    if variant == "ricci_flat" and abs(lam_bg) > EINSTEIN_TOL:
        raise NotEinstein("ricci_flat variant needs a Ricci-flat background")
    Q = -_bracket(lin, xj, cp, lam, variant)
    Q = (Q - Q.swapaxes(-1, -2)) * 0.5
    if with_direct:
        dA = geo.a_tensor(lin.pert, cp).A.eps_part()
        P = einsum("...nm,...n->...m", dA, xj.truncated(dA.cap))
    else:
        P = Jet.zeros(Q.shape[:-1], order)
    return ChargeForms(P, Q, variant, max(Q.norm_scale(), _charge_floor(lin, xj, cp)))


def _charge_floor(lin: Linearization, xj: Jet, cp: CouplingPair) -> float:
    """Linear size of DA.h: couplings times |xi| |Riem| |Riem'|.

    Keeps the relative measure meaningful when P and delta Q both vanish
    (for h = g, say), where the superpotential itself is rounding noise.
    """
    riem = lin.pert.riem_low
    return (abs(cp.alpha) + abs(cp.beta)) * xj.base().norm_scale() * riem.base().norm_scale() \
        * riem.eps_part().norm_scale()


def _relative(a: np.ndarray, b: np.ndarray, floor: float = 0.0) -> float:
    # floor: natural size of the forms, so P = 0 = delta Q is not 0/0
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), floor, 1e-300)
    return float(np.max(np.abs(a - b))) / scale


@dataclass
class ConservationReport:
    div_P_residual: float
    p_eq_dq_residual: float | None
    killing_residual: float
    scale: float


def conservation_check(spec: MetricSpec, h: Perturbation, xi: KillingField, cp: CouplingPair, p: ChartPoint,
                       flat_tol: float = 1e-9, with_charge: bool = True) -> ConservationReport:
    """div P and P = delta Q residuals for P = (DA.h)(xi, .); needs five metric derivatives."""
    order = 5
    lin = linearize_at(spec, h, p, order)
    res = geo.a_tensor(lin.pert, cp)
    A0 = res.A.base()
    if float(np.max(np.abs(A0.value))) > flat_tol * max(res.scale, 1.0):
        raise BackgroundNotFlat("background A does not vanish at the point")
    xj = xi.components(p, order)
    kres = killing_residual(xj, lin.bg)
    dA = res.A.eps_part()
    P = einsum("...nm,...n->...m", dA, xj.truncated(dA.cap))
    dP = geo.covariant_derivative(P, lin.bg.gamma, 1)
    div = einsum("...mc,...mc->...", lin.bg.ginv.truncated(dP.cap), dP).value
    scale = max(float(np.max(np.abs(dA.coeffs))), _charge_floor(lin, xj, cp), 1e-300)
    pq = None
    if with_charge:
        try:
            lam = background_lambda(lin.bg)
        except NotEinstein:
            lam = None
        if lam is not None:
            Q = -_bracket(lin, xj, cp, lam, "general_einstein")
            floor = max(Q.norm_scale(), _charge_floor(lin, xj, cp))
            pq = _relative(P.truncated(0).value, codifferential(Q, lin.bg).value, floor)
    return ConservationReport(float(np.max(np.abs(div))) / scale, pq, kres, scale)


def p_eq_dq_residual(forms: ChargeForms, spec: MetricSpec, p: ChartPoint, order: int = jets.DEFAULT_ORDER) -> float:
    c = geo.curvature_stack(geo.eval_metric(spec, p, order))
    return _relative(forms.P.value, codifferential(forms.Q, c).value, max(forms.Q.norm_scale(), forms.floor))
