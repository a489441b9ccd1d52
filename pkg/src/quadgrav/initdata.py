"""Initial data with Lambda-asymptotically-Euclidean ends, wave-gauge rates
and reconstruction of the second time derivative of the spatial metric.

Every field is a closure ``f(x) -> Jet`` on the four cartesian seed jets
``x = (t, x1, x2, x3)``; spatial fields ignore ``t``.  The background is
``e_hat = dt^2 + delta`` in cartesian coordinates, so its Christoffel
symbols vanish and the S tensor is the Levi-Civita connection of the
space-time metric itself.

Space-time metric from slice data:
``g_bar = -N^2 dt^2 + g_ij (dx^i + X^i dt)(dx^j + X^j dt)``, extrinsic
curvature ``K = -(1/2N)(d_t g - L_X g)`` (future normal, so an expanding
slice has ``K = -c g``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import jets
from .geometry import christoffels, curvature_stack, inverse_metric
from .jets import Jet, einsum

Field = Callable[[list], Jet]
SPATIAL = (1, 2, 3)
BAD_OBSERVER_BOUND = 1.0


class InitDataError(ValueError):
    pass


class BadObserver(InitDataError):
    pass


class MissingGaugeRates(InitDataError):
    pass


class MissingField(InitDataError):
    pass


@dataclass(frozen=True)
class SliceData:
    g: Field  # g_ij, shape (3, 3)
    K: Field  # K_ij
    N: Field  # scalar
    X: Field  # X^i
    lam: float
    c: float
    sign: int = -1
    N_dot: Field | None = None
    X_dot: Field | None = None  # upper index
    g_ddot: Field | None = None
    tau: float = 1.0
    rho: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lam < 0:
            raise InitDataError("Lambda must be non-negative")
        if abs(self.c * self.c - self.lam / 3.0) > 1e-14 * max(1.0, self.lam):
            raise InitDataError("c^2 must equal Lambda/3")


@dataclass(frozen=True)
class ConstraintResiduals:
    hamiltonian: np.ndarray
    momentum: np.ndarray

    def max(self) -> float:
        return float(max(np.max(np.abs(self.hamiltonian)), np.max(np.abs(self.momentum))))


# ---------------------------------------------------------------------------
# small field helpers


def radius(x) -> Jet:
    return jets.sqrt(x[1] * x[1] + x[2] * x[2] + x[3] * x[3])


def spatial_grad(f: Jet) -> Jet:
    return jets.stack([f.partial(a) for a in SPATIAL], axis=-1)


def _eye(x, scale=1.0) -> Jet:
    j = Jet.constant(np.broadcast_to(np.eye(3), x[0].shape + (3, 3)) * scale, x[0].basis.order)
    return j


def _scalar(x, v) -> Jet:
    return Jet.constant(np.full(x[0].shape, float(v)), x[0].basis.order)


def _vector(x, v) -> Jet:
    return Jet.constant(np.broadcast_to(np.asarray(v, float), x[0].shape + (3,)), x[0].basis.order)


def flat_metric(x) -> Jet:
    return _eye(x)


def schwarzschild_metric(m: float) -> Field:
    """Conformally flat time-symmetric slice ``(1 + m/2r)^4 delta``."""

    def g(x):
        psi = 1.0 + (m * 0.5) / radius(x)
        p4 = psi * psi * psi * psi
        return _eye(x) * p4[..., None, None]

    return g


def conformally_flat_metric(a: float) -> Field:
    """``(1 + a/r)^4 delta``, ADM mass ``2a``."""

    def g(x):
        psi = 1.0 + a / radius(x)
        p4 = psi * psi * psi * psi
        return _eye(x) * p4[..., None, None]

    return g


SPATIAL_METRICS = {
    "flat": lambda prm: flat_metric,
    "schwarzschild": lambda prm: schwarzschild_metric(float(prm.get("m", 1.0))),
    "conformally_flat": lambda prm: conformally_flat_metric(float(prm.get("a", 0.5))),
}


def power_lapse(a: float, rho: float) -> Field:
    return lambda x: 1.0 + a * jets.jet_elementary("pow", radius(x), -rho)


def power_shift(b, rho: float) -> Field:
    b = np.asarray(b, float)

    def X(x):
        s = jets.jet_elementary("pow", radius(x), -rho)
        return _vector(x, b) * s[..., None]

    return X


def conformal_weight(s: float, sigma: float) -> Field:
    return lambda x: 1.0 + s * jets.jet_elementary("pow", radius(x), -sigma)


def unit_lapse(x) -> Jet:
    return _scalar(x, 1.0)


def zero_shift(x) -> Jet:
    return _vector(x, np.zeros(3))


# ---------------------------------------------------------------------------
# construction


def lambda_ae_from_time_symmetric(g: Field, lam: float, sign: int = -1, **meta) -> SliceData:
    """Map a time-symmetric vacuum slice to ``(g, K = sign*c*g)``."""
    if sign not in (-1, 1):
        raise InitDataError("sign must be +1 or -1")
    c = math.sqrt(lam / 3.0)
    return SliceData(g=g, K=lambda x: g(x) * (sign * c), N=unit_lapse, X=zero_shift,
                     lam=float(lam), c=c, sign=sign, meta=dict(meta))


def named_slice(name: str, params: dict, sign: int = -1) -> SliceData:
    if name not in SPATIAL_METRICS:
        raise InitDataError(f"unknown slice {name!r}")
    lam = float(params.get("lambda", 0.0))
    sl = lambda_ae_from_time_symmetric(SPATIAL_METRICS[name](params), lam, sign, name=name)
    mass = {"flat": 0.0, "schwarzschild": float(params.get("m", 1.0)),
            "conformally_flat": 2.0 * float(params.get("a", 0.5))}[name]
    sl.meta["mass"] = mass
    return sl


def with_observer(sl: SliceData, N: Field | None = None, X: Field | None = None,
                  rho: float | None = None) -> SliceData:
    """Same geometric data seen by other observers; derived rates are cleared."""
    return replace(sl, N=N or sl.N, X=X or sl.X, N_dot=None, X_dot=None, g_ddot=None,
                   rho=sl.rho if rho is None else rho, meta=dict(sl.meta))


def conformal_slice(sl: SliceData, omega: Field) -> SliceData:
    """Slice data of ``Omega^2 g_bar`` for a time-independent weight Omega.

    The rates of the rescaled metric are transported from those of g_bar,
    which must be populated: the rescaled metric is not Einstein, so they
    cannot be recomputed from the reduced equation.
    """
    if sl.N_dot is None or sl.X_dot is None or sl.g_ddot is None:
        raise MissingGaugeRates("populate rates and g_ddot before rescaling")

    def o2(x):
        w = omega(x)
        return w * w

    return replace(
        sl,
        g=lambda x: sl.g(x) * o2(x)[..., None, None],
        K=lambda x: sl.K(x) * omega(x)[..., None, None],
        N=lambda x: sl.N(x) * omega(x),
        N_dot=lambda x: sl.N_dot(x) * omega(x),
        g_ddot=lambda x: sl.g_ddot(x) * o2(x)[..., None, None],
        meta=dict(sl.meta, conformal=True),
    )


# ---------------------------------------------------------------------------
# evaluation


def seeds(points, order: int = jets.DEFAULT_ORDER) -> list:
    """Cartesian space-time seed jets at points of shape (..., 4) or (..., 3)."""
    p = np.asarray(points, float)
    if p.shape[-1] == 3:
        p = np.concatenate([np.zeros(p.shape[:-1] + (1,)), p], axis=-1)
    return jets.seeds(p, order)


def lie_metric(g: Jet, X: Jet) -> Jet:
    """``(L_X g)_ij = X^k d_k g_ij + g_kj d_i X^k + g_ik d_j X^k``."""
    cap = min(g.cap, X.cap) - 1
    dg = spatial_grad(g)
    dX = spatial_grad(X)  # dX[k, i] = d_i X^k
    gt = g.truncated(cap)
    t1 = einsum("...k,...ijk->...ij", X.truncated(cap), dg)
    t2 = einsum("...kj,...ki->...ij", gt, dX)
    return t1 + t2 + t2.swapaxes(-1, -2)


def g_dot(sl: SliceData, x) -> Jet:
    """``d_t g = -2 N K + L_X g``."""
    g, K, N, X = sl.g(x), sl.K(x), sl.N(x), sl.X(x)
    lx = lie_metric(g, X)
    return (K * N[..., None, None]).truncated(lx.cap) * (-2.0) + lx


def spacetime_metric(g: Jet, N: Jet, X: Jet) -> Jet:
    """``g_bar`` at fixed t as a (4, 4) jet from slice fields."""
    Xl = einsum("...ij,...j->...i", g, X)
    g00 = -(N * N) + einsum("...i,...i->...", Xl, X)
    top = jets.stack([g00, Xl[..., 0], Xl[..., 1], Xl[..., 2]], axis=-1)
    rows = [top] + [jets.stack([Xl[..., i], g[..., i, 0], g[..., i, 1], g[..., i, 2]], axis=-1)
                    for i in range(3)]
    return jets.stack(rows, axis=-2)


def time_derivative_metric(g: Jet, N: Jet, X: Jet, gd: Jet, Nd: Jet, Xd: Jet) -> Jet:
    """``d_t g_bar`` at t=0 from slice fields and rates (Xd upper index)."""
    cap = min(gd.cap, Nd.cap, Xd.cap)
    g, N, X = g.truncated(cap), N.truncated(cap), X.truncated(cap)
    u = einsum("...ij,...j->...i", gd, X) + einsum("...ij,...j->...i", g, Xd)
    gX = einsum("...ij,...j->...i", gd, X)
    u0 = (N * Nd) * (-2.0) + einsum("...i,...i->...", gX, X) \
        + einsum("...i,...i->...", einsum("...ij,...j->...i", g, X), Xd) * 2.0
    top = jets.stack([u0, u[..., 0], u[..., 1], u[..., 2]], axis=-1)
    rows = [top] + [jets.stack([u[..., i], gd[..., i, 0], gd[..., i, 1], gd[..., i, 2]], axis=-1)
                    for i in range(3)]
    return jets.stack(rows, axis=-2)


def linear_extension(g0: Jet, g1: Jet, t: Jet) -> Jet:
    """``G(t, x) = g0(x) + t g1(x)``: agrees with g_bar to first order in t."""
    return g0.truncated(g1.cap) + g1 * t[..., None, None]


def spacetime_jet(sl: SliceData, x) -> Jet:
    """Linear-in-t extension of g_bar; exact Christoffels at t=0."""
    if sl.N_dot is None or sl.X_dot is None:
        raise MissingGaugeRates("wave-gauge rates not populated")
    g, N, X = sl.g(x), sl.N(x), sl.X(x)
    g0 = spacetime_metric(g, N, X)
    g1 = time_derivative_metric(g, N, X, g_dot(sl, x), sl.N_dot(x), sl.X_dot(x))
    return linear_extension(g0, g1, x[0])


# ---------------------------------------------------------------------------
# constraints


def spatial_curvature(g: Jet):
    """(g_inv, Gamma^i_{jk}, Ric_ij, R) of a 3-metric jet."""
    gi = inverse_metric(g)
    dg = spatial_grad(g)
    from .jets import contract
    g1 = (contract("...dcb->...dbc", dg) + dg - contract("...bcd->...dbc", dg)) * 0.5
    gam = einsum("...ad,...dbc->...abc", gi.truncated(g1.cap), g1)
    dG = spatial_grad(gam)  # dG[i,l,j,k] = d_k Gamma^i_{lj}
    cap = dG.cap
    gt = gam.truncated(cap)
    quad = einsum("...iku,...ujl->...ijkl", gt, gt)
    riem = (contract("...iljk->...ijkl", dG) - contract("...ikjl->...ijkl", dG)
            + quad - contract("...ijlk->...ijkl", quad))
    ric = contract("...ijil->...jl", riem)
    R = einsum("...jl,...jl->...", gi.truncated(cap), ric)
    return gi, gam, ric, R


def constraint_residuals(sl: SliceData, points, order: int = 3) -> ConstraintResiduals:
    """Residuals of ``R - |K|^2 + (tr K)^2 = 2 Lambda`` and ``div K - d tr K = 0``."""
    x = seeds(points, order)
    g, K = sl.g(x), sl.K(x)
    gi, gam, ric, R = spatial_curvature(g)
    gi0 = gi.truncated(1)
    K1 = K.truncated(1)
    Kup = einsum("...ia,...ab->...ib", gi0, einsum("...ab,...bj->...aj", K1, gi0))
    K2 = einsum("...ij,...ij->...", Kup, K1)
    trK = einsum("...ij,...ij->...", gi0, K1)
    ham = R.value - K2.value + trK.value ** 2 - 2.0 * sl.lam
    dK = spatial_grad(K)  # dK[i,j,k] = d_k K_ij
    gm = gam.truncated(0)
    K0 = K.truncated(0)
    # nabla_k K_ij
    DK = dK - einsum("...aki,...aj->...ijk", gm, K0) - einsum("...akj,...ia->...ijk", gm, K0)
    div = einsum("...jk,...ijk->...i", gi.truncated(0), DK)
    dtr = spatial_grad(trK)
    mom = div.value - dtr.value
    return ConstraintResiduals(np.asarray(ham), np.asarray(mom))


# ---------------------------------------------------------------------------
# wave gauge


def _check_observer(X: Jet) -> None:
    norm = np.sqrt(np.sum(X.value ** 2, axis=-1))
    if np.any(norm >= BAD_OBSERVER_BOUND):
        raise BadObserver("|X|_e >= 1 at an evaluation point")


def gauge_rates_closed(sl: SliceData, x) -> tuple[Jet, Jet]:
    """``(N_dot, X_dot^j)`` making ``g_bar^{ab} Gamma_bar^mu_ab`` vanish on the slice.

    ``N_dot = X(N) - N^2 tr K``,
    ``X_dot^j = X^k d_k X^j - N g^{jk} d_k N + N^2 g^{ab} Gamma^j_ab(g)``.
    """
    g, K, N, X = sl.g(x), sl.K(x), sl.N(x), sl.X(x)
    _check_observer(X)
    gi = inverse_metric(g)
    gam = christoffels_spatial(g, gi)
    cap = gam.cap
    dN = spatial_grad(N)
    dX = spatial_grad(X)
    Xc, Nc, gic = X.truncated(cap), N.truncated(cap), gi.truncated(cap)
    trK = einsum("...ij,...ij->...", gic, K.truncated(cap))
    Nd = einsum("...k,...k->...", Xc, dN.truncated(cap)) - Nc * Nc * trK
    conn = einsum("...ab,...jab->...j", gic, gam)
    Xd = (einsum("...k,...jk->...j", Xc, dX.truncated(cap))
          - einsum("...jk,...k->...j", gic, dN.truncated(cap)) * Nc[..., None]
          + conn * (Nc * Nc)[..., None])
    return Nd, Xd


def christoffels_spatial(g: Jet, gi: Jet) -> Jet:
    from .jets import contract
    dg = spatial_grad(g)
    g1 = (contract("...dcb->...dbc", dg) + dg - contract("...bcd->...dbc", dg)) * 0.5
    return einsum("...ad,...dbc->...abc", gi.truncated(g1.cap), g1)


def gauge_source(G: Jet) -> Jet:
    """``F_nu = G^{ab}(d_a G_nb - 1/2 d_nu G_ab)`` (lowered contracted connection)."""
    gi = inverse_metric(G)
    dG = G.grad()  # dG[n,b,a] = d_a G_nb
    cap = dG.cap
    gi = gi.truncated(cap)
    t1 = einsum("...ab,...nba->...n", gi, dG)
    t2 = einsum("...ab,...abn->...n", gi, dG)
    return t1 - t2 * 0.5


def gauge_rates_solve(sl: SliceData, x) -> tuple[Jet, Jet]:
    """Dual path: solve ``F_nu = 0`` for ``u_b = d_t g_bar_0b``.

    F is affine in u with ``dF_0/du_0 = g^00/2`` and ``dF_i/du_j = g^00 delta_ij``,
    so the solve is a division by jets.
    """
    g, N, X = sl.g(x), sl.N(x), sl.X(x)
    _check_observer(X)
    gd = g_dot(sl, x)
    g0 = spacetime_metric(g, N, X)
    cap = gd.cap
    zero_s = _scalar(x, 0.0)
    zero_s.cap = cap
    zero_v = _vector(x, np.zeros(3))
    zero_v.cap = cap
    # rows of d_t g_bar with u = 0
    rows = [jets.stack([zero_s, zero_s, zero_s, zero_s], axis=-1)]
    rows += [jets.stack([zero_s, gd[..., i, 0], gd[..., i, 1], gd[..., i, 2]], axis=-1)
             for i in range(3)]
    G = linear_extension(g0, jets.stack(rows, axis=-2), x[0])
    rest = gauge_source(G)
    g00 = inverse_metric(g0)[..., 0, 0].truncated(rest.cap)
    inv00 = jets.reciprocal(g00)
    u0 = rest[..., 0] * inv00 * (-2.0)
    ui = rest[..., 1:4] * (-inv00)[..., None]
    c2 = ui.cap
    gi = inverse_metric(g).truncated(c2)
    gX = einsum("...ik,...k->...i", gd.truncated(c2), X.truncated(c2))
    Xd = einsum("...ji,...i->...j", gi, ui - gX)
    Xl = einsum("...ij,...j->...i", g.truncated(c2), X.truncated(c2))
    num = u0 - einsum("...i,...i->...", gX, X.truncated(c2)) - einsum("...i,...i->...", Xl, Xd) * 2.0
    Nd = num * (-0.5) / N.truncated(c2)
    return Nd, Xd


def wave_gauge_rates(sl: SliceData) -> SliceData:
    """Populate ``N_dot`` and ``X_dot`` with the closed-form rates."""

    def nd(x):
        return gauge_rates_closed(sl, x)[0]

    def xd(x):
        return gauge_rates_closed(sl, x)[1]

    return replace(sl, N_dot=nd, X_dot=xd, g_ddot=None, meta=dict(sl.meta))


def gauge_violation(sl: SliceData, points, order: int = 3) -> float:
    """Max of ``|F_nu|`` at points with the populated rates."""
    x = seeds(points, order)
    G = spacetime_jet(sl, x)
    return float(np.max(np.abs(gauge_source(G).value)))


def lowered_shift_rate(sl: SliceData, x) -> Jet:
    """``u_i = d_t g_bar_0i = g_dot_ij X^j + g_ij X_dot^j``."""
    if sl.X_dot is None:
        raise MissingGaugeRates("wave-gauge rates not populated")
    gd = g_dot(sl, x)
    Xd = sl.X_dot(x)
    cap = min(gd.cap, Xd.cap)
    g, X = sl.g(x).truncated(cap), sl.X(x).truncated(cap)
    return einsum("...ij,...j->...i", gd.truncated(cap), X) + einsum("...ij,...j->...i", g, Xd.truncated(cap))


# ---------------------------------------------------------------------------
# S tensor in the adapted frame


def adapted_frame(X: Jet) -> tuple[np.ndarray, np.ndarray]:
    """Frame ``E_0 = d_t - X, E_i = d_i`` and its coframe at the points (values)."""
    Xv = X.value
    shp = Xv.shape[:-1]
    E = np.broadcast_to(np.eye(4), shp + (4, 4)).copy()  # E[b, mu]
    E[..., 0, 1:] = -Xv
    th = np.broadcast_to(np.eye(4), shp + (4, 4)).copy()  # th[a, mu]
    th[..., 1:, 0] = Xv
    return E, th


def s_tensor_direct(sl: SliceData, points, order: int = 3) -> np.ndarray:
    """Frame components ``S^a_bc`` of ``Gamma(g_bar) - Gamma(e_hat)``."""
    x = seeds(points, order)
    G = spacetime_jet(sl, x)
    gam = christoffels(G).value
    E, th = adapted_frame(sl.X(x))
    return np.einsum("...am,...mnl,...bn,...cl->...abc", th, gam, E, E)


def s_tensor_formula(sl: SliceData, points, order: int = 3) -> dict:
    """The four component families of S from slice quantities.

    ``S^0_00 = (N_dot - X(N))/N``, ``S^0_ab = -K_ab/N``,
    ``S^j_00 = X_dot^j - X^k d_k X^j + N g^{jk} d_k N``, ``S^j_ab = Gamma^j_ab(g)``.
    """
    if sl.N_dot is None or sl.X_dot is None:
        raise MissingGaugeRates("wave-gauge rates not populated")
    x = seeds(points, order)
    g, K, N, X = sl.g(x), sl.K(x), sl.N(x), sl.X(x)
    gi = inverse_metric(g)
    gam = christoffels_spatial(g, gi).value
    Nv = N.value
    dN = spatial_grad(N).value
    dX = spatial_grad(X).value
    Xv = X.value
    s000 = (sl.N_dot(x).value - np.einsum("...k,...k->...", Xv, dN)) / Nv
    s0ab = -K.value / Nv[..., None, None]
    sj00 = (sl.X_dot(x).value - np.einsum("...k,...jk->...j", Xv, dX)
            + Nv[..., None] * np.einsum("...jk,...k->...j", gi.value, dN))
    return {"S0_00": s000, "S0_ab": s0ab, "Sj_00": sj00, "Sj_ab": gam}


def s_tensor(sl: SliceData, points, order: int = 3) -> dict:
    """Both paths and the max residual between them."""
    d = s_tensor_direct(sl, points, order)
    f = s_tensor_formula(sl, points, order)
    direct = {"S0_00": d[..., 0, 0, 0], "S0_ab": d[..., 0, 1:, 1:],
              "Sj_00": d[..., 1:, 0, 0], "Sj_ab": d[..., 1:, 1:, 1:]}
    scale = max(1.0, max(float(np.max(np.abs(v))) for v in direct.values()))
    res = max(float(np.max(np.abs(direct[k] - f[k]))) for k in f) / scale
    return {"formula": f, "direct": direct, "residual": res}


# ---------------------------------------------------------------------------
# second time derivative


def second_time_derivative(sl: SliceData) -> SliceData:
    """Populate ``g_ddot_ij`` from the spatial components of ``Ric = Lambda g_bar``.

    In ``Ric_ij`` the second time derivative enters only through
    ``-1/2 g_bar^{00} d_t^2 g_ij`` with ``g_bar^{00} = -N^-2``.  The linear
    extension G carries the slice data and the gauge rates, so
    ``g_ddot_ij = 2 N^2 (Lambda g_ij - Ric_ij[G])``.
    """
    if sl.N_dot is None or sl.X_dot is None:
        raise MissingGaugeRates("wave-gauge rates not populated")
    lam = sl.lam

    def gdd(x):
        G = spacetime_jet(sl, x)
        ric = curvature_stack(G).ric[..., 1:4, 1:4]
        N = sl.N(x).truncated(ric.cap)
        g = sl.g(x).truncated(ric.cap)
        return (g * lam - ric) * (N * N * 2.0)[..., None, None]

    return replace(sl, g_ddot=gdd, meta=dict(sl.meta))


def prepare(sl: SliceData) -> SliceData:
    """Gauge rates followed by the reconstruction of g_ddot."""
    return second_time_derivative(wave_gauge_rates(sl))


def extrinsic_curvature(gbar: Jet) -> Jet:
    """``K_ij = -(1/2N)(d_t g_ij - L_X g_ij)`` from a space-time metric jet at t=0."""
    g = gbar[..., 1:4, 1:4]
    Xl = gbar[..., 0, 1:4]
    gi = inverse_metric(g)
    X = einsum("...ij,...j->...i", gi, Xl)
    N2 = einsum("...i,...i->...", Xl, X) - gbar[..., 0, 0]
    N = jets.sqrt(N2)
    dt_g = g.partial(0)
    lx = lie_metric(g, X)
    cap = min(dt_g.cap, lx.cap)
    return (dt_g.truncated(cap) - lx) * (jets.reciprocal(N.truncated(cap)) * (-0.5))[..., None, None]


def de_sitter_flat_slice(lam: float) -> SliceData:
    return named_slice("flat", {"lambda": lam})
