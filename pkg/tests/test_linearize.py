import numpy as np
import pytest

from quadgrav import geometry as geo
from quadgrav import linearize as lin
from quadgrav.cli import sample_points
from quadgrav.geometry import CARTESIAN, SPHERICAL, ChartPoint, CouplingPair, MetricSpec

MINK = MetricSpec("minkowski")
SCHW = MetricSpec("schwarzschild", {"m": 1.0})
SDS = MetricSpec("sds", {"m": 1.0, "lambda": 0.05})
FSMK = MetricSpec("fsmk", {"m": 1.0, "lambda": 0.02, "mu": 0.05})
DT = lin.KillingField("dt")
P_SPH = ChartPoint(SPHERICAL, np.array([0.3, 4.0, 1.0, 0.5]))
P_CART = ChartPoint(CARTESIAN, np.array([0.2, 1.5, -0.7, 0.9]))


def fd_linearized(spec, h, p, fn, order=4):
    """Richardson-extrapolated central difference of fn(g + lam h) in lam."""
    g = geo.eval_metric(spec, p, order)
    hj = lin.eval_perturbation(h, spec, p, order)

    def d(step):
        return (fn(g + hj * step) - fn(g - hj * step)) / (2 * step)

    return (4 * d(1e-3) - d(2e-3)) / 3


def a_value(cp):
    return lambda g: geo.a_tensor(g, cp, strict=False).A.value


def test_zero_perturbation():
    cp = CouplingPair(1, 1)
    assert np.max(np.abs(lin.linearized_a(SDS, lin.Perturbation("zero"), cp, P_SPH).coeffs)) == 0.0
    f = lin.q_gr(SDS, lin.Perturbation("zero"), DT, P_SPH)
    assert np.max(np.abs(f.Q.value)) == 0.0 and np.max(np.abs(f.P.value)) == 0.0
    f = lin.q_fourth(SDS, lin.Perturbation("zero"), DT, cp, P_SPH)
    assert np.max(np.abs(f.Q.value)) == 0.0


def test_einstein_family_is_a_flat():
    for cp in (CouplingPair(1, 1), CouplingPair(0.3, -2)):
        dA = lin.linearized_a(SDS, lin.Perturbation("family_tangent"), cp, P_SPH)
        assert np.max(np.abs(dA.value)) < 1e-12


def test_inverse_r_around_minkowski_vanishes():
    # 1/r is harmonic, so box Ric' and hess R' vanish away from the origin
    p = ChartPoint(CARTESIAN, np.array([0.0, 3.0, 4.0, 0.0]))
    h = lin.Perturbation("inverse_r")
    cp = CouplingPair(1, 1)
    dA = lin.linearized_a(MINK, h, cp, p).value
    fd = fd_linearized(MINK, h, p, a_value(cp))
    assert np.max(np.abs(dA)) < 1e-14
    assert np.max(np.abs(fd)) < 1e-12


def test_linearized_a_matches_finite_differences():
    cp = CouplingPair(0.7, -0.4)
    for spec, h, p in ((MINK, "bump1", P_CART), (SDS, "poly", P_SPH), (FSMK, "bump1", P_SPH)):
        pert = lin.Perturbation(h)
        dA = lin.linearized_a(spec, pert, cp, p).value
        fd = fd_linearized(spec, pert, p, a_value(cp))
        assert np.max(np.abs(dA - fd)) < 1e-6 * np.max(np.abs(fd))


def test_random_linearizations_match_finite_differences():
    rng = np.random.default_rng(11)
    worst = 0.0
    cases = [(MINK, "bump1"), (MINK, "poly"), (SDS, "bump1"), (SDS, "inverse_r"), (FSMK, "poly")]
    for k in range(20):
        spec, h = cases[k % len(cases)]
        p = sample_points(spec, 1, int(rng.integers(1 << 30)))
        p = ChartPoint(p.chart, p.coords[0])
        pert = lin.Perturbation(h)
        ric1 = lin.linearized_curvature(spec, pert, p, 2)["ric"].value
        fd = fd_linearized(spec, pert, p, lambda g: geo.curvature_stack(g).ric.value, order=2)
        worst = max(worst, np.max(np.abs(ric1 - fd)) / max(np.max(np.abs(fd)), 1e-3))
    assert worst < 1e-6


def test_linearized_curvature_special_cases():
    c = lin.linearized_curvature(SCHW, lin.Perturbation("background"), P_SPH, 2)
    assert np.max(np.abs(c["R"].value)) < 1e-14
    assert np.max(np.abs(c["ric"].value)) < 1e-14
    h = lin.eval_perturbation(lin.Perturbation("family_tangent"), SDS, P_SPH, 2).value
    c = lin.linearized_curvature(SDS, lin.Perturbation("family_tangent"), P_SPH, 2)
    assert np.max(np.abs(c["ric"].value - 0.05 * h)) < 1e-14
    assert np.max(np.abs(c["G"].value + 0.05 * h)) < 1e-14


def test_k_tensor_for_background_perturbation():
    K = lin.k_tensor(SDS, lin.Perturbation("background"), P_SPH, 1).value
    g = geo.eval_metric(SDS, P_SPH, 1).value
    # H = -g, so K_{b n a m} = -g_mb g_na + g_ab g_mn
    expect = -np.einsum("mb,na->bnam", g, g) + np.einsum("ab,mn->bnam", g, g)
    assert np.max(np.abs(K - expect)) < 1e-14
    assert np.max(np.abs(lin.k_tensor(SDS, lin.Perturbation("zero"), P_SPH, 1).value)) == 0.0


def test_k_tensor_symmetries():
    K = lin.k_tensor(SDS, lin.Perturbation("bump1"), P_SPH, 1).value
    assert np.max(np.abs(K + K.transpose(1, 0, 2, 3))) < 1e-14
    assert np.max(np.abs(K + K.transpose(0, 1, 3, 2))) < 1e-14
    assert np.max(np.abs(K - K.transpose(2, 3, 0, 1))) < 1e-14


def test_gr_superpotential_value():
    p = ChartPoint(CARTESIAN, np.array([0.0, 10.0, 0.0, 0.0]))
    Q = lin.q_gr(MINK, lin.Perturbation("inverse_r"), DT, p).Q.value
    assert Q[0, 1] == pytest.approx(0.01, abs=1e-15)
    assert np.max(np.abs(Q + Q.T)) == 0.0


def test_gr_superpotential_matches_finite_differences():
    p = ChartPoint(CARTESIAN, np.array([0.0, 10.0, 0.0, 0.0]))
    h = lin.Perturbation("inverse_r")

    def K(c):
        return lin.k_tensor(MINK, h, ChartPoint(CARTESIAN, c), 1).value

    e = 1e-3
    dK = np.stack([(K(p.coords + e * v) - K(p.coords - e * v)) / (2 * e) for v in np.eye(4)], -1)
    fd = np.einsum("nc,bmanc->bma", np.diag([-1.0, 1, 1, 1]), dK)[..., 0]
    Q = lin.q_gr(MINK, h, DT, p).Q.value
    assert np.max(np.abs(Q - fd)) < 1e-9


def test_gr_current_is_codifferential():
    for spec, h, p in ((MINK, "bump1", P_CART), (SDS, "poly", P_SPH)):
        f = lin.q_gr(spec, lin.Perturbation(h), DT, p)
        c = geo.curvature_stack(geo.eval_metric(spec, p, 4))
        dq = lin.codifferential(f.Q, c).value
        assert np.max(np.abs(f.P.value - dq)) < 1e-8 * max(np.max(np.abs(f.P.value)), 1e-3)


def test_family_tangent_has_no_gr_current():
    f = lin.q_gr(SDS, lin.Perturbation("family_tangent"), DT, P_SPH)
    assert np.max(np.abs(f.P.value)) < 1e-14


def test_einstein_family_charge():
    h = lin.Perturbation("family_tangent")
    qgr = lin.q_gr(SDS, h, DT, P_SPH).Q.value
    for cp in (CouplingPair(1, 1), CouplingPair(-1, 3), CouplingPair(0.5, 2)):
        Q = lin.q_fourth(SDS, h, DT, cp, P_SPH).Q.value
        target = 2 * (4 * cp.alpha + cp.beta) * 0.05 * qgr
        assert np.max(np.abs(Q - target)) < 1e-8 * max(np.max(np.abs(target)), 1e-3)


def test_fourth_order_current_is_codifferential():
    cp = CouplingPair(0.7, -0.4)
    for spec, h in ((SCHW, "bump1"), (SDS, "poly"), (SDS, "inverse_r")):
        f = lin.q_fourth(spec, lin.Perturbation(h), DT, cp, P_SPH, order=5)
        assert np.max(np.abs(f.Q.value + f.Q.value.T)) == 0.0
        assert lin.p_eq_dq_residual(f, spec, P_SPH, order=5) < 1e-7


def test_variants_agree():
    cp = CouplingPair(0.7, -0.4)
    h = lin.Perturbation("bump1")
    base = lin.q_fourth(SCHW, h, DT, cp, P_SPH, variant="general_einstein").Q.value
    for v in ("general_einstein_g", "ricci_flat"):
        q = lin.q_fourth(SCHW, h, DT, cp, P_SPH, variant=v).Q.value
        assert np.max(np.abs(q - base)) < 1e-10 * np.max(np.abs(base))
    a = lin.q_fourth(SDS, h, DT, cp, P_SPH, variant="general_einstein").Q.value
    b = lin.q_fourth(SDS, h, DT, cp, P_SPH, variant="general_einstein_g").Q.value
    assert np.max(np.abs(a - b)) < 1e-10 * np.max(np.abs(a))


def test_charge_errors():
    cp = CouplingPair(1, 1)
    with pytest.raises(lin.NotEinstein):
        lin.q_fourth(FSMK, lin.Perturbation("bump1"), DT, cp, P_SPH)
    with pytest.raises(lin.NotEinstein):
        lin.q_fourth(SDS, lin.Perturbation("bump1"), DT, cp, P_SPH, variant="ricci_flat")
    with pytest.raises(lin.NotKilling):
        lin.q_gr(SDS, lin.Perturbation("bump1"), lin.KillingField("boost_x"), geo.convert(P_SPH, CARTESIAN))
    with pytest.raises(lin.LinearizeError):
        lin.Perturbation("nope")
    with pytest.raises(lin.LinearizeError):
        lin.q_fourth(SDS, lin.Perturbation("bump1"), DT, cp, P_SPH, variant="nope")


def test_conservation():
    r = lin.conservation_check(MINK, lin.Perturbation("bump1"), DT, CouplingPair(0.7, -0.4), P_CART)
    assert r.div_P_residual < 1e-7 and r.p_eq_dq_residual < 1e-7
    r = lin.conservation_check(SDS, lin.Perturbation("family_tangent"), DT, CouplingPair(1, 2), P_SPH)
    assert r.div_P_residual < 1e-7
    r = lin.conservation_check(FSMK, lin.Perturbation("poly"), DT, CouplingPair(-1, 3), P_SPH)
    assert r.div_P_residual < 1e-7 and r.p_eq_dq_residual is None
    with pytest.raises(lin.BackgroundNotFlat):
        lin.conservation_check(FSMK, lin.Perturbation("poly"), DT, CouplingPair(1, 1), P_SPH)


def test_background_perturbation_has_no_current():
    # A is homogeneous of degree -1 under g -> c g, so DA.g = -A = 0 and Q is rounding noise
    r = lin.conservation_check(SDS, lin.Perturbation("background"), DT, CouplingPair(0.7, -0.4), P_SPH)
    assert r.div_P_residual < 1e-12 and r.p_eq_dq_residual < 1e-12
    f = lin.q_fourth(SDS, lin.Perturbation("background"), DT, CouplingPair(0.7, -0.4), P_SPH, order=5)
    assert lin.p_eq_dq_residual(f, SDS, P_SPH, order=5) < 1e-12


def test_killing_residuals():
    cases = [(MINK, k, P_CART) for k in ("dt", "rot_z", "dx", "boost_x")]
    cases += [(spec, k, P_SPH) for spec in (SCHW, SDS, FSMK) for k in ("dt", "rot_z")]
    for spec, k, p in cases:
        c = geo.curvature_stack(geo.eval_metric(spec, p, 2))
        xi = lin.KillingField(k).components(p, 2)
        assert lin.killing_residual(xi, c) < 1e-10
