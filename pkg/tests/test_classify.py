import math
from fractions import Fraction

import pytest

from quadgrav import classify as cl
from quadgrav.geometry import CouplingPair

CP = CouplingPair


def test_exponents():
    assert cl.exponents(CP(1, 0)) == (4.0, -1.0)
    assert cl.exponents(CP(-1, 3)) == (2.0, 1.0)
    assert cl.exponents(CP(17, -50)) == (1.5, 1.5)
    f, g = cl.exponents(CP(1, -2.5))
    assert f.real == g.real == 1.5 and f == g.conjugate() and f.imag > 0
    with pytest.raises(cl.DegenerateCoupling):
        cl.exponents(CP(1, -2))


def test_special_ratio_tags():
    assert cl.special_ratio(CP(1, 0)) == 0
    assert cl.special_ratio(CP(-1, 3)) == 3
    assert cl.special_ratio(CP(17, -50)) == Fraction(25, 8)
    assert cl.special_ratio(CP(1, 1)) is None


def test_scan_reproduces_table():
    assert cl.scan_ratios() == sorted(cl.SPECIAL_RATIOS)
    co = cl.coincidence_ratios()
    assert ("t1+", "t1-") in co[Fraction(25, 8)]
    assert ("t2+", "t4-") in co[Fraction(28, 9)]
    assert cl.residual_ratios() == {Fraction(0), Fraction(3)}


def test_mass_ode_residual():
    for a, b in ((1, 1), (1, 0), (-1, 3), (0.4, 2.0)):
        c = CP(a, b)
        assert cl.mass_ode_residual(cl.MassFunctionCoeffs(1.0, 0.3), c, 2.0) == 0.0
        Mc = cl.coeffs_for(c, 1.0, 0.1, 0.2, 0.3)
        for r in (1.0, 2.0, 5.0):
            assert abs(cl.mass_ode_residual(Mc, c, r)) < 1e-12 * max(1.0, r**4)
    # M = r^5 with (1,1): 3 r^3 120 r - 16 (20 r^4 - 10 r^4) = 200 r^4
    r5 = cl.MassFunctionCoeffs(0.0, 0.0, 1.0, 0.0, 5.0, 1.0)
    assert cl.mass_ode_residual(r5, CP(1, 1), 2.0) == pytest.approx(3200.0)


def test_conformal_constraint():
    C1, C2 = cl.fsmk_mass_coeffs(1.0, 0.2)
    assert (C1, C2) == pytest.approx((-0.28, 0.6), abs=1e-15)
    assert abs(cl.conformal_constraint(1.0, C1, C2)) < 1e-15
    assert cl.conformal_constraint(0.0, 0.0, 0.0) == 0.0
    assert cl.conformal_constraint(1.0, 1.0, 1.0) == 4.0


def test_fsmk_domain_examples():
    d = cl.fsmk_domain(1.0, 0.0, 0.0)
    assert d.label == "1e" and len(d.intervals) == 1
    assert d.intervals[0].lo == pytest.approx(1.0, abs=1e-12) and math.isinf(d.intervals[0].hi)
    d = cl.fsmk_domain(0.0, 0.0, 1.0, "a")
    assert d.label == "2a.ii" and d.intervals[0].lo == 0.0 and d.intervals[0].closed_lo
    d = cl.fsmk_domain(0.0, 0.0, -0.5, "b")
    assert d.label == "2b.i" and d.intervals[0].lo == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(cl.NotAdmissible):
        cl.fsmk_domain(0.0, 0.0, 0.5, "b")


EXPECTED_LABELS = {
    "schwarzschild": "1e", "sds": "1c", "sads": "1d", "fsmk_excluded": None,
    "fsmk_ads_large_mu": "1b", "fsmk_small_mu_ds": "1c", "fsmk_negative_mu": "1g",
    "fsmk_negative_mu_ads": "1h", "regular_centre_ads": "2a.ii", "cylindrical_flat": "2b.i",
}


def lapse_for(d):
    p = d.params
    if d.family == "1":
        return lambda r: cl.fsmk_lapse(p["m"], p["lambda"], p["mu"], r)
    if d.family == "2a":
        return lambda r: cl.family_a_lapse(p["lambda"], p["mu"], r)
    return lambda r: cl.family_b_lapse(p["lambda"], p["mu"], r)


@pytest.mark.parametrize("name", sorted(cl.NAMED_DOMAINS))
def test_named_domains(name):
    m, lam, mu, fam = cl.NAMED_DOMAINS[name]
    label = EXPECTED_LABELS[name]
    if label is None:
        with pytest.raises(cl.NotAdmissible) as err:
            cl.fsmk_domain(m, lam, mu, fam)
        assert err.value.label == "1a"
        return
    d = cl.fsmk_domain(m, lam, mu, fam)
    assert d.label == label
    f = lapse_for(d)
    for iv in d.intervals:
        assert f(iv.midpoint()) > 0
        for end in (iv.lo, iv.hi):
            if math.isfinite(end) and end > 0:
                assert abs(f(end)) < 1e-10
                assert f(end + 1e-6 if end == iv.hi else end - 1e-6) <= 0


def test_conformal_map_to_sds():
    res = cl.conformal_to_sds(1.0, 0.0, 0.2, 5.0)
    assert res.lam_tilde == pytest.approx(0.096, abs=1e-15)
    assert res.coordinate == pytest.approx(2.5) and res.residual < 1e-10
    res = cl.conformal_to_sds(1.0, 0.05, 0.0, 3.0)
    assert res.lam_tilde == 0.05 and res.coordinate == 3.0 and res.residual == 0.0
    with pytest.raises(cl.SingularFactor):
        cl.conformal_to_sds(1.0, 0.0, -0.5, 2.0)


def test_cylindrical_map():
    res = cl.cylindrical_map(0.0, -1.0, 2.0)
    assert res.residual < 1e-10
    for r in (2.5, 4.0, 9.0):
        assert cl.cylindrical_map(-0.1, -1.0, r).residual < 1e-10
    with pytest.raises(cl.OutsideDomain):
        cl.cylindrical_map(1.0, 0.0, 2.0)


def test_reduction_round_trip():
    c1, c2, m, lam, k = 1.0, 0.1, 1.0, 0.01, -1.0

    def U(r):
        return math.sqrt(c1 - m / r + c2 * r - lam * r * r / 3)

    red = cl.schwarzschild_form_reduction(U, lambda r: 1 / U(r), 3.0, 1 + 3 * k, (2.0, 6.0))
    want = cl.reduction_prediction(c1, c2, m, lam, k)
    for key in want:
        assert red.coeffs[key] == pytest.approx(want[key], abs=1e-6)
    assert red.fit_residual < 1e-10


def test_reduction_of_flat_input():
    # F = 1 - r, so P = (R - 1)^2 and M = 2 R^2 - R^3: de Sitter with Lambda = -3 up to the C1 term
    red = cl.schwarzschild_form_reduction(lambda r: 1.0, lambda r: 1.0, 2.0, -1.0, (1.5, 4.0))
    assert red.coeffs == pytest.approx({"m": 0.0, "C2": 0.0, "C1": 2.0, "lambda": -3.0}, abs=1e-9)


def test_reduction_errors():
    with pytest.raises(cl.ClassifyError):
        cl.schwarzschild_form_reduction(lambda r: 1.0, lambda r: 1.0, 2.0, 1.0, (1.5, 4.0))
    with pytest.raises(cl.DegenerateChange):
        cl.schwarzschild_form_reduction(lambda r: 1.0, lambda r: 1.0, 2.0, -0.5, (1.0, 4.0))


def test_classify_solution():
    assert cl.classify_solution(CP(1, 1), cl.coeffs_for(CP(1, 1), 1.0, 0.05)) == "SdS/SAdS"
    assert cl.classify_solution(CP(1, 0), cl.coeffs_for(CP(1, 0), 1.0, 0.0, 0.0, 0.3)) == "Reissner-Nordstrom"
    C1, C2 = cl.fsmk_mass_coeffs(1.0, 0.05)
    assert cl.classify_solution(CP(-1, 3), cl.coeffs_for(CP(-1, 3), 1.0, 0.02, C1, C2)) == "FSMK-family"
    bad = cl.MassFunctionCoeffs(1.0, 0.0, 0.0, 0.3, *cl.exponents(CP(1, 1)))
    assert cl.classify_solution(CP(1, 1), bad) == "not-A-flat"
    with pytest.raises(cl.DegenerateCoupling):
        cl.classify_solution(CP(1, -2), cl.MassFunctionCoeffs(1.0))


def test_a_flatness_separates_cases():
    c = CP(1, 1)
    flat = cl.a_flatness(c, cl.coeffs_for(c, 1.0, 0.05))
    bent = cl.a_flatness(c, cl.coeffs_for(c, 1.0, 0.0, 0.0, 0.3))
    assert flat < 1e-15 and bent > 1e-7
