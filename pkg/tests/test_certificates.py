import numpy as np
import pytest

from time_delay_system import HistorySegment, create_system
from certificates import (KLExp, KLinear, IdssCertificate, IssCertificate, DerivedBounds, bx_bound, mx_bound,
                          estimate_kappa_bj, compute_bounds, check_idss_sampled, check_iss_sampled,
                          assumption_report, lk_value, lk_derivative_estimate, sample_delay_parameters)

POLA_IDSS = IdssCertificate(KLExp(4.3580, 1.087), KLinear(13.5647), KLinear(194.1666))
POLA_ISS = IssCertificate(KLExp(2.8920, 1.087), KLinear(0.9592))


def test_state_bound_and_curvature_bound():
    pola = create_system('pola2012-example')
    b_x = bx_bound(POLA_ISS, pola.b_x0, pola.b_u)
    assert b_x == pytest.approx(1.446, abs=1e-4)
    m_x = mx_bound(DerivedBounds(b_x=b_x, kappa=9.3, b_j=27.9), pola.b_u, pola.d_slope)
    assert m_x == pytest.approx(993.8845, abs=0.05)


def test_mx_bound_needs_kappa():
    with pytest.raises(ValueError):
        mx_bound(DerivedBounds(b_x=1.0), 0.5, 0.2)


def test_mx_bound_is_homogeneous_in_kappa_and_bj():
    base = mx_bound(DerivedBounds(b_x=1.446, kappa=9.3, b_j=27.9), 0.3, 0.2)
    assert mx_bound(DerivedBounds(b_x=1.446, kappa=18.6, b_j=27.9), 0.3, 0.2) == pytest.approx(2.0 * base)
    assert mx_bound(DerivedBounds(b_x=1.446, kappa=9.3, b_j=55.8), 0.3, 0.2) == pytest.approx(2.0 * base)


@pytest.mark.parametrize("beta", [POLA_IDSS.beta, POLA_ISS.beta_iss, KLExp(2.1, 1.75)])
def test_beta_is_monotone(beta):
    rng = np.random.default_rng(7)
    omega = np.sort(rng.uniform(0.0, 2.0, 40))
    t = np.sort(rng.uniform(0.0, 10.0, 40))
    values = beta(omega[:, None], t[None, :])
    assert np.all(np.diff(values, axis=0) >= 0.0)
    assert np.all(np.diff(values, axis=1) <= 0.0)


def test_kappa_and_bj_from_the_differential(toy):
    assert estimate_kappa_bj(toy, 1.47, 0.1) == pytest.approx((3.36, 3.36))
    assert estimate_kappa_bj(toy, 1.47, 0.1, kappa=9.0, b_j=8.0) == (9.0, 8.0)


def test_worked_example_differential_bounds_match_the_published_ones():
    kappa, b_j = estimate_kappa_bj(create_system('pola2012-example'), 1.446, 0.05)
    assert 1.0 / 1.5 <= kappa / 9.3 <= 1.5
    assert 1.0 / 1.5 <= b_j / 27.9 <= 1.5


def test_compute_bounds_chain(toy, toy_certificates):
    _, iss = toy_certificates
    bounds = compute_bounds(toy, iss, 0.05, kappa=3.2, b_j=3.2)
    assert bounds.b_x == pytest.approx(1.47)
    assert bounds.L == pytest.approx(1.05 * 3.734)
    assert bounds.m_x == pytest.approx(3.44 * 1.2 * 3.2 * 3.2)


def test_delay_parameters_are_admissible(toy):
    rows = sample_delay_parameters(toy, 200, np.random.default_rng(3), m_d=0.01)
    mid, amp, omega, _ = rows.T
    assert np.all(mid - amp >= toy.delta_min - 1e-12)
    assert np.all(mid + amp <= toy.delta_max + 1e-12)
    assert np.all(amp * omega <= toy.d_slope + 1e-12)
    assert np.all(amp * omega ** 2 <= 0.01 + 1e-12)


def test_toy_idss_certificate_survives_sampling(toy, toy_certificates):
    idss, _ = toy_certificates
    report = check_idss_sampled(toy, idss, 30, 3.0, 11, 1.5, h_int=0.005)
    assert report.passed
    assert report.trials == 30
    assert report.witness == {}


def test_identical_pairs_have_zero_gap(toy, toy_certificates):
    idss, _ = toy_certificates
    report = check_idss_sampled(toy, idss, 10, 3.0, 5, 1.5, h_int=0.005, identical_pairs=True)
    assert report.passed
    assert report.worst_margin >= 0.0


def test_shrunken_certificate_is_falsified(toy):
    shrunken = IdssCertificate(KLExp(1.0, 5.0), KLinear(0.01), KLinear(0.01))
    report = check_idss_sampled(toy, shrunken, 20, 3.0, 2, 1.5, h_int=0.005)
    assert not report.passed
    assert report.witness['lhs'] > report.witness['rhs']
    assert len(report.witness['inputs']) == 2


def test_toy_iss_certificate_survives_sampling(toy, toy_certificates):
    _, iss = toy_certificates
    assert check_iss_sampled(toy, iss, 30, 4.5, 4, 1.5, h_int=0.005).passed


def test_trials_must_be_positive(toy, toy_certificates):
    idss, iss = toy_certificates
    with pytest.raises(ValueError):
        check_idss_sampled(toy, idss, 0, 3.0, 0, 1.5)
    with pytest.raises(ValueError):
        check_iss_sampled(toy, iss, 0, 3.0, 0, 1.5)


def test_assumption_report(toy, toy_certificates):
    idss, iss = toy_certificates
    checks = assumption_report(toy, iss, idss, 1.5, 0.11, 0.0957)
    assert checks['invariance'].value == pytest.approx(0.6665, abs=1e-4)
    assert all(check.holds for check in checks.values())
    short = assumption_report(toy, iss, idss, 0.03)
    assert not short['sampling'].holds
    assert 'contraction' not in short


def test_worked_example_invariance():
    pola = create_system('pola2012-example')
    checks = assumption_report(pola, POLA_ISS, POLA_IDSS, 2.0, 0.12)
    assert checks['invariance'].value == pytest.approx(0.452, abs=1e-3)
    assert checks['invariance'].holds
    assert checks['contraction'].holds


def test_functional_of_a_constant_profile():
    phi = HistorySegment.constant([0.5], 0.02)
    assert lk_value('ISS', (2.0, 1.0), 0.0, phi, None, 0.015) == pytest.approx(0.265)
    assert lk_value('IDSS', (2.0, 1.0), 0.0, phi, phi, 0.015) == pytest.approx(0.0)


def test_functional_parameters_are_checked():
    phi = HistorySegment.constant([0.5], 0.02)
    with pytest.raises(ValueError):
        lk_value('ISS', (1.0, 2.0), 0.0, phi, None, 0.015)
    with pytest.raises(ValueError):
        lk_value('energy', (2.0, 1.0), 0.0, phi, None, 0.015)


def test_functional_derivative_of_a_decaying_state():
    system = create_system('linear-decay')
    x = HistorySegment.constant([0.5], system.delta_max)
    rate = lk_derivative_estimate(system, (2.0, 1.0), 0.0, x, None, [0.0], [0.0], 0.0, 0.15, kind='ISS')
    assert rate == pytest.approx(-0.5, rel=1e-2)


def test_functional_derivative_of_identical_states_vanishes():
    pola = create_system('pola2012-example')
    x = HistorySegment.from_function(lambda s: [0.3 + s, -0.2 + 2.0 * s], pola.delta_max)
    rate = lk_derivative_estimate(pola, (2.0, 1.0), 0.0, x, x, [0.1], [0.1], 0.0, 0.005)
    assert abs(rate) <= 1e-6


def test_functional_derivative_is_stable_under_a_smaller_difference_step():
    pola = create_system('pola2012-example')
    x1 = HistorySegment.from_function(lambda s: [0.3 + s, -0.2 + 2.0 * s], pola.delta_max)
    x2 = HistorySegment.constant([0.1, 0.1], pola.delta_max)
    coarse = lk_derivative_estimate(pola, (2.0, 1.0), 0.0, x1, x2, [0.2], [0.0], 0.0, 0.005, theta_fd=1e-4)
    fine = lk_derivative_estimate(pola, (2.0, 1.0), 0.0, x1, x2, [0.2], [0.0], 0.0, 0.005, theta_fd=5e-5)
    assert coarse < -1.0
    assert abs(fine - coarse) < 0.1 * abs(coarse)


@pytest.mark.slow
def test_worked_example_certificate_survives_sampling():
    pola = create_system('pola2012-example')
    report = check_idss_sampled(pola, POLA_IDSS, 500, 10.0, 2012, 2.0)
    assert report.passed


@pytest.mark.slow
def test_worked_example_shrunken_certificate_is_falsified():
    pola = create_system('pola2012-example')
    shrunken = IdssCertificate(KLExp(1.0, 1.087), KLinear(0.001), KLinear(0.001))
    assert not check_idss_sampled(pola, shrunken, 100, 6.0, 1, 2.0).passed
