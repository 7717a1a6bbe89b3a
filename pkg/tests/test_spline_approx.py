import numpy as np
import pytest

from certificates import KLExp, KLinear, IdssCertificate
from spline_approx import (BudgetExceeded, KnotGrid, SplineProfile, spline_basis, lambda_bound, project,
                           lattice_indices, enumerate_input_labels, input_label_indices, enumerate_delay_labels,
                           QuantizationParams, cond3_value, tau_for_precision, solve_quantization, export_labels,
                           parse_labels)

POLA_IDSS = IdssCertificate(KLExp(4.3580, 1.087), KLinear(13.5647), KLinear(194.1666))
POLA_MANUAL = {'tau': 2.0, 'N_X': 0, 'theta_X': 0.0035, 'N_D': 1, 'theta_D': 6e-6, 'lambda_U': 5e-4}
POLA_M_X = 993.874


def test_knot_grid():
    grid = KnotGrid(-0.02, 0.0, 1)
    assert grid.size == 3
    assert grid.h == pytest.approx(0.01)
    assert grid.knots() == pytest.approx([-0.02, -0.01, 0.0])
    with pytest.raises(ValueError):
        KnotGrid(0.0, 0.0, 1)


def test_hat_functions_form_a_partition_of_unity():
    grid = KnotGrid(0.0, 2.0, 3)
    t = np.linspace(0.0, 2.0, 101)
    total = sum(spline_basis(i, t, grid) for i in range(grid.size))
    assert total == pytest.approx(np.ones_like(t))
    assert spline_basis(1, grid.knots()[1], grid) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        spline_basis(grid.size, 0.5, grid)
    with pytest.raises(ValueError):
        spline_basis(0, 2.5, grid)


def test_profile_interpolates_coefficients():
    profile = SplineProfile(KnotGrid(0.0, 1.0, 0), [[0.0, 1.0], [1.0, -1.0]])
    assert profile.n == 2
    assert profile.evaluate(0.25) == pytest.approx([0.25, 0.5])
    with pytest.raises(ValueError):
        SplineProfile(KnotGrid(0.0, 1.0, 1), [0.0, 1.0])


def test_delay_precision_of_the_worked_example():
    assert lambda_bound(1, 6e-6, 0.001, (0.0, 2.0)) == pytest.approx(1.43e-4)


def test_approximation_bound_holds_for_random_smooth_functions():
    rng = np.random.default_rng(0)
    grid = KnotGrid(0.0, 1.0, 2)
    t = np.linspace(0.0, 1.0, 2001)
    theta, curvature = 0.01, 4.0
    bound = lambda_bound(grid.N, theta, curvature, (grid.i1, grid.i2))
    for _ in range(1000):
        omega = rng.uniform(0.5, 6.0)
        amp = rng.uniform(-1.0, 1.0) * curvature / omega ** 2
        phase, slope, offset = rng.uniform(0.0, 2 * np.pi), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)
        func = lambda s: amp * np.sin(omega * s + phase) + slope * s + offset
        error = np.max(np.abs(project(func, grid, theta).evaluate(t)[:, 0] - func(t)))
        assert error <= bound + 1e-12


def test_projection_rounds_and_clamps():
    grid = KnotGrid(-0.02, 0.0, 0)
    profile = project(lambda t: np.full_like(t, 0.031), grid, 0.01)
    assert profile.coeffs[:, 0] == pytest.approx([0.04, 0.04])
    assert not profile.clamped
    clamped = project(lambda t: np.full_like(t, 0.5), grid, 0.01, (-0.3, 0.3))
    assert clamped.clamped
    assert clamped.coeffs[:, 0] == pytest.approx([0.3, 0.3])


def test_lattice_ties_go_down():
    assert lattice_indices([0.5, -0.5, 1.5], 1.0).tolist() == [0, -1, 1]


def test_input_labels(toy):
    labels = enumerate_input_labels(toy.b_u, toy.m, 0.025)
    values = [label.value[0] for label in labels]
    assert len(labels) == 21
    assert values[0] == pytest.approx(-0.5) and values[-1] == pytest.approx(0.5)
    assert 0.0 in values
    assert input_label_indices(toy.b_u, toy.m, 0.025)[:, 0].tolist() == list(range(-10, 11))


def test_worked_example_input_labels():
    assert len(enumerate_input_labels(0.3, 1, 5e-4)) == 601


def test_toy_delay_labels(toy):
    labels = enumerate_delay_labels(toy.delta_min, toy.delta_max, 0, 0.01, 10)
    assert labels.cardinality == 4
    assert labels.materialize().shape == (4, 2)
    representatives, cover = labels.coarsened(0.02)
    assert representatives.tolist() == [[0.02, 0.02]]
    assert cover == pytest.approx(0.01)


def test_worked_example_delay_labels_exceed_the_budget():
    labels = enumerate_delay_labels(1e-3, 1e-2, 1, 6e-6, 10_000)
    assert labels.cardinality == 1500 ** 3
    with pytest.raises(BudgetExceeded):
        labels.materialize()


def test_worked_example_quantization_inequality():
    params = QuantizationParams(epsilon=0.12, M_X=POLA_M_X, M_D=0.001, delta_max=0.01, **POLA_MANUAL)
    assert params.lambda_D == pytest.approx(1.43e-4)
    assert params.lambda_X == pytest.approx(0.0001 * POLA_M_X / 8 + 0.007)
    assert cond3_value(POLA_IDSS, params) == pytest.approx(0.1067, abs=5e-4)
    assert cond3_value(POLA_IDSS, params) <= 0.12 - 0.013


def test_manual_quantization_is_verified():
    params = solve_quantization(0.12, POLA_IDSS, POLA_M_X, 0.001, 0.01, tau_min=0.02, r=10.0, manual=POLA_MANUAL)
    assert params.tau == 2.0
    with pytest.raises(ValueError, match="multiple"):
        solve_quantization(0.12, POLA_IDSS, POLA_M_X, 0.001, 0.01, r=10.0, manual=dict(POLA_MANUAL, tau=3.0))
    with pytest.raises(ValueError, match="inequality"):
        solve_quantization(0.05, POLA_IDSS, POLA_M_X, 0.001, 0.01, r=10.0, manual=POLA_MANUAL)


def test_automatic_quantization_of_the_toy(toy_certificates):
    idss, _ = toy_certificates
    m_x = 3.44 * 1.2 * 3.2 * 3.2
    params = solve_quantization(0.11, idss, m_x, 0.01, 0.02, tau_min=0.04, r=3.0)
    assert params.tau == pytest.approx(1.5)
    assert params.N_X == 0 and params.N_D == 0
    assert params.theta_X == pytest.approx(0.01728, abs=1e-5)
    assert params.lambda_U == pytest.approx(0.016369, abs=1e-6)
    assert cond3_value(idss, params) == pytest.approx(0.0917, abs=1e-4)


def test_tau_for_precision(toy_certificates):
    idss, _ = toy_certificates
    assert tau_for_precision(idss.beta, 0.11, tau_step=0.1) == pytest.approx(1.1)
    assert tau_for_precision(idss.beta, 0.11, r=3.0, tau_min=0.04) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        tau_for_precision(idss.beta, 0.11, r=1.0, tau_min=1.0)


def test_label_text_export():
    grid = KnotGrid(0.0, 2.0, 1)
    text = export_labels(grid, 6e-6, [[0.001, 0.002, 0.003]])
    parsed_grid, theta, rows = parse_labels(text)
    assert parsed_grid == grid
    assert theta == 6e-6
    assert rows.tolist() == [[0.001, 0.002, 0.003]]
    with pytest.raises(ValueError):
        parse_labels("# N 1\n0.1 0.2\n")
