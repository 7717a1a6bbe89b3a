import numpy as np
import pytest

from time_delay_system import SystemDef, HistorySegment, DelayRealization, DelaySegment, ControlSegment, create_system
from dde_solver import (IntegrationError, resolve_step, step, simulate, sup_distance, lipschitz_rate_bound,
                        reference_step)


def test_step_size_must_stay_below_minimal_delay(toy):
    with pytest.raises(ValueError, match="Step size violation"):
        resolve_step(toy, 1.5, 0.01)
    h, steps = resolve_step(toy, 1.5, 0.004)
    assert steps == 375
    assert h * steps == pytest.approx(1.5)


def test_zero_dynamics_keep_the_history(zero_system):
    h0 = HistorySegment.constant([0.3], zero_system.delta_max)
    window = step(zero_system, h0, ControlSegment.of(0.0), DelaySegment.constant(0.15, 1.0), 1.0)
    assert np.max(np.abs(window.values - 0.3)) < 1e-14


def test_linear_decay_matches_exponential():
    system = create_system('linear-decay')
    h0 = HistorySegment.constant([0.3], system.delta_max)
    window = step(system, h0, ControlSegment.of(0.0), DelaySegment.constant(0.15, 1.0), 1.0)
    assert window.values[-1, 0] == pytest.approx(0.3 * np.exp(-1.0), rel=1e-8)
    assert window.evaluate(-0.2)[0] == pytest.approx(0.3 * np.exp(-0.8), rel=1e-8)


def test_step_agrees_with_method_of_steps(toy):
    h0 = HistorySegment.constant([0.3], toy.delta_max)
    delay = DelayRealization.sinusoid(0.015, 0.004, 2.0).window(0.0, 1.5)
    u = ControlSegment.of(0.25)
    fast = step(toy, h0, u, delay, 1.5)
    exact = reference_step(toy, h0, u, delay, 1.5)
    assert sup_distance(fast, exact) < 1e-5


def test_simulate_collects_windows_and_columns():
    system = create_system('linear-decay')
    xi0 = HistorySegment.constant([0.3], system.delta_max)
    trajectory = simulate(system, xi0, [ControlSegment.of(0.0)] * 3, DelayRealization.constant(0.15), 3, 1.0)
    assert len(trajectory.windows) == 4
    assert len(trajectory.controls) == 3
    assert trajectory.states[-1, 0] == pytest.approx(0.3 * np.exp(-3.0), rel=1e-8)
    assert trajectory.header() == 'time,x1,u1,delay,phase'
    table = trajectory.to_array()
    assert table.shape == (len(trajectory.times), 5)
    assert table[-1, 0] == pytest.approx(3.0)
    assert np.all(table[:, 3] == 0.15)


def test_simulate_accepts_a_policy(toy):
    xi0 = HistorySegment.constant([0.0], toy.delta_max)
    seen = []

    def policy(k, window):
        seen.append((k, window.delta_max))
        return 0.5 if k == 0 else 0.0

    trajectory = simulate(toy, xi0, policy, DelayRealization.constant(0.015), 2, 1.5)
    assert [k for k, _ in seen] == [0, 1]
    assert all(span == pytest.approx(toy.delta_max) for _, span in seen)
    assert trajectory.controls == [ControlSegment((0.5,)), ControlSegment((0.0,))]
    assert trajectory.inputs[0, 0] == 0.5 and trajectory.inputs[-1, 0] == 0.0
    assert trajectory.windows[1].values[-1, 0] > 0.2


def test_sup_distance_needs_matching_spans():
    a = HistorySegment.constant([0.0], 0.02)
    b = HistorySegment.constant([0.1], 0.03)
    with pytest.raises(ValueError, match="Span mismatch"):
        sup_distance(a, b)
    assert sup_distance(a, HistorySegment.constant([0.1], 0.02)) == pytest.approx(0.1)


def test_lipschitz_rate_bound_includes_box_corners(toy):
    assert lipschitz_rate_bound(toy, 1.47, 0.05) == pytest.approx(1.05 * 3.734)


def test_blow_up_raises_integration_error():
    system = SystemDef('quadratic', 1, 1, lambda x, y, u: 10.0 * x ** 2, 0.01, 0.02, 0.0, 0.0, 1.0, 2.0, 0.1)
    h0 = HistorySegment.constant([1.0], system.delta_max)
    with np.errstate(over='ignore', invalid='ignore'):
        with pytest.raises(IntegrationError) as caught:
            step(system, h0, ControlSegment.of(0.0), DelaySegment.constant(0.015, 1.0), 1.0, 0.001)
    assert caught.value.time > 0.09
    assert caught.value.witness['batch_index'] == 0


def random_profile(rng, span=0.2):
    inner = rng.uniform(-span, 0.0, rng.integers(0, 4))
    knots = np.unique(np.concatenate([[-span, 0.0], inner]))
    values = rng.uniform(-1.0, 1.0, (len(knots), 1))
    derivatives = rng.uniform(-20.0, 20.0, (len(knots), 1)) if rng.random() < 0.5 else None
    return HistorySegment(knots, values, derivatives)


def test_sup_distance_is_a_metric_on_its_grid():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a, b, c = (random_profile(rng) for _ in range(3))
        ab, bc, ac = sup_distance(a, b, 1), sup_distance(b, c, 1), sup_distance(a, c, 1)
        assert ab == sup_distance(b, a, 1)
        assert ac <= ab + bc + 1e-12
    assert sup_distance(a, a) == 0.0


def test_sup_distance_of_constants_and_piecewise_linear_profiles():
    assert sup_distance(HistorySegment.constant([0.2], 0.2), HistorySegment.constant([0.5], 0.2)) == pytest.approx(0.3)
    ramp = HistorySegment(np.linspace(-0.2, 0.0, 5), [0.0, 0.3, -0.1, 0.4, 0.2])
    assert sup_distance(ramp, HistorySegment.constant([0.1], 0.2)) == pytest.approx(0.3, abs=1e-9)
    with pytest.raises(ValueError, match="density"):
        sup_distance(ramp, ramp, 0)


@pytest.fixture(scope='module')
def benchmark_system():
    return create_system('pola2012-example')


@pytest.fixture(scope='module')
def benchmark_rate_bound(benchmark_system):
    return lipschitz_rate_bound(benchmark_system, 1.446)


def test_benchmark_rate_bound(benchmark_rate_bound):
    # |f2| peaks at the corner x2 = -B_X, y1 = B_X, u = B_U
    expected = 1.05 * (9.0 * 1.446 + np.sin(1.446) + 0.3 * np.cos(1.446))
    assert benchmark_rate_bound == pytest.approx(expected, rel=1e-9)
    assert benchmark_rate_bound == pytest.approx(14.7457, abs=1e-3)


def test_benchmark_keeps_its_equilibrium(benchmark_system):
    h0 = HistorySegment.constant([0.0, 0.0], benchmark_system.delta_max)
    delay = DelayRealization.slow_sinusoid(benchmark_system, omega=20.0).window(0.3, 2.0)
    window = step(benchmark_system, h0, ControlSegment.of(0.0), delay, 2.0)
    assert window.sup_norm() <= 1e-9


def test_benchmark_trajectory_respects_the_rate_bound(benchmark_system, benchmark_rate_bound):
    xi0 = HistorySegment.constant([0.5, -0.5], benchmark_system.delta_max)
    delay = DelayRealization.slow_sinusoid(benchmark_system, omega=20.0)
    trajectory = simulate(benchmark_system, xi0, [0.3, -0.3, 0.3, 0.0], delay, 4, 0.5)
    times, states = trajectory.times[::20], trajectory.states[::20]
    gaps = np.max(np.abs(states[:, None, :] - states[None, :, :]), axis=2)
    assert np.all(gaps <= benchmark_rate_bound * np.abs(times[:, None] - times[None, :]) + 1e-12)


@pytest.mark.slow
def test_benchmark_agrees_with_a_refined_step(benchmark_system):
    h0 = HistorySegment.constant([0.1, 0.1], benchmark_system.delta_max)
    u = ControlSegment.of(0.093)
    delay = DelaySegment.constant(benchmark_system.delta_min, 2.0)
    oracle = step(benchmark_system, h0, u, delay, 2.0, 1e-5)
    assert sup_distance(step(benchmark_system, h0, u, delay, 2.0), oracle) <= 1e-6


@pytest.mark.slow
def test_fourth_order_convergence_on_wide_delays():
    system = create_system('pola2012-example', delta_min=0.05, delta_max=0.1)
    h0 = HistorySegment.constant([0.3, -0.2], system.delta_max)
    u = ControlSegment.of(0.2)
    delay = DelaySegment.constant(0.08, 0.24)
    oracle = step(system, h0, u, delay, 0.24, 1e-5)
    errors = [sup_distance(step(system, h0, u, delay, 0.24, h), oracle) for h in (0.04, 0.02, 0.01, 0.005)]
    ratios = [coarse / fine for coarse, fine in zip(errors, errors[1:])]
    assert all(ratio >= 8.0 for ratio in ratios)


ROUNDOFF_FLOOR = 2e-14


@pytest.mark.slow
def test_fourth_order_convergence_on_the_benchmark(benchmark_system):
    # steps stay below delta_min = 1e-3, so the finest errors reach round-off
    h0 = HistorySegment.constant([1.4, -1.4], benchmark_system.delta_max)
    u = ControlSegment.of(0.3)
    delay = DelaySegment.constant(benchmark_system.delta_min, 0.12)
    oracle = step(benchmark_system, h0, u, delay, 0.12, 1e-5)
    steps = (5e-4, 2.5e-4, 1.25e-4, 6.25e-5)
    errors = [sup_distance(step(benchmark_system, h0, u, delay, 0.12, h), oracle) for h in steps]
    assert errors[0] < 1e-9
    assert errors[-1] < 1e-12
    observed = [coarse / fine for coarse, fine in zip(errors, errors[1:]) if fine > ROUNDOFF_FLOOR]
    assert observed
    assert all(ratio >= 8.0 for ratio in observed)
