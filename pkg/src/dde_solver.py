"""
Description: This file contains the solvers for time-delay systems: a fixed-step explicit RK4 integrator
with cubic Hermite dense output, its batched and multi-period variants, a method-of-steps reference
solver, the sup distance between history segments and the time-Lipschitz rate bound.
"""
import bisect
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy.integrate import solve_ivp

from time_delay_system import (SystemDef, HistorySegment, HistoryBatch, DelaySegment, DelayRealization,
                               ControlSegment, hermite_gather, SPAN_TOLERANCE)

logger = logging.getLogger(__name__)

SAFETY_FACTOR = 1.05
DELAY_TOLERANCE = 1e-12
# Multiple of every integer up to 10.
SUP_GRID_INTERVALS = 2520


class IntegrationError(RuntimeError):
    """Raised when the integrated state stops being finite."""
    def __init__(self, message: str, time: float, witness: Optional[dict] = None):
        super().__init__(f"{message} (t = {time:.6g})")
        self.time = time
        self.witness = witness or {}


def resolve_step(sys: SystemDef, tau: float, h_int: Optional[float] = None):
    """
    Returns the effective step and the number of steps per period.

    The step is tau / ceil(tau / h_int) so that period boundaries fall on the grid.

    Raises:
        ValueError: If tau is not positive or h_int >= delta_min.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}.")
    if sys.delta_min <= 0:
        raise ValueError("Explicit stepping needs delta_min > 0.")
    if h_int is None:
        h_int = sys.default_step(tau)
    if h_int <= 0 or h_int >= sys.delta_min:
        raise ValueError(f"Step size violation: need 0 < h_int < delta_min = {sys.delta_min}, got {h_int}.")
    steps = int(np.ceil(tau / h_int - 1e-9))
    return tau / steps, steps


def _integrate(sys: SystemDef, history: HistoryBatch, inputs: np.ndarray, delay_at: Callable,
               h: float, steps_per_period: int):
    """
    Core RK4 loop over a batch.

    Args:
        history (HistoryBatch): Initial histories on [-delta_max, 0].
        inputs (np.ndarray): Piecewise-constant inputs, shape (B, P, m), one row per period.
        delay_at (Callable): Maps a time to the delays of the batch, shape (B,) or scalar.
        h (float): Integration step.
        steps_per_period (int): Steps per period.

    Returns:
        tuple: times (S+1,), states (B, S+1, n), rates (B, S+1, n).
    """
    batch, periods = inputs.shape[0], inputs.shape[1]
    total = periods * steps_per_period
    times = np.arange(total + 1) * h
    states = np.zeros((batch, total + 1, sys.n))
    rates = np.zeros((batch, total + 1, sys.n))
    knots, values, derivatives = history.knots, history.values, history.derivatives
    rows = np.arange(batch)
    low = sys.delta_min - DELAY_TOLERANCE * max(1.0, sys.delta_max)
    high = sys.delta_max + DELAY_TOLERANCE * max(1.0, sys.delta_max)

    def delayed(t, k):
        delay = np.broadcast_to(np.asarray(delay_at(t), dtype=float), (batch,))
        if np.any(delay < low) or np.any(delay > high):
            raise ValueError(f"Delay out of range at t = {t:.6g}: got values in "
                             f"[{np.min(delay)}, {np.max(delay)}], admissible [{sys.delta_min}, {sys.delta_max}].")
        s = t - delay
        result = hermite_gather(knots, values, derivatives, np.minimum(s, 0.0))
        past = s > 0
        if np.any(past):
            j = np.clip(np.floor(s / h).astype(int), 0, max(k - 1, 0))
            theta = ((s - j * h) / h)[:, None]
            v0, v1 = states[rows, j], states[rows, j + 1]
            d0, d1 = rates[rows, j] * h, rates[rows, j + 1] * h
            dense = ((2 * theta ** 3 - 3 * theta ** 2 + 1) * v0 + (theta ** 3 - 2 * theta ** 2 + theta) * d0
                     + (-2 * theta ** 3 + 3 * theta ** 2) * v1 + (theta ** 3 - theta ** 2) * d1)
            result = np.where(past[:, None], dense, result)
        return result

    states[:, 0] = values[:, -1]
    u = inputs[:, 0]
    rates[:, 0] = sys.evaluate(states[:, 0], delayed(0.0, 0), u)
    for k in range(total):
        t = times[k]
        u = inputs[:, k // steps_per_period]
        x = states[:, k]
        y_mid = delayed(t + 0.5 * h, k)
        y_end = delayed(t + h, k)
        k1 = rates[:, k] if k % steps_per_period else sys.evaluate(x, delayed(t, k), u)
        k2 = sys.evaluate(x + 0.5 * h * k1, y_mid, u)
        k3 = sys.evaluate(x + 0.5 * h * k2, y_mid, u)
        k4 = sys.evaluate(x + h * k3, y_end, u)
        states[:, k + 1] = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(states[:, k + 1])):
            bad = int(np.flatnonzero(~np.all(np.isfinite(states[:, k + 1]), axis=1))[0])
            raise IntegrationError("Non-finite state", float(times[k + 1]),
                                   witness={'batch_index': bad, 'input': inputs[bad].tolist()})
        rates[:, k + 1] = sys.evaluate(states[:, k + 1], y_end, u)
    return times, states, rates


def _combined(history: HistoryBatch, times, states, rates):
    """Glues the initial history and the computed solution into one Hermite data set."""
    hist_derivatives = history.derivatives
    if hist_derivatives is None:
        hist_derivatives = np.gradient(history.values, history.knots, axis=1)
    all_t = np.concatenate([history.knots[:-1], times])
    all_v = np.concatenate([history.values[:, :-1], states], axis=1)
    all_d = np.concatenate([hist_derivatives[:, :-1], rates], axis=1)
    return all_t, all_v, all_d


def _window(delta_max: float, all_t, all_v, all_d, t_end: float, h: float) -> HistoryBatch:
    """Returns the history segments x_{t_end} restricted to [-delta_max, 0]."""
    left = t_end - delta_max
    inside = (all_t > left + 1e-6 * h) & (all_t <= t_end + 1e-9 * h)
    batch = all_v.shape[0]
    s = np.full(batch, left)
    left_value = hermite_gather(all_t, all_v, all_d, s)
    left_rate = hermite_gather(all_t, all_v, all_d, s, derivative=True)
    knots = np.concatenate([[left], all_t[inside]]) - t_end
    knots[-1] = 0.0
    values = np.concatenate([left_value[:, None], all_v[:, inside]], axis=1)
    derivatives = np.concatenate([left_rate[:, None], all_d[:, inside]], axis=1)
    return HistoryBatch(knots, values, derivatives)


def _check_span(sys: SystemDef, history) -> None:
    if abs(history.knots[0] + sys.delta_max) > SPAN_TOLERANCE * max(1.0, sys.delta_max):
        raise ValueError(f"History span [{history.knots[0]}, 0] does not match "
                         f"[-{sys.delta_max}, 0] of system '{sys.name}'.")
    if history.values.shape[-1] != sys.n:
        raise ValueError(f"History has dimension {history.values.shape[-1]}, system expects {sys.n}.")


def step(sys: SystemDef, h0: HistorySegment, u: ControlSegment, d: DelaySegment, tau: float,
         h_int: Optional[float] = None) -> HistorySegment:
    """
    Integrates one sampling period and returns the history window x_tau.

    Args:
        sys (SystemDef): The system.
        h0 (HistorySegment): Initial history on [-delta_max, 0].
        u (ControlSegment): Effective input over [0, tau].
        d (DelaySegment): Delay realization over [0, tau].
        tau (float): Sampling period.
        h_int (float, optional): Requested integration step.

    Returns:
        HistorySegment: x_tau on [-delta_max, 0].
    """
    h, steps = resolve_step(sys, tau, h_int)
    _check_span(sys, h0)
    u = u if isinstance(u, ControlSegment) else ControlSegment.of(u)
    u.validate(sys)
    d.validate(sys)
    batch = HistoryBatch.stack([h0])
    times, states, rates = _integrate(sys, batch, u.as_array()[None, None, :], d.evaluate, h, steps)
    window = _window(sys.delta_max, *_combined(batch, times, states, rates), times[-1], h)
    return window.segment(0)


def step_batch(sys: SystemDef, histories: HistoryBatch, inputs: np.ndarray, delay_at: Callable,
               tau: float, h_int: Optional[float] = None) -> HistoryBatch:
    """
    Vectorized step over a batch of (history, input, delay) triples.

    Args:
        histories (HistoryBatch): Initial histories sharing one knot grid.
        inputs (np.ndarray): Inputs, shape (B, m).
        delay_at (Callable): Local time in [0, tau] to delays of shape (B,).

    Returns:
        HistoryBatch: The windows x_tau, sharing one knot grid.
    """
    h, steps = resolve_step(sys, tau, h_int)
    _check_span(sys, histories)
    inputs = np.asarray(inputs, dtype=float).reshape(len(histories), 1, sys.m)
    times, states, rates = _integrate(sys, histories, inputs, delay_at, h, steps)
    return _window(sys.delta_max, *_combined(histories, times, states, rates), times[-1], h)


@dataclass
class Trajectory:
    """Dense closed- or open-loop trajectory over several sampling periods."""
    tau: float
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    delays: np.ndarray
    windows: List[HistorySegment] = field(default_factory=list)
    controls: List[ControlSegment] = field(default_factory=list)
    phases: Optional[np.ndarray] = None

    def to_array(self) -> np.ndarray:
        phases = self.phases if self.phases is not None else np.zeros(len(self.times))
        return np.column_stack([self.times, self.states, self.inputs, self.delays, phases])

    def header(self) -> str:
        n, m = self.states.shape[1], self.inputs.shape[1]
        columns = ['time'] + [f'x{i + 1}' for i in range(n)] + [f'u{i + 1}' for i in range(m)] + ['delay', 'phase']
        return ','.join(columns)


def simulate(sys: SystemDef, xi0: HistorySegment,
             inputs: Union[Sequence, Callable], delay: DelayRealization, periods: int, tau: float,
             h_int: Optional[float] = None) -> Trajectory:
    """
    Integrates several sampling periods under one continuous delay realization.

    Args:
        inputs: Either a sequence of per-period inputs or a policy called as policy(k, window)
            at every sampling instant, returning the input of period k.
        delay (DelayRealization): Delay signal over [0, periods * tau].
        periods (int): Number of sampling periods.

    Returns:
        Trajectory: Dense samples plus the history windows at each sampling instant.
    """
    if periods < 0:
        raise ValueError(f"periods must be non-negative, got {periods}.")
    h, steps = resolve_step(sys, tau, h_int)
    _check_span(sys, xi0)
    policy = inputs if callable(inputs) else (lambda k, window: inputs[k])
    window = xi0
    trajectory = Trajectory(tau=tau, times=np.zeros(1), states=xi0.values[-1:].copy(),
                            inputs=np.zeros((1, sys.m)), delays=np.array([float(delay.evaluate(0.0))]),
                            windows=[xi0])
    times, states, applied, delays = [np.zeros(1)], [xi0.values[-1:]], [], [trajectory.delays]
    for k in range(periods):
        control = policy(k, window)
        control = control if isinstance(control, ControlSegment) else ControlSegment.of(control)
        control.validate(sys)
        segment = delay.window(k * tau, tau)
        segment.validate(sys)
        batch = HistoryBatch.stack([window])
        local_t, local_x, local_f = _integrate(sys, batch, control.as_array()[None, None, :],
                                               segment.evaluate, h, steps)
        window = _window(sys.delta_max, *_combined(batch, local_t, local_x, local_f), local_t[-1], h).segment(0)
        times.append(local_t[1:] + k * tau)
        states.append(local_x[0, 1:])
        applied.append(np.tile(control.as_array(), (steps, 1)))
        delays.append(segment.evaluate(local_t[1:]))
        trajectory.windows.append(window)
        trajectory.controls.append(control)
    trajectory.times = np.concatenate(times)
    trajectory.states = np.concatenate(states)
    if applied:
        first = applied[0][:1]
        trajectory.inputs = np.concatenate([first] + applied)
    else:
        trajectory.inputs = np.zeros((1, sys.m))
    trajectory.delays = np.concatenate(delays)
    return trajectory


def simulate_batch(sys: SystemDef, xi0: HistoryBatch, inputs: np.ndarray, delay_at: Callable,
                   tau: float, h_int: Optional[float] = None):
    """
    Open-loop integration of a batch over len(inputs[0]) periods.

    Args:
        xi0 (HistoryBatch): Initial histories.
        inputs (np.ndarray): Shape (B, P, m).
        delay_at (Callable): Global time to delays of shape (B,).

    Returns:
        tuple: times and states, both prefixed by the initial history (negative times included).
    """
    h, steps = resolve_step(sys, tau, h_int)
    _check_span(sys, xi0)
    inputs = np.asarray(inputs, dtype=float)
    times, states, rates = _integrate(sys, xi0, inputs, delay_at, h, steps)
    all_t, all_v, _ = _combined(xi0, times, states, rates)
    return all_t, all_v


def sup_distance(a: HistorySegment, b: HistorySegment, density: int = 10) -> float:
    """
    Sampled sup of the pointwise infinity norm of a - b.

    Every pair is sampled on the same uniform grid of density * SUP_GRID_INTERVALS intervals over
    the span, so the value satisfies the triangle inequality. It is a lower bound of the true sup
    and tightens under refinement.

    Raises:
        ValueError: If the spans or dimensions differ, or density < 1.
    """
    if abs(a.knots[0] - b.knots[0]) > SPAN_TOLERANCE * max(1.0, a.delta_max):
        raise ValueError(f"Span mismatch: [{a.knots[0]}, 0] vs [{b.knots[0]}, 0].")
    if a.n != b.n:
        raise ValueError(f"Dimension mismatch: {a.n} vs {b.n}.")
    if density < 1:
        raise ValueError(f"density must be at least 1, got {density}.")
    grid = np.linspace(a.knots[0], 0.0, density * SUP_GRID_INTERVALS + 1)
    return float(np.max(np.abs(a.evaluate(grid) - b.evaluate(grid))))


def lipschitz_rate_bound(sys: SystemDef, b_x: float, grid_step: float = 0.01,
                         safety: float = SAFETY_FACTOR) -> float:
    """
    L = max{M_1, safety * sup ||f(x, y, u)||} over ||x||, ||y|| <= B_X and ||u|| <= B_U, the sup being
    sampled on a uniform grid that includes the box corners.

    Raises:
        ValueError: If b_x is negative or f returns non-finite values.
    """
    if b_x < 0:
        raise ValueError(f"B_X must be non-negative, got {b_x}.")
    sup = 0.0
    for x, y, u in sys.domain_grid(b_x, grid_step):
        values = sys.evaluate(x, y, u)
        if not np.all(np.isfinite(values)):
            raise ValueError(f"Non-finite vector field values on the domain grid of '{sys.name}'.")
        sup = max(sup, float(np.max(np.abs(values))))
    logger.info("Sampled sup of |f| for '%s' on B_X = %g: %g", sys.name, b_x, sup)
    return max(sys.m_1, safety * sup)


def reference_step(sys: SystemDef, h0: HistorySegment, u: ControlSegment, d: DelaySegment, tau: float,
                   max_step: float = np.inf, rtol: float = 1e-12, atol: float = 1e-14,
                   num_knots: int = 1001) -> HistorySegment:
    """
    High-accuracy one-period solution by the method of steps: the horizon is cut into chunks of
    length delta_min, on which the delayed argument only refers to already computed dense output.

    Returns:
        HistorySegment: Piecewise-linear samples of x_tau on num_knots uniform knots.
    """
    if sys.delta_min <= 0:
        raise ValueError("The method of steps needs delta_min > 0.")
    _check_span(sys, h0)
    u = u if isinstance(u, ControlSegment) else ControlSegment.of(u)
    control = u.as_array()
    starts: List[float] = []
    solutions = []

    def past(s):
        if s <= 0:
            return h0.evaluate(max(s, -sys.delta_max))
        index = max(bisect.bisect_right(starts, s) - 1, 0)
        return solutions[index](s)

    def rhs(t, x):
        return sys.evaluate(x, past(t - float(d.evaluate(t))), control)

    t0, state = 0.0, h0.values[-1].copy()
    while t0 < tau - 1e-15:
        t1 = min(t0 + sys.delta_min, tau)
        solution = solve_ivp(rhs, (t0, t1), state, method='DOP853', rtol=rtol, atol=atol,
                             max_step=max_step, dense_output=True)
        if not solution.success:
            raise IntegrationError(f"Reference solver failed: {solution.message}", t0)
        starts.append(t0)
        solutions.append(solution.sol)
        state = solution.y[:, -1]
        t0 = t1
    knots = np.linspace(-sys.delta_max, 0.0, num_knots)
    values = np.array([past(tau + theta) for theta in knots])
    values[-1] = state
    return HistorySegment(knots, values)
