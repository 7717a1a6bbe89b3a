"""
This file contains the classes for ISS and delta-IDSS certificates, the derived bounds of a time-delay
system, the quadratic Lyapunov-Krasovskii functionals with their derivative estimate, and the
sampled-trajectory falsification of the certificate inequalities.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.integrate import simpson

from time_delay_system import SystemDef, HistorySegment, HistoryBatch, DelayRealization
from dde_solver import simulate_batch, resolve_step, lipschitz_rate_bound, IntegrationError, SAFETY_FACTOR

logger = logging.getLogger(__name__)

VIOLATION_TOLERANCE = 1e-12
SIMPSON_PANELS = 64
MAX_DELAY_FREQUENCY = 50.0


@dataclass(frozen=True)
class KLExp:
    """KL function beta(omega, t) = c * exp(-a * t) * omega."""
    c: float
    a: float

    def __post_init__(self):
        if self.c < 0 or self.a <= 0:
            raise ValueError(f"KLExp needs c >= 0 and a > 0, got c={self.c}, a={self.a}.")

    def __call__(self, omega, t):
        return self.c * np.exp(-self.a * np.asarray(t, dtype=float)) * np.asarray(omega, dtype=float)


@dataclass(frozen=True)
class KLinear:
    """K function gamma(omega) = g * omega."""
    g: float

    def __post_init__(self):
        if self.g < 0:
            raise ValueError(f"KLinear needs g >= 0, got {self.g}.")

    def __call__(self, omega):
        return self.g * np.asarray(omega, dtype=float)

    def inverse(self, value: float) -> float:
        """Largest omega with gamma(omega) <= value (infinite for a zero gain)."""
        return np.inf if self.g == 0 else value / self.g


@dataclass(frozen=True)
class IdssCertificate:
    beta: KLExp
    gamma_u: KLinear
    gamma_d: KLinear


@dataclass(frozen=True)
class IssCertificate:
    beta_iss: KLExp
    gamma_iss: KLinear


@dataclass
class DerivedBounds:
    """B_X, L, kappa, B_J and M_X of a system on its state box."""
    b_x: float
    L: Optional[float] = None
    kappa: Optional[float] = None
    b_j: Optional[float] = None
    m_x: Optional[float] = None


def bx_bound(iss: IssCertificate, b_x0: float, b_u: float) -> float:
    """B_X = max{beta_ISS(B_X0, 0), gamma_ISS(B_U)}"""
    return float(max(iss.beta_iss(b_x0, 0.0), iss.gamma_iss(b_u)))


def mx_bound(bounds: DerivedBounds, b_u: float, d_slope: float) -> float:
    """M_X = (2 B_X + B_U)(1 + d_slope) kappa B_J"""
    if bounds.kappa is None or bounds.b_j is None:
        raise ValueError("mx_bound needs kappa and B_J.")
    return float((2.0 * bounds.b_x + b_u) * (1.0 + d_slope) * bounds.kappa * bounds.b_j)


def _finite_difference_jacobian(sys: SystemDef, x, y, u, step: float = 1e-6):
    z = np.concatenate([x, y, u], axis=1)
    columns = []
    for j in range(z.shape[1]):
        plus, minus = z.copy(), z.copy()
        plus[:, j] += step
        minus[:, j] -= step
        split = lambda w: (w[:, :sys.n], w[:, sys.n:2 * sys.n], w[:, 2 * sys.n:])
        columns.append((sys.evaluate(*split(plus)) - sys.evaluate(*split(minus))) / (2 * step))
    return np.stack(columns, axis=-1)


def estimate_kappa_bj(sys: SystemDef, b_x: float, grid_step: float,
                      kappa: Optional[float] = None, b_j: Optional[float] = None,
                      safety: float = SAFETY_FACTOR) -> Tuple[float, float]:
    """
    Grid estimates of the Lipschitz constant kappa and the differential bound B_J of f on X x X x U.

    With infinity norms on (x, y, u), kappa is the largest induced row sum of the differential and
    B_J the largest entrywise absolute sum, which dominates every induced norm. Both are inflated by
    `safety`. Supplied values are returned unchanged.

    Raises:
        ValueError: If a sampled differential is not finite.
    """
    if kappa is not None and b_j is not None:
        return float(kappa), float(b_j)
    row_sup, total_sup = 0.0, 0.0
    for x, y, u in sys.domain_grid(b_x, grid_step):
        if sys.jacobian is not None:
            jac = np.asarray(sys.jacobian(x, y, u), dtype=float)
        else:
            jac = _finite_difference_jacobian(sys, x, y, u)
        if not np.all(np.isfinite(jac)):
            raise ValueError(f"Non-finite differential samples for system '{sys.name}'.")
        magnitude = np.abs(jac)
        row_sup = max(row_sup, float(np.max(np.sum(magnitude, axis=-1))))
        total_sup = max(total_sup, float(np.max(np.sum(magnitude, axis=(-2, -1)))))
    logger.info("Sampled differential bounds for '%s': row sum %g, entry sum %g", sys.name, row_sup, total_sup)
    return (float(kappa) if kappa is not None else safety * row_sup,
            float(b_j) if b_j is not None else safety * total_sup)


def compute_bounds(sys: SystemDef, iss: IssCertificate, grid_step: float,
                   kappa: Optional[float] = None, b_j: Optional[float] = None) -> DerivedBounds:
    """Computes the full chain B_X -> (L, kappa, B_J) -> M_X."""
    bounds = DerivedBounds(b_x=bx_bound(iss, sys.b_x0, sys.b_u))
    bounds.L = lipschitz_rate_bound(sys, bounds.b_x, grid_step)
    bounds.kappa, bounds.b_j = estimate_kappa_bj(sys, bounds.b_x, grid_step, kappa, b_j)
    bounds.m_x = mx_bound(bounds, sys.b_u, sys.d_slope)
    return bounds


@dataclass
class FalsificationReport:
    kind: str
    trials: int
    horizon: float
    seed: int
    violations: int = 0
    worst_margin: float = np.inf
    witness: Dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def sample_initial_histories(sys: SystemDef, count: int, rng: np.random.Generator) -> HistoryBatch:
    """
    Random linear initial conditions v + s * theta with |s| <= M_1 and |v| + |s| delta_max <= B_X0.
    """
    slope_cap = min(sys.m_1, 0.5 * sys.b_x0 / sys.delta_max) if sys.delta_max > 0 else sys.m_1
    slopes = rng.uniform(-slope_cap, slope_cap, size=(count, sys.n))
    room = sys.b_x0 - np.abs(slopes) * sys.delta_max
    ends = rng.uniform(-1.0, 1.0, size=(count, sys.n)) * room
    knots = np.array([-sys.delta_max, 0.0])
    values = np.stack([ends - slopes * sys.delta_max, ends], axis=1)
    derivatives = np.stack([slopes, slopes], axis=1)
    return HistoryBatch(knots, values, derivatives)


def sample_inputs(sys: SystemDef, count: int, periods: int, rng: np.random.Generator) -> np.ndarray:
    """Random piecewise-constant inputs, shape (count, periods, m)."""
    return rng.uniform(-sys.b_u, sys.b_u, size=(count, periods, sys.m))


def sample_delay_parameters(sys: SystemDef, count: int, rng: np.random.Generator,
                            m_d: Optional[float] = None) -> np.ndarray:
    """
    Parameters (mid, amp, omega, phase) of admissible sinusoidal delays: amp at most half the delay
    range, amp * omega <= d_slope and, when m_d is given, amp * omega**2 <= m_d.
    """
    half = 0.5 * (sys.delta_max - sys.delta_min)
    amp = rng.uniform(0.0, half, size=count)
    with np.errstate(divide='ignore'):
        cap = np.where(amp > 0, sys.d_slope / amp, MAX_DELAY_FREQUENCY)
        if m_d is not None:
            cap = np.minimum(cap, np.where(amp > 0, np.sqrt(m_d / amp), MAX_DELAY_FREQUENCY))
    omega = rng.uniform(0.0, 1.0, size=count) * np.minimum(cap, MAX_DELAY_FREQUENCY)
    mid = sys.delta_min + amp + rng.uniform(0.0, 1.0, size=count) * (2 * half - 2 * amp)
    phase = rng.uniform(0.0, 2 * np.pi, size=count)
    return np.column_stack([mid, amp, omega, phase])


def sample_sinusoidal_delays(sys: SystemDef, count: int, rng: np.random.Generator,
                             m_d: Optional[float] = None) -> DelayRealization:
    """A batch of admissible sinusoidal delay realizations."""
    mid, amp, omega, phase = sample_delay_parameters(sys, count, rng, m_d).T
    return DelayRealization.sinusoid(mid, amp, omega, phase)


def _window_sups(times, values, tau, periods, delta_max):
    """Sup over each window [k tau - delta_max, k tau] of the infinity norm, shape (B, periods + 1)."""
    norms = np.max(np.abs(values), axis=-1)
    result = np.zeros((values.shape[0], periods + 1))
    slack = 1e-9 * max(tau, 1.0)
    for k in range(periods + 1):
        inside = (times >= k * tau - delta_max - slack) & (times <= k * tau + slack)
        result[:, k] = np.max(norms[:, inside], axis=1)
    return result


def _running_input_sups(differences, periods):
    """Sup of |u| over the periods strictly before each instant k tau, shape (B, periods + 1)."""
    per_period = np.max(np.abs(differences), axis=-1)
    result = np.zeros((differences.shape[0], periods + 1))
    if periods:
        result[:, 1:] = np.maximum.accumulate(per_period, axis=1)
    return result


def check_idss_sampled(sys: SystemDef, cert: IdssCertificate, trials: int, horizon: float, seed: int,
                       tau: float, h_int: Optional[float] = None, identical_pairs: bool = False,
                       batch_size: int = 25) -> FalsificationReport:
    """
    Samples trajectory pairs and checks the delta-IDSS inequality at every sampling instant k tau:

        ||x1_t - x2_t|| <= max{beta(||xi1 - xi2||, t), gamma_U(||u1 - u2||) + gamma_D(||Delta1 - Delta2||)}

    with the input and delay sups taken over [0, t).

    Args:
        sys (SystemDef): The system.
        cert (IdssCertificate): Certificate under test.
        trials (int): Number of sampled pairs.
        horizon (float): Time horizon, rounded up to whole periods.
        seed (int): Seed of the generator drawing every parameter upfront.
        tau (float): Spacing of the checked instants.
        identical_pairs (bool): Use the same parameters for both members of each pair.

    Returns:
        FalsificationReport: Violation count, worst margin and the first violating witness.
    """
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}.")
    periods = int(np.ceil(horizon / tau - 1e-9))
    rng = np.random.default_rng(seed)
    histories = [sample_initial_histories(sys, trials, rng) for _ in range(2)]
    inputs = [sample_inputs(sys, trials, periods, rng) for _ in range(2)]
    delays = [sample_delay_parameters(sys, trials, rng) for _ in range(2)]
    if identical_pairs:
        histories[1], inputs[1], delays[1] = histories[0], inputs[0], delays[0]
    report = FalsificationReport(kind='delta-IDSS', trials=trials, horizon=periods * tau, seed=seed)
    resolve_step(sys, tau, h_int)

    for start in range(0, trials, batch_size):
        chunk = slice(start, min(start + batch_size, trials))
        size = chunk.stop - chunk.start
        batch = HistoryBatch(histories[0].knots,
                             np.concatenate([histories[0].values[chunk], histories[1].values[chunk]]),
                             np.concatenate([histories[0].derivatives[chunk], histories[1].derivatives[chunk]]))
        batch_inputs = np.concatenate([inputs[0][chunk], inputs[1][chunk]])
        parameters = np.concatenate([delays[0][chunk], delays[1][chunk]])
        realization = DelayRealization.sinusoid(*parameters.T)
        try:
            times, values = simulate_batch(sys, batch, batch_inputs, realization.evaluate, tau, h_int)
        except IntegrationError as error:
            error.witness.update({'trials': [chunk.start, chunk.stop], 'seed': seed})
            raise
        lhs = _window_sups(times, values[:size] - values[size:], tau, periods, sys.delta_max)
        initial = lhs[:, 0]
        du = _running_input_sups(batch_inputs[:size] - batch_inputs[size:], periods)
        positive = times[times >= 0]
        delay_values = realization.evaluate(positive[:, None])
        delay_gap = np.maximum.accumulate(np.abs(delay_values[:, :size] - delay_values[:, size:]), axis=0)
        dd = np.zeros((size, periods + 1))
        for k in range(1, periods + 1):
            before = int(np.searchsorted(positive, k * tau - 1e-9 * tau))
            dd[:, k] = delay_gap[max(before - 1, 0)]
        instants = np.arange(periods + 1) * tau
        rhs = np.maximum(cert.beta(initial[:, None], instants[None, :]), cert.gamma_u(du) + cert.gamma_d(dd))
        margins = rhs - lhs
        violating = lhs > rhs + VIOLATION_TOLERANCE
        report.worst_margin = min(report.worst_margin, float(np.min(margins)))
        report.violations += int(np.count_nonzero(np.any(violating, axis=1)))
        if np.any(violating) and not report.witness:
            trial, k = (int(i) for i in np.argwhere(violating)[0])
            index = chunk.start + trial
            report.witness = {
                'trial': index, 'time': float(instants[k]), 'lhs': float(lhs[trial, k]), 'rhs': float(rhs[trial, k]),
                'initial': [histories[i].values[index].tolist() for i in range(2)],
                'inputs': [inputs[i][index].tolist() for i in range(2)],
                'delays': [delays[i][index].tolist() for i in range(2)],
            }
        logger.info("delta-IDSS trials %d-%d: %d violations so far, worst margin %.6g",
                    chunk.start, chunk.stop - 1, report.violations, report.worst_margin)
    return report


def check_iss_sampled(sys: SystemDef, iss: IssCertificate, trials: int, horizon: float, seed: int,
                      tau: float, h_int: Optional[float] = None, batch_size: int = 25) -> FalsificationReport:
    """Checks ||x_t|| <= max{beta_ISS(||xi||, t), gamma_ISS(||u||)} on sampled trajectories."""
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}.")
    periods = int(np.ceil(horizon / tau - 1e-9))
    rng = np.random.default_rng(seed)
    histories = sample_initial_histories(sys, trials, rng)
    inputs = sample_inputs(sys, trials, periods, rng)
    delays = sample_delay_parameters(sys, trials, rng)
    report = FalsificationReport(kind='ISS', trials=trials, horizon=periods * tau, seed=seed)
    instants = np.arange(periods + 1) * tau
    for start in range(0, trials, batch_size):
        chunk = slice(start, min(start + batch_size, trials))
        batch = HistoryBatch(histories.knots, histories.values[chunk], histories.derivatives[chunk])
        realization = DelayRealization.sinusoid(*delays[chunk].T)
        times, values = simulate_batch(sys, batch, inputs[chunk], realization.evaluate, tau, h_int)
        lhs = _window_sups(times, values, tau, periods, sys.delta_max)
        u_sup = _running_input_sups(inputs[chunk], periods)
        rhs = np.maximum(iss.beta_iss(lhs[:, :1], instants[None, :]), iss.gamma_iss(u_sup))
        violating = lhs > rhs + VIOLATION_TOLERANCE
        report.worst_margin = min(report.worst_margin, float(np.min(rhs - lhs)))
        report.violations += int(np.count_nonzero(np.any(violating, axis=1)))
        if np.any(violating) and not report.witness:
            trial, k = (int(i) for i in np.argwhere(violating)[0])
            report.witness = {'trial': chunk.start + trial, 'time': float(instants[k]),
                              'lhs': float(lhs[trial, k]), 'rhs': float(rhs[trial, k])}
    return report


@dataclass
class AssumptionCheck:
    value: float
    bound: float
    holds: bool


def assumption_report(sys: SystemDef, iss: IssCertificate, idss: IdssCertificate, tau: float,
                      epsilon: Optional[float] = None, cond3: Optional[float] = None) -> Dict[str, AssumptionCheck]:
    """
    Evaluates the invariance condition beta_ISS(B_X0, tau) + gamma_ISS(B_U) <= B_X0, the sampling
    condition tau > 2 delta_max and, when epsilon is given, beta(epsilon, tau) < epsilon and the
    quantization inequality value cond3 <= epsilon.
    """
    checks = {}
    invariance = float(iss.beta_iss(sys.b_x0, tau) + iss.gamma_iss(sys.b_u))
    checks['invariance'] = AssumptionCheck(invariance, sys.b_x0, invariance <= sys.b_x0)
    checks['sampling'] = AssumptionCheck(tau, 2 * sys.delta_max, tau > 2 * sys.delta_max)
    if epsilon is not None:
        contraction = float(idss.beta(epsilon, tau))
        checks['contraction'] = AssumptionCheck(contraction, epsilon, contraction < epsilon)
        if cond3 is not None:
            checks['quantization'] = AssumptionCheck(cond3, epsilon, cond3 <= epsilon)
    return checks


def _kernel(s, delta_max, r0, r_delta):
    return -r_delta * s / delta_max + r0 * (s + delta_max) / delta_max


def _piecewise_simpson(func, breaks, panels=SIMPSON_PANELS):
    """Composite Simpson over consecutive break points, `panels` (even) panels per piece."""
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b - a <= 0:
            continue
        s = np.linspace(a, b, panels + 1)
        total += float(simpson(func(s), x=s))
    return total


def _check_lk_parameters(params):
    r0, r_delta = params
    if not r0 > r_delta > 0:
        raise ValueError(f"Need r0 > r_delta > 0, got r0={r0}, r_delta={r_delta}.")
    return r0, r_delta


def _functional_value(error, delta_t, delta_max, r0, r_delta, extra_breaks=()):
    """Quadratic functional of an error profile given as a vectorized callable on [-delta_max, 0]."""
    squared = lambda s: np.sum(np.atleast_2d(error(s)) ** 2, axis=-1)
    breaks = sorted({-delta_max, -delta_t, 0.0, *[b for b in extra_breaks if -delta_max < b < 0]})
    head = float(squared(np.array([0.0]))[0])
    recent = _piecewise_simpson(squared, [b for b in breaks if b >= -delta_t])
    weighted = _piecewise_simpson(lambda s: _kernel(s, delta_max, r0, r_delta) * squared(s), breaks)
    return head + 2.0 * recent + weighted


def lk_value(kind: str, params: Tuple[float, float], t: float, phi1: HistorySegment,
             phi2: Optional[HistorySegment], delta_at_t: float) -> float:
    """
    Quadratic Lyapunov-Krasovskii functional

        V = |e(0)|^2 + 2 int_{-Delta(t)}^0 |e|^2 + int_{-delta_max}^0 k(s) |e|^2,
        k(s) = -r_delta s / delta_max + r0 (s + delta_max) / delta_max,

    with e = phi1 - phi2 for kind 'IDSS' and e = phi1 for kind 'ISS'.

    Raises:
        ValueError: If r0 > r_delta > 0 fails or kind is unknown.
    """
    r0, r_delta = _check_lk_parameters(params)
    if kind not in ('ISS', 'IDSS'):
        raise ValueError(f"Unknown functional kind '{kind}'.")
    delta_max = phi1.delta_max
    if kind == 'ISS' or phi2 is None:
        error = phi1.evaluate
    else:
        error = lambda s: phi1.evaluate(s) - phi2.evaluate(s)
    return _functional_value(error, delta_at_t, delta_max, r0, r_delta)


def _shifted(sys, x: HistorySegment, delta_t, theta, u, d):
    """Profile x^{theta, Delta(t)} of the derivative definition."""
    head = x.values[-1]
    rate = sys.evaluate(head, x.evaluate(-delta_t) + d, u)

    def profile(s):
        s = np.atleast_1d(s)
        inner = np.clip(s + theta, -x.delta_max, 0.0)
        extension = head[None, :] + (s + theta)[:, None] * rate[None, :]
        return np.where((s < -theta)[:, None], x.evaluate(inner), extension)

    return profile


def lk_derivative_estimate(sys: SystemDef, params: Tuple[float, float], t: float,
                           x1: HistorySegment, x2: Optional[HistorySegment], u1, u2, d,
                           delta_at_t: float, theta_fd: float = 1e-4, delta_rate: float = 0.0,
                           kind: str = 'IDSS') -> float:
    """
    Forward difference estimate of D+V with the shifted profiles
    x1(0) + (s + theta) f(x1(0), x1(-Delta(t)) + d, u1) and x2(0) + (s + theta) f(x2(0), x2(-Delta(t)), u2)
    on [-theta, 0]. With kind 'ISS' the second argument is the zero profile.
    """
    r0, r_delta = _check_lk_parameters(params)
    delta_max = x1.delta_max
    u1 = np.atleast_1d(np.asarray(u1, dtype=float))
    u2 = np.atleast_1d(np.asarray(u2, dtype=float))
    d = np.broadcast_to(np.asarray(d, dtype=float), (sys.n,))
    if kind == 'ISS' or x2 is None:
        x2 = HistorySegment.constant(np.zeros(sys.n), delta_max)
        u2 = np.zeros(sys.m)
    before = _functional_value(lambda s: x1.evaluate(s) - x2.evaluate(s), delta_at_t, delta_max, r0, r_delta)
    first = _shifted(sys, x1, delta_at_t, theta_fd, u1, d)
    second = _shifted(sys, x2, delta_at_t, theta_fd, u2, np.zeros(sys.n))
    delta_next = float(np.clip(delta_at_t + theta_fd * delta_rate, sys.delta_min, sys.delta_max))
    after = _functional_value(lambda s: first(s) - second(s), delta_next, delta_max, r0, r_delta,
                              extra_breaks=(-theta_fd,))
    return (after - before) / theta_fd
