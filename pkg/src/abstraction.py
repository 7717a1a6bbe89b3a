"""
This module provides the construction of symbolic models of time-delay systems: symbolic states as
quantized spline profiles, tolerance-ball successors computed by batched integration, the
on-the-fly breadth-first closure from the initial state and a sampled concrete stand-in used to
cross-check the symbolic model.
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from time_delay_system import SystemDef, HistorySegment, HistoryBatch, ControlSegment, evaluation_grid
from dde_solver import step_batch
from certificates import (IdssCertificate, IssCertificate, assumption_report, sample_initial_histories,
                          sample_inputs, sample_sinusoidal_delays)
from spline_approx import (QuantizationParams, SplineProfile, BudgetExceeded, spline_basis, project,
                           lattice_indices, enumerate_input_labels, enumerate_delay_labels)
from transition_system import FiniteATS, sup_distance

logger = logging.getLogger(__name__)

BATCH_LIMIT = 4096
ACCEPT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SymbolicState:
    """Canonical encoding of a quantized profile: lattice indices, knot-major, of length (N_X + 2) n."""
    indices: Tuple[int, ...]

    def coefficients(self, theta_x: float, n: int) -> np.ndarray:
        return (2.0 * theta_x) * np.asarray(self.indices, dtype=float).reshape(-1, n)

    def profile(self, params: QuantizationParams, n: int) -> SplineProfile:
        return SplineProfile(params.state_grid(), self.coefficients(params.theta_X, n))

    def endpoint(self, theta_x: float, n: int) -> np.ndarray:
        """Profile value at theta = 0."""
        return self.coefficients(theta_x, n)[-1]

    @classmethod
    def from_profile(cls, profile: SplineProfile, theta_x: float) -> 'SymbolicState':
        return cls(tuple(int(k) for k in lattice_indices(profile.coeffs, 2.0 * theta_x).ravel()))


@dataclass
class AbstractionConfig:
    """
    Parameters of the symbolic model. In coarsened mode the disturbance labels are representatives on
    the pitch theta_D_coarse and the tolerance grows by gamma_D of their cover radius.
    """
    params: QuantizationParams
    cert: IdssCertificate
    b_x: float
    disturbance_mode: str = 'exact'
    theta_D_coarse: Optional[float] = None
    max_states: int = 100_000
    label_budget: int = 10_000
    candidate_budget: int = 100_000
    control_stride: int = 1
    h_int: Optional[float] = None
    density: int = 10

    def __post_init__(self):
        if self.disturbance_mode not in ('exact', 'coarsened'):
            raise ValueError(f"Unknown disturbance mode '{self.disturbance_mode}'.")
        if self.disturbance_mode == 'coarsened':
            if self.theta_D_coarse is None or self.theta_D_coarse < self.params.theta_D:
                raise ValueError(f"Coarsened mode needs theta_D_coarse >= theta_D = {self.params.theta_D}.")
        if self.control_stride < 1:
            raise ValueError(f"control_stride must be at least 1, got {self.control_stride}.")
        if self.tolerance <= 0:
            raise ValueError("The transition tolerance must be positive.")

    @property
    def tolerance(self) -> float:
        """max{beta(lambda_X, tau), gamma_D(lambda_D)} + lambda_X"""
        p = self.params
        return float(max(self.cert.beta(p.lambda_X, p.tau), self.cert.gamma_d(p.lambda_D)) + p.lambda_X)

    def control_labels(self, sys: SystemDef) -> List[ControlSegment]:
        """Input labels, restricted to lattice indices divisible by the stride (the origin stays)."""
        labels = enumerate_input_labels(sys.b_u, sys.m, self.params.lambda_U)
        if self.control_stride == 1:
            return labels
        pitch = 2.0 * self.params.lambda_U
        return [label for label in labels
                if all(int(round(v / pitch)) % self.control_stride == 0 for v in label.value)]

    def disturbance_labels(self, sys: SystemDef) -> Tuple[np.ndarray, float]:
        """Delay label coefficients, shape (count, N_D + 2), and the cover radius (0 when exact)."""
        labels = enumerate_delay_labels(sys.delta_min, sys.delta_max, self.params.N_D, self.params.theta_D,
                                        self.label_budget)
        logger.info("Delay label set has %d elements.", labels.cardinality)
        if self.disturbance_mode == 'exact':
            return labels.materialize(), 0.0
        representatives, cover = labels.coarsened(self.theta_D_coarse)
        logger.info("Coarsened to %d representatives, cover radius %g.", len(representatives), cover)
        return representatives, cover

    def effective_tolerance(self, cover: float) -> float:
        return self.tolerance + float(self.cert.gamma_d(cover))


def check_initial_regularity(xi0: HistorySegment, sys: SystemDef, m_x: float, samples: int = 401) -> Dict:
    """
    Sampled checks of ||xi0|| <= B_X0, ||D xi0|| <= M_1 and ||D^2 xi0|| <= M_X by finite differences.
    """
    grid = np.linspace(-sys.delta_max, 0.0, samples)
    values = xi0.evaluate(grid)
    spacing = grid[1] - grid[0]
    first = np.diff(values, axis=0) / spacing
    second = np.diff(values, n=2, axis=0) / spacing ** 2
    report = {
        'norm': float(np.max(np.abs(values))),
        'first_derivative': float(np.max(np.abs(first))),
        'second_derivative': float(np.max(np.abs(second))) if len(second) else 0.0,
    }
    report['holds'] = (report['norm'] <= sys.b_x0 + 1e-12 and report['first_derivative'] <= sys.m_1 + 1e-9
                       and report['second_derivative'] <= m_x + 1e-9)
    return report


def initial_symbolic_state(xi0: HistorySegment, sys: SystemDef, cfg: AbstractionConfig) -> SymbolicState:
    """
    Projects the initial condition onto the state lattice.

    Raises:
        ValueError: If xi0 exceeds B_X0 or the projection is farther than lambda_X from xi0.
    """
    regularity = check_initial_regularity(xi0, sys, cfg.params.M_X)
    if regularity['norm'] > sys.b_x0 + 1e-12:
        raise ValueError(f"Initial condition has norm {regularity['norm']:.6g} > B_X0 = {sys.b_x0}.")
    if not regularity['holds']:
        logger.warning("Initial condition regularity check failed: %s", regularity)
    profile = project(xi0, cfg.params.state_grid(), cfg.params.theta_X, (-cfg.b_x, cfg.b_x))
    distance = sup_distance(profile, xi0)
    if distance > cfg.params.lambda_X + 1e-12:
        raise ValueError(f"Projected initial state is {distance:.6g} away from xi0, more than "
                         f"lambda_X = {cfg.params.lambda_X:.6g}; the parameters are inconsistent.")
    return SymbolicState.from_profile(profile, cfg.params.theta_X)


class SuccessorEngine:
    """Batched evaluation of tolerance-ball successors for (state, control, delay) triples."""
    def __init__(self, sys: SystemDef, cfg: AbstractionConfig, delay_labels: np.ndarray, tolerance: float):
        self.sys = sys
        self.cfg = cfg
        self.delay_labels = np.asarray(delay_labels, dtype=float)
        self.tolerance = tolerance
        params = cfg.params
        self.grid = params.state_grid()
        self.knots = self.grid.knots()
        self.delay_knots = params.delay_grid().knots()
        self.pitch = 2.0 * params.theta_X
        self.bound = int(np.floor(cfg.b_x / self.pitch + 1e-9))

    def _delay_function(self, coefficients: np.ndarray):
        knots = self.delay_knots

        def delay_at(t):
            return _interpolate_rows(knots, coefficients, t)

        return delay_at

    def expand(self, states: Sequence[SymbolicState], controls: np.ndarray, label_ids: Sequence[int],
               delay_ids: Sequence[int]) -> List[List[Tuple[int, ...]]]:
        """
        Successor index tuples for every triple (states[i], controls[label_ids[i]], delay label delay_ids[i]).
        """
        results: List[List[Tuple[int, ...]]] = []
        n, m = self.sys.n, self.sys.m
        for start in range(0, len(states), BATCH_LIMIT):
            stop = min(start + BATCH_LIMIT, len(states))
            values = np.array([state.coefficients(self.cfg.params.theta_X, n) for state in states[start:stop]])
            batch = HistoryBatch(self.knots, values, None)
            inputs = np.asarray(controls, dtype=float)[list(label_ids[start:stop])].reshape(-1, m)
            delays = self.delay_labels[list(delay_ids[start:stop])]
            windows = step_batch(self.sys, batch, inputs, self._delay_function(delays),
                                 self.cfg.params.tau, self.cfg.h_int)
            results.extend(self._filter(windows))
        return results

    def _filter(self, windows: HistoryBatch) -> List[List[Tuple[int, ...]]]:
        grid = evaluation_grid([self.knots, windows.knots], self.cfg.density)
        target = windows.evaluate(grid)
        at_knots = windows.evaluate(self.knots)
        basis = np.stack([spline_basis(i, grid, self.grid) for i in range(self.grid.size)], axis=1)
        n = self.sys.n
        found = []
        for member in range(len(windows)):
            samples = at_knots[member].ravel()
            low = np.maximum(np.ceil((samples - self.tolerance) / self.pitch - 1e-12), -self.bound).astype(int)
            high = np.minimum(np.floor((samples + self.tolerance) / self.pitch + 1e-12), self.bound).astype(int)
            if np.any(high < low):
                found.append([])
                continue
            count = int(np.prod(high - low + 1, dtype=float))
            if count > self.cfg.candidate_budget:
                raise BudgetExceeded(f"{count} successor candidates exceed the budget of "
                                     f"{self.cfg.candidate_budget}.")
            candidates = np.array(list(itertools.product(*[range(a, b + 1) for a, b in zip(low, high)])),
                                  dtype=np.int64)
            profiles = np.einsum('ek,ckn->cen', basis, self.pitch * candidates.reshape(len(candidates), -1, n))
            distance = np.max(np.abs(profiles - target[member][None]), axis=(1, 2))
            accepted = candidates[distance <= self.tolerance + ACCEPT_TOLERANCE]
            found.append([tuple(int(k) for k in row) for row in accepted])
        return found


def _interpolate_rows(knots: np.ndarray, rows: np.ndarray, t: float) -> np.ndarray:
    """Linear interpolation of each row of coefficients at one time."""
    t = float(np.clip(t, knots[0], knots[-1]))
    j = min(int(np.searchsorted(knots, t, side='right')) - 1, len(knots) - 2)
    weight = (t - knots[j]) / (knots[j + 1] - knots[j])
    return rows[:, j] * (1.0 - weight) + rows[:, j + 1] * weight


def successors(q: SymbolicState, a: ControlSegment, cfg: AbstractionConfig, sys: SystemDef) -> Set[SymbolicState]:
    """
    Lattice states within the transition tolerance of x_tau(q, a, b), over all disturbance labels b.
    """
    delay_labels, cover = cfg.disturbance_labels(sys)
    engine = SuccessorEngine(sys, cfg, delay_labels, cfg.effective_tolerance(cover))
    count = len(delay_labels)
    found = engine.expand([q] * count, a.as_array()[None, :], [0] * count, list(range(count)))
    return {SymbolicState(indices) for targets in found for indices in targets}


def build_onthefly(sys: SystemDef, cfg: AbstractionConfig, xi0: HistorySegment) -> FiniteATS:
    """
    Breadth-first closure of the symbolic model from the projection of xi0 over every control label
    and the configured disturbance labels. States registered after max_states expansions stay
    unexpanded and are listed in model.frontier.
    """
    controls = cfg.control_labels(sys)
    delay_labels, cover = cfg.disturbance_labels(sys)
    tolerance = cfg.effective_tolerance(cover)
    engine = SuccessorEngine(sys, cfg, delay_labels, tolerance)
    control_values = np.array([label.as_array() for label in controls])
    model = FiniteATS(controls, [tuple(row) for row in delay_labels], metric=sup_distance)
    model.meta.update({'theta_X': cfg.params.theta_X, 'lambda_U': cfg.params.lambda_U, 'tau': cfg.params.tau,
                       'epsilon': cfg.params.epsilon, 'tolerance': tolerance, 'cover_radius': cover,
                       'N_X': cfg.params.N_X, 'b_x': cfg.b_x, 'delta_max': sys.delta_max, 'n': sys.n, 'm': sys.m,
                       'disturbance_mode': cfg.disturbance_mode})
    ids: Dict[Tuple[int, ...], int] = {}

    def register(indices):
        if indices not in ids:
            state = SymbolicState(indices)
            ids[indices] = model.add_state(state.profile(cfg.params, sys.n), state)
        return ids[indices]

    root = initial_symbolic_state(xi0, sys, cfg)
    model.set_initial(register(root.indices))
    layer = [root.indices]
    expanded = 0
    depth = 0
    while layer:
        room = cfg.max_states - expanded
        if room <= 0:
            break
        current, postponed = layer[:room], layer[room:]
        expanded += len(current)
        triples = [(q, a, b) for q in current for a in range(len(controls)) for b in range(len(delay_labels))]
        found = engine.expand([SymbolicState(q) for q, _, _ in triples], control_values,
                              [a for _, a, _ in triples], [b for _, _, b in triples])
        before = model.num_states
        for (q, a, b), targets in zip(triples, found):
            source = ids[q]
            for indices in sorted(targets):
                model.add_transition(source, a, b, register(indices))
        fresh = [model.payloads[i].indices for i in range(before, model.num_states)]
        depth += 1
        logger.info("Layer %d: expanded %d states, %d new, %d total.", depth, len(current), len(fresh),
                    model.num_states)
        layer = postponed + fresh
    if layer:
        model.frontier = {ids[q] for q in layer}
        logger.warning("State budget of %d reached; %d states left unexpanded.", cfg.max_states, len(layer))
    return model


def export_state_table(model: FiniteATS) -> str:
    """Sidecar of a model: its parameters as header lines, then state id to lattice indices."""
    lines = [f"# {key} = {value!r}" for key, value in model.meta.items()]
    lines += [f"{q}: {' '.join(str(k) for k in state.indices)}" for q, state in enumerate(model.payloads)]
    return '\n'.join(lines) + '\n'


def import_state_table(model: FiniteATS, text: str) -> FiniteATS:
    """Restores the symbolic payloads and parameters of a model read back from text."""
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith('#'):
            key, _, value = line[1:].partition('=')
            value = value.strip()
            try:
                model.meta[key.strip()] = float(value) if '.' in value or 'e' in value else int(value)
            except ValueError:
                model.meta[key.strip()] = value.strip("'")
            continue
        state, _, indices = line.partition(':')
        q = int(state)
        if not 0 <= q < model.num_states:
            raise ValueError(f"Line {number}: state {q} is not in the model.")
        model.payloads[q] = SymbolicState(tuple(int(k) for k in indices.split()))
    return model


def build_sampled_concrete(sys: SystemDef, cfg: AbstractionConfig, xi0: HistorySegment,
                           merge_radius: float, max_states: int = 500) -> FiniteATS:
    """
    Sampled stand-in for the concrete sampled system: histories reached from xi0 under the control
    labels and constant delays at the delay lattice values. A new history within merge_radius (sup
    distance) of a known one is identified with it.

    Raises:
        BudgetExceeded: If more than max_states histories are kept.
    """
    controls = cfg.control_labels(sys)
    delay_values = np.unique(cfg.disturbance_labels(sys)[0])
    model = FiniteATS(controls, [tuple([v] * (cfg.params.N_D + 2)) for v in delay_values], metric=sup_distance)
    model.set_initial(model.add_state(xi0, xi0))
    control_values = np.array([label.as_array() for label in controls])
    known = None
    layer = [model.initial]
    while layer:
        pairs = [(q, a, b) for q in layer for a in range(len(controls)) for b in range(len(delay_values))]
        constant = delay_values[[b for _, _, b in pairs]]
        windows = step_batch(sys, HistoryBatch.stack([model.outputs[q] for q, _, _ in pairs]),
                             control_values[[a for _, a, _ in pairs]], lambda t: constant,
                             cfg.params.tau, cfg.h_int)
        sampled = windows.evaluate(evaluation_grid([windows.knots], cfg.density))
        fresh = []
        for member, (q, a, b) in enumerate(pairs):
            target = None
            if known is not None:
                distance = np.max(np.abs(known - sampled[member][None]), axis=(1, 2))
                closest = int(np.argmin(distance))
                if distance[closest] <= merge_radius:
                    target = closest + 1
            if target is None:
                if model.num_states >= max_states:
                    raise BudgetExceeded(f"Sampled system exceeds {max_states} states.")
                segment = windows.segment(member)
                target = model.add_state(segment, segment)
                known = sampled[member][None] if known is None else np.concatenate([known, sampled[member][None]])
                fresh.append(target)
            model.add_transition(q, a, b, target)
        layer = fresh
    logger.info("Sampled concrete system has %d states.", model.num_states)
    return model


@dataclass
class RegularityReport:
    trials: int
    max_norm: float
    max_second_derivative: float
    b_x0: float
    m_x: float
    assumptions: Dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_norm <= self.b_x0 + 1e-9 and self.max_second_derivative <= self.m_x + 1e-9


def verify_regularity_invariance(sys: SystemDef, iss: IssCertificate, cfg: AbstractionConfig, trials: int,
                                 seed: int, samples: int = 401) -> RegularityReport:
    """
    Checks the sampling assumptions, then integrates random admissible one-period trajectories and
    estimates ||x_tau|| and a finite-difference ||D^2 x_tau|| against B_X0 and M_X.

    Raises:
        ValueError: If an assumption fails, naming it.
    """
    checks = assumption_report(sys, iss, cfg.cert, cfg.params.tau)
    broken = [name for name in ('invariance', 'sampling') if not checks[name].holds]
    if broken:
        raise ValueError(f"Assumptions violated: {', '.join(broken)} "
                         f"({', '.join(f'{checks[b].value:.6g} vs {checks[b].bound:.6g}' for b in broken)}).")
    rng = np.random.default_rng(seed)
    histories = sample_initial_histories(sys, trials, rng)
    inputs = sample_inputs(sys, trials, 1, rng)[:, 0]
    delays = sample_sinusoidal_delays(sys, trials, rng, m_d=cfg.params.M_D)
    windows = step_batch(sys, histories, inputs, delays.evaluate, cfg.params.tau, cfg.h_int)
    grid = np.linspace(-sys.delta_max, 0.0, samples)
    values = windows.evaluate(grid)
    spacing = grid[1] - grid[0]
    second = np.diff(values, n=2, axis=1) / spacing ** 2
    report = RegularityReport(trials=trials, max_norm=float(np.max(np.abs(values))),
                              max_second_derivative=float(np.max(np.abs(second))), b_x0=sys.b_x0,
                              m_x=cfg.params.M_X,
                              assumptions={k: vars(v) for k, v in checks.items()})
    logger.info("Regularity check: max norm %.6g (B_X0 %.6g), max |D2| %.6g (M_X %.6g)",
                report.max_norm, sys.b_x0, report.max_second_derivative, cfg.params.M_X)
    return report
