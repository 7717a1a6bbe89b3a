"""
This module provides controller synthesis on symbolic models for timed phase specifications: regions,
the phase automaton, the reach/stay game solved by controllable-predecessor iterations, strategy
tables, exhaustive model playouts and closed-loop execution on the concrete system.
"""
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from time_delay_system import SystemDef, HistorySegment, DelayRealization, ControlSegment
from dde_solver import Trajectory, simulate
from spline_approx import KnotGrid, project
from transition_system import FiniteATS
from abstraction import SymbolicState

logger = logging.getLogger(__name__)

STEP_TOLERANCE = 1e-9
DEFAULT_HORIZON_STEPS = 8


class UnrealizableError(RuntimeError):
    """Raised when the initial product state is outside the winning set."""
    def __init__(self, message: str, state: Tuple):
        super().__init__(message)
        self.state = state


class StrategyHole(KeyError):
    """Raised when execution reaches a product state the strategy does not cover."""
    def __init__(self, state: Tuple):
        super().__init__(f"No strategy entry for {state}")
        self.state = state


class Region:
    """Finite union of axis-aligned boxes in R^n; infinite bounds are allowed."""
    def __init__(self, lows, highs):
        self.lows = np.atleast_2d(np.asarray(lows, dtype=float))
        self.highs = np.atleast_2d(np.asarray(highs, dtype=float))
        if self.lows.shape != self.highs.shape:
            raise ValueError("Region bounds must have matching shapes.")

    @property
    def n(self) -> int:
        return self.lows.shape[1]

    @property
    def is_empty(self) -> bool:
        return self.lows.shape[0] == 0

    def contains(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.any(np.all((self.lows <= x) & (x <= self.highs), axis=1)))

    def eroded(self, margin: float) -> 'Region':
        """Shrinks every box by margin in the infinity norm and drops boxes that vanish."""
        lows, highs = self.lows + margin, self.highs - margin
        keep = np.all(lows <= highs, axis=1)
        return Region(lows[keep].reshape(-1, self.n), highs[keep].reshape(-1, self.n))

    def to_config(self) -> List:
        bound = lambda v: None if np.isinf(v) else float(v)
        return [[[bound(lo), bound(hi)] for lo, hi in zip(low, high)] for low, high in zip(self.lows, self.highs)]

    @classmethod
    def everywhere(cls, n: int) -> 'Region':
        return cls(np.full((1, n), -np.inf), np.full((1, n), np.inf))

    @classmethod
    def from_config(cls, boxes: Sequence, n: int) -> 'Region':
        """
        Reads a list of boxes, each a list of n [low, high] pairs; null stands for an unbounded side.

        Raises:
            ValueError: On malformed boxes.
        """
        lows, highs = [], []
        for box in boxes:
            if len(box) != n:
                raise ValueError(f"Box {box} has {len(box)} intervals, expected {n}.")
            low = [-np.inf if pair[0] is None else float(pair[0]) for pair in box]
            high = [np.inf if pair[1] is None else float(pair[1]) for pair in box]
            if any(lo > hi for lo, hi in zip(low, high)):
                raise ValueError(f"Box {box} has an interval with low > high.")
            lows.append(low)
            highs.append(high)
        return cls(np.array(lows, dtype=float).reshape(-1, n), np.array(highs, dtype=float).reshape(-1, n))


@dataclass
class Phase:
    target: Region
    mode: str
    steps: int

    def __post_init__(self):
        if self.mode not in ('reach', 'stay'):
            raise ValueError(f"Unknown phase mode '{self.mode}'.")
        if self.steps < 1:
            raise ValueError(f"A phase needs at least one step, got {self.steps}.")


def steps_for(duration: float, tau: float) -> int:
    """
    Converts a continuous-time duration into sampling steps.

    Raises:
        ValueError: If the duration is not an integer multiple of tau.
    """
    ratio = duration / tau
    steps = int(round(ratio))
    if abs(ratio - steps) > STEP_TOLERANCE * max(1.0, ratio):
        raise ValueError(f"Duration {duration} s is not a multiple of tau = {tau} s.")
    return steps


@dataclass
class PhaseSpec:
    """Global invariant plus an ordered list of reach-within and stay-for phases."""
    invariant: Region
    phases: List[Phase]

    @property
    def total_steps(self) -> int:
        return sum(phase.steps for phase in self.phases)

    def eroded(self, margin: float) -> 'PhaseSpec':
        """
        Raises:
            ValueError: If the invariant or a phase target erodes to the empty set.
        """
        invariant = self.invariant.eroded(margin)
        if invariant.is_empty:
            raise ValueError(f"The invariant region is empty after erosion by {margin:g}.")
        phases = []
        for index, phase in enumerate(self.phases):
            target = phase.target.eroded(margin)
            if target.is_empty:
                raise ValueError(f"The target of phase {index} is empty after erosion by {margin:g}.")
            phases.append(Phase(target, phase.mode, phase.steps))
        return PhaseSpec(invariant, phases)

    @classmethod
    def from_config(cls, spec: Dict, tau: float, n: int) -> 'PhaseSpec':
        """
        Builds a specification from its configuration section. Reach phases give `within_s` or, when
        the reach has no deadline, `horizon_steps`; stay phases give `for_s` and reuse the previous
        target unless they name their own.
        """
        invariant = Region.from_config(spec['invariant'], n) if spec.get('invariant') else Region.everywhere(n)
        phases, previous = [], None
        for index, entry in enumerate(spec['phases']):
            mode = entry['mode']
            if 'target' in entry:
                target = Region.from_config(entry['target'], n)
            elif previous is not None:
                target = previous
            else:
                raise ValueError(f"Phase {index} has no target.")
            if mode == 'reach':
                if 'within_s' in entry:
                    steps = steps_for(float(entry['within_s']), tau)
                else:
                    steps = int(entry.get('horizon_steps', DEFAULT_HORIZON_STEPS))
            else:
                steps = steps_for(float(entry['for_s']), tau)
            phases.append(Phase(target, mode, steps))
            previous = target
        return cls(invariant, phases)


def _settle(phases: Sequence[Phase], hits: Callable[[int], bool], phase: int, clock: int) -> Tuple[int, int]:
    """
    Advances the phase automaton at one state: completed reach and stay phases hand over to the next
    phase with its clock at zero.
    """
    while phase < len(phases):
        current = phases[phase]
        if current.mode == 'reach' and hits(phase):
            phase, clock = phase + 1, 0
        elif current.mode == 'stay' and clock >= current.steps:
            phase, clock = phase + 1, 0
        else:
            break
    return phase, clock


def state_key(model: FiniteATS, q: int) -> Tuple[int, ...]:
    """Canonical key of a model state: lattice indices of symbolic states, else the id."""
    payload = model.payloads[q]
    return tuple(payload.indices) if isinstance(payload, SymbolicState) else (q,)


def state_endpoint(model: FiniteATS, q: int) -> np.ndarray:
    """Output value at theta = 0."""
    payload = model.payloads[q]
    if isinstance(payload, SymbolicState):
        return payload.endpoint(model.meta['theta_X'], model.meta['n'])
    output = model.outputs[q]
    if hasattr(output, 'evaluate'):
        return np.atleast_1d(output.evaluate(0.0))
    values = np.atleast_1d(np.asarray(output, dtype=float))
    return values.reshape(-1, model.meta.get('n', values.size))[-1]


@dataclass
class Strategy:
    """
    Positional strategy on the product of the model with the phase automaton, keyed by
    (state key, phase, clock) and valued in control label indices.
    """
    moves: Dict[Tuple[Tuple[int, ...], int, int], int]
    controls: List[ControlSegment]
    spec: PhaseSpec
    epsilon: float
    margin: float
    initial: Optional[Tuple[Tuple[int, ...], int, int]] = None
    meta: Dict = field(default_factory=dict)
    graph: Optional[nx.DiGraph] = None

    def __len__(self):
        return len(self.moves)

    def control_index(self, key: Tuple[int, ...], phase: int, clock: int) -> int:
        try:
            return self.moves[(tuple(key), phase, clock)]
        except KeyError:
            raise StrategyHole((tuple(key), phase, clock)) from None

    def control_for(self, key: Tuple[int, ...], phase: int, clock: int) -> ControlSegment:
        return self.controls[self.control_index(key, phase, clock)]


def _admissible_moves(model: FiniteATS) -> List[List[Tuple[int, np.ndarray]]]:
    """Per state, the control labels answered by every disturbance label, with their successor sets."""
    moves = []
    labels = len(model.disturbance_labels)
    for q in range(model.num_states):
        if q in model.frontier:
            moves.append([])
            continue
        options = []
        for a in model.enabled(q):
            if len(model.disturbance_posts(q, a)) == labels:
                options.append((a, np.array(sorted(model.control_post(q, a)), dtype=np.int64)))
        moves.append(options)
    return moves


def _controllable_predecessor(moves, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """States with a label whose successors all lie in target, and the smallest such label."""
    winning = np.zeros(len(moves), dtype=bool)
    choice = np.full(len(moves), -1, dtype=np.int64)
    for q, options in enumerate(moves):
        for a, post in options:
            if np.all(target[post]):
                winning[q] = True
                choice[q] = a
                break
    return winning, choice


def solve_game(model: FiniteATS, spec: PhaseSpec) -> Tuple[Dict, Dict]:
    """
    Backward iteration over phases and clocks. Returns winning sets and label choices indexed by
    (phase, clock). The PhaseSpec must already be eroded.
    """
    endpoints = [state_endpoint(model, q) for q in range(model.num_states)]
    inside = np.array([spec.invariant.contains(e) for e in endpoints], dtype=bool)
    moves = _admissible_moves(model)
    winning: Dict[Tuple[int, int], np.ndarray] = {}
    choices: Dict[Tuple[int, int], np.ndarray] = {}
    entering = np.ones(model.num_states, dtype=bool)
    for index in reversed(range(len(spec.phases))):
        phase = spec.phases[index]
        hit = np.array([phase.target.contains(e) for e in endpoints], dtype=bool)
        goal = inside & hit & entering
        winning[(index, phase.steps)] = goal
        for clock in reversed(range(phase.steps)):
            able, choice = _controllable_predecessor(moves, winning[(index, clock + 1)])
            if phase.mode == 'reach':
                active = inside & ~hit & able
                winning[(index, clock)] = goal | active
            else:
                active = inside & hit & able
                winning[(index, clock)] = active
            choices[(index, clock)] = np.where(active, choice, -1)
        entering = winning[(index, 0)]
        logger.info("Phase %d (%s, %d steps): %d winning states at clock 0.", index, phase.mode,
                    phase.steps, int(np.count_nonzero(entering)))
    return winning, choices


def synthesize(model: FiniteATS, spec: PhaseSpec, epsilon: float, intersample_margin: float = 0.0) -> Strategy:
    """
    Solves the reach/stay game on the model with every region eroded by epsilon (plus an optional
    inter-sample margin), extracts the smallest-index winning label at each product state and keeps
    the entries reachable from the initial product state.

    Raises:
        ValueError: If an eroded region is empty.
        UnrealizableError: If the initial product state is losing.
    """
    if model.initial is None:
        raise ValueError("The model has no initial state.")
    margin = epsilon + intersample_margin
    eroded = spec.eroded(margin)
    winning, choices = solve_game(model, eroded)
    endpoints = [state_endpoint(model, q) for q in range(model.num_states)]
    count = len(eroded.phases)

    def settle(q, phase, clock):
        return _settle(eroded.phases, lambda i: eroded.phases[i].target.contains(endpoints[q]), phase, clock)

    def wins(q, phase, clock):
        return phase == count or bool(winning[(phase, clock)][q])

    start = (model.initial, *settle(model.initial, 0, 0))
    if not wins(*start):
        key = (state_key(model, start[0]), start[1], start[2])
        raise UnrealizableError(f"Specification is unrealizable: initial product state {key} is losing.", key)

    graph = nx.DiGraph()
    for (phase, clock), choice in choices.items():
        for q in np.flatnonzero(choice >= 0):
            node = (int(q), phase, clock)
            if settle(int(q), phase, clock) != (phase, clock):
                continue
            graph.add_node(node, label=int(choice[q]))
            for p in sorted(model.control_post(int(q), int(choice[q]))):
                graph.add_edge(node, (p, *settle(p, phase, clock + 1)))
    graph.add_node(start)
    reachable = nx.descendants(graph, start) | {start}
    pruned = graph.subgraph(reachable).copy()
    moves = {}
    for q, phase, clock in reachable:
        if phase < count:
            moves[(state_key(model, q), phase, clock)] = pruned.nodes[(q, phase, clock)]['label']
    keyed = nx.relabel_nodes(pruned, {node: (state_key(model, node[0]), node[1], node[2]) for node in pruned})
    logger.info("Strategy covers %d product states.", len(moves))
    return Strategy(moves=moves, controls=list(model.control_labels), spec=spec, epsilon=epsilon, margin=margin,
                    initial=(state_key(model, start[0]), start[1], start[2]), meta=dict(model.meta), graph=keyed)


@dataclass
class PlayoutReport:
    plays: int
    violations: int
    witness: Dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def model_playout(model: FiniteATS, strategy: Strategy, max_plays: int = 10_000) -> PlayoutReport:
    """
    Plays the strategy on the model against an exhaustive adversary that picks every disturbance
    label and every successor. The model may differ from the one the strategy was synthesized on;
    states are matched by their canonical keys. Reports the number of complete plays (capped at
    max_plays) and the product states where the phase objectives fail.
    """
    eroded = strategy.spec.eroded(strategy.margin)
    count = len(eroded.phases)
    endpoints = [state_endpoint(model, q) for q in range(model.num_states)]
    report = PlayoutReport(plays=0, violations=0)
    memo: Dict[Tuple[int, int, int], Tuple[bool, int]] = {}
    failures = set()

    def fail(node, reason):
        failures.add(node)
        if not report.witness:
            report.witness = {'state': list(state_key(model, node[0])), 'phase': node[1], 'clock': node[2],
                              'reason': reason}
        return False, 1

    def visit(node):
        if node in memo:
            return memo[node]
        q, phase, clock = node
        if phase == count:
            result = (True, 1)
        elif not eroded.invariant.contains(endpoints[q]):
            result = fail(node, 'invariant')
        elif q in model.frontier:
            result = fail(node, 'frontier')
        elif eroded.phases[phase].mode == 'reach' and clock >= eroded.phases[phase].steps:
            result = fail(node, 'deadline')
        elif eroded.phases[phase].mode == 'stay' and not eroded.phases[phase].target.contains(endpoints[q]):
            result = fail(node, 'left target')
        else:
            try:
                label = strategy.controls[strategy.control_index(state_key(model, q), phase, clock)]
            except StrategyHole:
                result = fail(node, 'strategy hole')
            else:
                a = model.control_labels.index(label) if label in model.control_labels else None
                targets = [] if a is None else sorted(model.control_post(q, a))
                if not targets or len(model.disturbance_posts(q, a)) < len(model.disturbance_labels):
                    result = fail(node, 'blocked')
                else:
                    ok, plays = True, 0
                    for p in targets:
                        hits = lambda i, p=p: eroded.phases[i].target.contains(endpoints[p])
                        child_ok, child_plays = visit((p, *_settle(eroded.phases, hits, phase, clock + 1)))
                        ok = ok and child_ok
                        plays = min(plays + child_plays, max_plays)
                    result = (ok, plays)
        memo[node] = result
        return result

    start = model.initial
    hits = lambda i: eroded.phases[i].target.contains(endpoints[start])
    ok, plays = visit((start, *_settle(eroded.phases, hits, 0, 0)))
    report.plays = plays
    report.violations = len(failures)
    logger.info("Model playout: %d plays, %d violating product states.", report.plays, report.violations)
    return report


_ROW = re.compile(r'^\((?P<state>[-\d,\s]*)\)\s+--(?P<control>[-\d,\s]+)-->\s+\[phase (?P<phase>\d+), clock (?P<clock>\d+)\]$')


@dataclass
class StrategyTable:
    """
    Text form of a strategy: header values then one row per product state with the state
    coefficients as multiples of theta_X and the label as multiples of lambda_U.
    """
    header: Dict[str, float]
    rows: List[Tuple[Tuple[int, ...], Tuple[int, ...], int, int]]

    def to_text(self) -> str:
        lines = [f"# {key} = {value!r}" for key, value in self.header.items()]
        for state, control, phase, clock in self.rows:
            lines.append(f"({','.join(map(str, state))}) --{','.join(map(str, control))}--> "
                         f"[phase {phase}, clock {clock}]")
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_text(cls, text: str) -> 'StrategyTable':
        header, rows = {}, []
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith('#'):
                key, _, value = line[1:].partition('=')
                header[key.strip()] = float(value)
                continue
            match = _ROW.match(line)
            if match is None:
                raise ValueError(f"Line {number}: malformed strategy row '{line}'.")
            state = tuple(int(v) for v in match['state'].split(',') if v.strip())
            control = tuple(int(v) for v in match['control'].split(','))
            rows.append((state, control, int(match['phase']), int(match['clock'])))
        return cls(header, rows)


def strategy_export(strategy: Strategy) -> StrategyTable:
    """Tabulates the strategy; symbolic keys are written as multiples of theta_X."""
    theta_x = strategy.meta.get('theta_X')
    lambda_u = strategy.meta.get('lambda_U')
    scale = 2 if theta_x is not None else 1
    header = {'epsilon': float(strategy.epsilon), 'margin': float(strategy.margin), 'state_scale': float(scale)}
    for key in ('theta_X', 'lambda_U', 'tau', 'N_X', 'n', 'm', 'b_x', 'delta_max'):
        if key in strategy.meta:
            header[key] = float(strategy.meta[key])
    rows = []
    for (key, phase, clock), a in sorted(strategy.moves.items()):
        value = strategy.controls[a]
        if lambda_u is not None and isinstance(value, ControlSegment):
            control = tuple(int(round(v / lambda_u)) for v in value.value)
        else:
            control = (int(a),)
        rows.append((tuple(scale * k for k in key), control, phase, clock))
    return StrategyTable(header, rows)


def strategy_from_table(table: StrategyTable, spec: PhaseSpec) -> Strategy:
    """Rebuilds an executable strategy from its table."""
    header = table.header
    scale = int(header.get('state_scale', 1))
    lambda_u = header.get('lambda_U')
    controls: List[ControlSegment] = []
    index: Dict[Tuple[int, ...], int] = {}
    moves = {}
    for state, control, phase, clock in table.rows:
        if control not in index:
            index[control] = len(controls)
            value = tuple(v * lambda_u for v in control) if lambda_u is not None else control
            controls.append(ControlSegment(tuple(float(v) for v in value)))
        moves[(tuple(k // scale for k in state), phase, clock)] = index[control]
    meta = {key: value for key, value in header.items() if key not in ('epsilon', 'margin', 'state_scale')}
    for key in ('N_X', 'n', 'm'):
        if key in meta:
            meta[key] = int(meta[key])
    return Strategy(moves=moves, controls=controls, spec=spec, epsilon=header.get('epsilon', 0.0),
                    margin=header.get('margin', header.get('epsilon', 0.0)), meta=meta)


@dataclass
class PhaseVerdict:
    index: int
    mode: str
    passed: bool
    entered_at: Optional[float] = None
    completed_at: Optional[float] = None
    failed_at: Optional[float] = None


@dataclass
class ClosedLoopVerdict:
    phases: List[PhaseVerdict]
    invariant_held: bool
    invariant_failed_at: Optional[float]
    issue_times: List[float]
    delay: str = ''

    @property
    def passed(self) -> bool:
        return self.invariant_held and all(phase.passed for phase in self.phases)


@dataclass
class _Sample:
    time: float
    value: np.ndarray
    start: int
    phase: int
    clock: int


def _shifted(delay: DelayRealization, offset: float) -> DelayRealization:
    return DelayRealization(lambda t: delay.evaluate(offset + np.asarray(t, dtype=float)), delay.slope_bound,
                            delay.description)


def execute_closed_loop(sys: SystemDef, strategy: Strategy, delay: DelayRealization, xi0: HistorySegment,
                        steps: Optional[int] = None, h_int: Optional[float] = None
                        ) -> Tuple[Trajectory, ClosedLoopVerdict]:
    """
    Runs the strategy on the concrete system. At each sampling instant the history is projected to
    the nearest lattice state, the phase automaton advances on that state's endpoint, the label is
    looked up and one period is integrated under the delay realization. Labels are issued r time
    units before their effective window. The verdict checks the concrete sampled values against the
    uneroded regions.

    Raises:
        StrategyHole: If the strategy has no entry for a visited product state.
    """
    meta = strategy.meta
    tau, theta_x, n = float(meta['tau']), float(meta['theta_X']), int(meta['n'])
    grid = KnotGrid(-sys.delta_max, 0.0, int(meta['N_X']))
    bound = float(meta.get('b_x', np.inf))
    eroded = strategy.spec.eroded(strategy.margin)
    count = len(eroded.phases)
    steps = strategy.spec.total_steps if steps is None else steps
    window = xi0
    phase, clock = 0, 0
    samples: List[_Sample] = []
    pieces, controls, windows, issue_times = [], [], [xi0], []
    for k in range(steps + 1):
        indices = SymbolicState.from_profile(project(window, grid, theta_x, (-bound, bound)), theta_x).indices
        endpoint = SymbolicState(indices).endpoint(theta_x, n)
        start = phase
        phase, clock = _settle(eroded.phases, lambda i: eroded.phases[i].target.contains(endpoint), phase, clock)
        samples.append(_Sample(k * tau, np.atleast_1d(window.evaluate(0.0)), start, phase, clock))
        if phase == count or k == steps:
            break
        control = strategy.control_for(indices, phase, clock)
        issue_times.append(k * tau - sys.r)
        piece = simulate(sys, window, [control], _shifted(delay, k * tau), 1, tau, h_int)
        pieces.append((k, phase, piece))
        controls.append(control)
        window = piece.windows[-1]
        windows.append(window)
        clock += 1

    trajectory = _stitch(sys, xi0, pieces, tau, delay)
    trajectory.windows = windows
    trajectory.controls = controls
    verdict = _judge(strategy.spec, samples, count)
    verdict.issue_times = issue_times
    verdict.delay = delay.description
    logger.info("Closed loop: %s after %d periods.", 'PASS' if verdict.passed else 'FAIL', len(controls))
    return trajectory, verdict


def _stitch(sys: SystemDef, xi0: HistorySegment, pieces, tau: float, delay: DelayRealization) -> Trajectory:
    times = [np.zeros(1)]
    states = [xi0.values[-1:]]
    inputs = [np.zeros((1, sys.m))]
    delays = [np.atleast_1d(np.asarray(delay.evaluate(0.0), dtype=float))]
    phases = [np.zeros(1)]
    for k, phase, piece in pieces:
        times.append(piece.times[1:] + k * tau)
        states.append(piece.states[1:])
        inputs.append(piece.inputs[1:])
        delays.append(piece.delays[1:])
        phases.append(np.full(len(piece.times) - 1, float(phase)))
    if pieces:
        inputs[0] = pieces[0][2].inputs[:1]
        phases[0] = np.full(1, float(pieces[0][1]))
    return Trajectory(tau=tau, times=np.concatenate(times), states=np.concatenate(states),
                      inputs=np.concatenate(inputs), delays=np.concatenate(delays), phases=np.concatenate(phases))


def _judge(spec: PhaseSpec, samples: List[_Sample], count: int) -> ClosedLoopVerdict:
    invariant_failed_at = next((s.time for s in samples if s.start < count and not spec.invariant.contains(s.value)),
                               None)
    verdicts = []
    for index, phase in enumerate(spec.phases):
        inside = [s for s in samples if s.start <= index <= s.phase]
        done = next((s for s in samples if s.phase > index), None)
        verdict = PhaseVerdict(index=index, mode=phase.mode, passed=False,
                               entered_at=inside[0].time if inside else None,
                               completed_at=done.time if done else None)
        if phase.mode == 'reach':
            good = done is not None and phase.target.contains(done.value)
            if done is not None and not good:
                verdict.failed_at = done.time
        else:
            outside = next((s for s in inside if not phase.target.contains(s.value)), None)
            good = done is not None and outside is None
            if outside is not None:
                verdict.failed_at = outside.time
        if done is None and verdict.failed_at is None and samples:
            verdict.failed_at = samples[-1].time
        verdict.passed = good
        verdicts.append(verdict)
    return ClosedLoopVerdict(phases=verdicts, invariant_held=invariant_failed_at is None,
                             invariant_failed_at=invariant_failed_at, issue_times=[])
