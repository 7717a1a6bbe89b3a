"""
This file contains the class for finite alternating transition systems with metric outputs and the
fixed-point computation of maximal (alternating) approximate simulation and bisimulation relations.

Convention for systems that are not total: a control label is enabled at a state when some
disturbance label yields a successor there. Moves that are not enabled can neither be demanded by
the universal player nor offered by the existential one.
"""
import logging
from collections import defaultdict, deque
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

import numpy as np

from time_delay_system import evaluation_grid

logger = logging.getLogger(__name__)

OUTPUT_TOLERANCE = 1e-12


def absolute_distance(a, b) -> float:
    """Infinity norm of the difference of two numeric outputs."""
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def _knots_of(output):
    return output.knots if hasattr(output, 'knots') else output.grid.knots()


def sup_distance(a, b) -> float:
    """
    Sup metric of function-valued outputs (history segments or spline profiles), sampled on the
    refined union of both knot sets. Numeric arrays fall back to the coefficient infinity norm,
    which equals the sup for first-order splines sharing a grid.
    """
    if hasattr(a, 'evaluate') and hasattr(b, 'evaluate'):
        grid = evaluation_grid([_knots_of(a), _knots_of(b)])
        return float(np.max(np.abs(a.evaluate(grid) - b.evaluate(grid))))
    return absolute_distance(getattr(a, 'coeffs', a), getattr(b, 'coeffs', b))


METRICS: Dict[str, Callable] = {
    'absolute': absolute_distance,
    'sup': sup_distance,
}


class FiniteATS:
    """
    Alternating transition system (Q, q0, A x B, ->, O, H) with integer ids for states and labels
    and side tables holding their payloads.
    """
    def __init__(self, control_labels: List, disturbance_labels: List, metric: Callable = absolute_distance):
        self.control_labels = list(control_labels)
        self.disturbance_labels = list(disturbance_labels)
        self.metric = metric
        self.outputs: List = []
        self.payloads: List = []
        self.initial: Optional[int] = None
        self.transitions: Dict[Tuple[int, int, int], Set[int]] = defaultdict(set)
        self.frontier: Set[int] = set()
        self.meta: Dict = {}
        self._by_state: Dict[int, Dict[int, Set[int]]] = defaultdict(lambda: defaultdict(set))

    @property
    def num_states(self) -> int:
        return len(self.outputs)

    def add_state(self, output, payload=None) -> int:
        self.outputs.append(output)
        self.payloads.append(payload)
        return len(self.outputs) - 1

    def set_initial(self, state: int) -> bool:
        if not 0 <= state < self.num_states:
            raise ValueError(f"Initial state {state} is not a state.")
        self.initial = state
        return True

    def add_transition(self, q: int, a: int, b: int, p: int) -> bool:
        if not (0 <= q < self.num_states and 0 <= p < self.num_states):
            raise ValueError(f"Transition ({q}, {a}, {b}, {p}) leaves the state set.")
        if not (0 <= a < len(self.control_labels) and 0 <= b < len(self.disturbance_labels)):
            raise ValueError(f"Transition ({q}, {a}, {b}, {p}) uses an unknown label.")
        self.transitions[(q, a, b)].add(p)
        self._by_state[q][a].add(p)
        return True

    def post(self, q: int, a: int, b: int) -> FrozenSet[int]:
        return frozenset(self.transitions.get((q, a, b), ()))

    def enabled(self, q: int) -> List[int]:
        """Control labels with at least one successor at q, in increasing order."""
        return sorted(a for a, targets in self._by_state.get(q, {}).items() if targets)

    def control_post(self, q: int, a: int) -> FrozenSet[int]:
        """Union over disturbance labels of Post(q, a, b)."""
        return frozenset(self._by_state.get(q, {}).get(a, ()))

    def disturbance_posts(self, q: int, a: int) -> List[FrozenSet[int]]:
        """Non-empty Post(q, a, b) sets for every disturbance label b."""
        posts = []
        for b in range(len(self.disturbance_labels)):
            targets = self.transitions.get((q, a, b))
            if targets:
                posts.append(frozenset(targets))
        return posts

    def successors(self, q: int) -> FrozenSet[int]:
        result = set()
        for targets in self._by_state.get(q, {}).values():
            result |= targets
        return frozenset(result)

    def predecessors(self) -> Dict[int, Set[int]]:
        result: Dict[int, Set[int]] = defaultdict(set)
        for (q, _, _), targets in self.transitions.items():
            for p in targets:
                result[p].add(q)
        return result

    def is_total(self) -> bool:
        return all(self.transitions.get((q, a, b))
                   for q in range(self.num_states)
                   for a in range(len(self.control_labels))
                   for b in range(len(self.disturbance_labels)))

    def output_distance(self, q: int, other: 'FiniteATS', p: int) -> float:
        return self.metric(self.outputs[q], other.outputs[p])

    def to_text(self) -> str:
        """Header (|Q|, |A|, |B|), metric, initial state, output table and transition list."""
        metric_name = next((name for name, func in METRICS.items() if func is self.metric), 'absolute')
        lines = [f"ats {self.num_states} {len(self.control_labels)} {len(self.disturbance_labels)}",
                 f"metric {metric_name}", f"initial {self.initial}"]
        for q, output in enumerate(self.outputs):
            values = np.ravel(np.asarray(getattr(output, 'coeffs', output), dtype=float))
            lines.append(f"output {q} " + ' '.join(repr(float(v)) for v in values))
        for (q, a, b) in sorted(self.transitions):
            for p in sorted(self.transitions[(q, a, b)]):
                lines.append(f"transition {q} {a} {b} {p}")
        if self.frontier:
            lines.append("frontier " + ' '.join(str(q) for q in sorted(self.frontier)))
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_text(cls, text: str) -> 'FiniteATS':
        """Parses to_text output; outputs come back as numeric arrays and labels as indices."""
        model = None
        for number, line in enumerate(text.splitlines(), start=1):
            fields = line.split()
            if not fields:
                continue
            keyword, args = fields[0], fields[1:]
            if keyword == 'ats':
                states, controls, disturbances = (int(v) for v in args)
                model = cls(list(range(controls)), list(range(disturbances)))
                model.outputs = [None] * states
                model.payloads = [None] * states
            elif model is None:
                raise ValueError(f"Line {number}: expected the 'ats' header first.")
            elif keyword == 'metric':
                if args[0] not in METRICS:
                    raise ValueError(f"Line {number}: unknown metric '{args[0]}'.")
                model.metric = METRICS[args[0]]
            elif keyword == 'initial':
                model.initial = None if args[0] == 'None' else int(args[0])
            elif keyword == 'output':
                model.outputs[int(args[0])] = np.array([float(v) for v in args[1:]])
            elif keyword == 'transition':
                model.add_transition(*(int(v) for v in args))
            elif keyword == 'frontier':
                model.frontier = {int(v) for v in args}
            else:
                raise ValueError(f"Line {number}: unknown keyword '{keyword}'.")
        if model is None:
            raise ValueError("Empty model text.")
        return model


class Relation:
    """Set of state pairs (q1, q2) across two systems."""
    def __init__(self, pairs: Iterable[Tuple[int, int]] = ()):
        self.pairs: FrozenSet[Tuple[int, int]] = frozenset(pairs)

    def __contains__(self, pair) -> bool:
        return pair in self.pairs

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(sorted(self.pairs))

    def __eq__(self, other) -> bool:
        return isinstance(other, Relation) and self.pairs == other.pairs

    def __le__(self, other: 'Relation') -> bool:
        return self.pairs <= other.pairs

    def __hash__(self):
        return hash(self.pairs)

    def inverse(self) -> 'Relation':
        return Relation((q2, q1) for q1, q2 in self.pairs)

    def to_text(self) -> str:
        return ''.join(f"{q1} {q2}\n" for q1, q2 in self)


def compose(first: Relation, second: Relation) -> Relation:
    """{(q1, q3) : (q1, q2) in first and (q2, q3) in second for some q2}"""
    by_middle: Dict[int, List[int]] = defaultdict(list)
    for q2, q3 in second.pairs:
        by_middle[q2].append(q3)
    return Relation((q1, q3) for q1, q2 in first.pairs for q3 in by_middle.get(q2, ()))


def _check_metrics(t1: FiniteATS, t2: FiniteATS) -> None:
    if t1.metric is not t2.metric:
        raise ValueError("Metric mismatch: both systems must share the output metric.")


def _close_pairs(t1: FiniteATS, t2: FiniteATS, epsilon: float) -> Set[Tuple[int, int]]:
    return {(q1, q2) for q1 in range(t1.num_states) for q2 in range(t2.num_states)
            if t1.output_distance(q1, t2, q2) <= epsilon + OUTPUT_TOLERANCE}


def _plain_holds(t1: FiniteATS, t2: FiniteATS, q1: int, q2: int, related: Callable) -> bool:
    """Every successor of q1 is matched by some successor of q2."""
    targets = t2.successors(q2)
    return all(any(related(p1, p2) for p2 in targets) for p1 in t1.successors(q1))


def _alternating_holds(t1: FiniteATS, t2: FiniteATS, q1: int, q2: int, related: Callable) -> bool:
    """For all a1 exists a2 such that for all p2 in S2(q2, a2) exists p1 in S1(q1, a1) related."""
    options = [t2.control_post(q2, a2) for a2 in t2.enabled(q2)]
    for a1 in t1.enabled(q1):
        answers = t1.control_post(q1, a1)
        if not any(all(any(related(p1, p2) for p1 in answers) for p2 in targets) for targets in options):
            return False
    return True


def _greatest_fixed_point(candidates: Set[Tuple[int, int]], holds: Callable,
                          predecessors: Tuple[Dict, Dict], schedule: str = 'fifo',
                          seed: Optional[int] = None) -> Relation:
    """
    Deletes pairs violating `holds` until none does. After a deletion only pairs whose states are
    predecessors of the deleted pair are re-examined.
    """
    relation = set(candidates)
    order = sorted(relation)
    if seed is not None:
        np.random.default_rng(seed).shuffle(order)
    worklist = deque(order)
    queued = set(order)
    pre1, pre2 = predecessors
    related = lambda p1, p2: (p1, p2) in relation
    removed = 0
    while worklist:
        pair = worklist.pop() if schedule == 'lifo' else worklist.popleft()
        queued.discard(pair)
        if pair not in relation or holds(pair[0], pair[1], related):
            continue
        relation.discard(pair)
        removed += 1
        for r1 in pre1.get(pair[0], ()):
            for r2 in pre2.get(pair[1], ()):
                if (r1, r2) in relation and (r1, r2) not in queued:
                    queued.add((r1, r2))
                    worklist.append((r1, r2))
    logger.debug("Fixed point removed %d of %d candidate pairs.", removed, len(candidates))
    return Relation(relation)


def max_approx_sim(t1: FiniteATS, t2: FiniteATS, epsilon: float, schedule: str = 'fifo',
                   seed: Optional[int] = None) -> Relation:
    """Maximal epsilon-approximate simulation relation from t1 to t2."""
    _check_metrics(t1, t2)
    holds = lambda q1, q2, related: _plain_holds(t1, t2, q1, q2, related)
    return _greatest_fixed_point(_close_pairs(t1, t2, epsilon), holds,
                                 (t1.predecessors(), t2.predecessors()), schedule, seed)


def max_alt_approx_sim(t1: FiniteATS, t2: FiniteATS, epsilon: float, schedule: str = 'fifo',
                       seed: Optional[int] = None) -> Relation:
    """Maximal alternating epsilon-approximate simulation relation from t1 to t2."""
    _check_metrics(t1, t2)
    holds = lambda q1, q2, related: _alternating_holds(t1, t2, q1, q2, related)
    return _greatest_fixed_point(_close_pairs(t1, t2, epsilon), holds,
                                 (t1.predecessors(), t2.predecessors()), schedule, seed)


def _bisimulation(t1, t2, epsilon, condition, schedule, seed) -> Relation:
    _check_metrics(t1, t2)

    def holds(q1, q2, related):
        backwards = lambda p2, p1: related(p1, p2)
        return condition(t1, t2, q1, q2, related) and condition(t2, t1, q2, q1, backwards)

    return _greatest_fixed_point(_close_pairs(t1, t2, epsilon), holds,
                                 (t1.predecessors(), t2.predecessors()), schedule, seed)


def max_alt_approx_bisim(t1: FiniteATS, t2: FiniteATS, epsilon: float, schedule: str = 'fifo',
                         seed: Optional[int] = None) -> Relation:
    """Maximal R with R and its inverse both alternating epsilon-approximate simulations."""
    return _bisimulation(t1, t2, epsilon, _alternating_holds, schedule, seed)


def max_approx_bisim(t1: FiniteATS, t2: FiniteATS, epsilon: float, schedule: str = 'fifo',
                     seed: Optional[int] = None) -> Relation:
    """Maximal epsilon-approximate bisimulation relation."""
    return _bisimulation(t1, t2, epsilon, _plain_holds, schedule, seed)


def check_alt_bisim(t1: FiniteATS, t2: FiniteATS, epsilon: float) -> Tuple[bool, Relation]:
    relation = max_alt_approx_bisim(t1, t2, epsilon)
    return (t1.initial, t2.initial) in relation, relation


def check_approx_bisim(t1: FiniteATS, t2: FiniteATS, epsilon: float) -> Tuple[bool, Relation]:
    relation = max_approx_bisim(t1, t2, epsilon)
    return (t1.initial, t2.initial) in relation, relation


def is_alt_simulated(t1: FiniteATS, t2: FiniteATS, epsilon: float) -> bool:
    """t1 is alternatingly epsilon-simulated by t2 from the initial pair"""
    return (t1.initial, t2.initial) in max_alt_approx_sim(t1, t2, epsilon)


def is_simulated(t1: FiniteATS, t2: FiniteATS, epsilon: float) -> bool:
    return (t1.initial, t2.initial) in max_approx_sim(t1, t2, epsilon)


def _verify(t1, t2, relation: Relation, epsilon: float, condition) -> bool:
    _check_metrics(t1, t2)
    related = lambda p1, p2: (p1, p2) in relation
    return all(t1.output_distance(q1, t2, q2) <= epsilon + OUTPUT_TOLERANCE
               and condition(t1, t2, q1, q2, related) for q1, q2 in relation.pairs)


def is_alt_simulation(t1: FiniteATS, t2: FiniteATS, relation: Relation, epsilon: float) -> bool:
    """Checks that a given relation is an alternating epsilon-approximate simulation from t1 to t2."""
    return _verify(t1, t2, relation, epsilon, _alternating_holds)


def is_simulation(t1: FiniteATS, t2: FiniteATS, relation: Relation, epsilon: float) -> bool:
    return _verify(t1, t2, relation, epsilon, _plain_holds)
