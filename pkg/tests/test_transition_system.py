from functools import lru_cache

import numpy as np
import pytest

from transition_system import (FiniteATS, Relation, compose, absolute_distance, sup_distance, max_approx_sim,
                               max_alt_approx_sim, max_alt_approx_bisim, check_alt_bisim, check_approx_bisim,
                               is_alt_simulated, is_simulated, is_alt_simulation, is_simulation)


def random_ats(rng, states=None, controls=None, disturbances=None, total=False, outputs=3):
    states = states or int(rng.integers(1, 7))
    controls = controls or int(rng.integers(1, 4))
    disturbances = disturbances or int(rng.integers(1, 4))
    ats = FiniteATS(list(range(controls)), list(range(disturbances)))
    for _ in range(states):
        ats.add_state(float(rng.integers(0, outputs)))
    for q in range(states):
        for a in range(controls):
            for b in range(disturbances):
                if not total and rng.random() < 0.2:
                    continue
                for p in rng.choice(states, size=int(rng.integers(1, 3)), replace=True):
                    ats.add_transition(q, a, b, int(p))
    ats.set_initial(0)
    return ats


def naive_alt_sim(t1, t2, epsilon):
    """Kleene iteration written directly against the raw transition tables."""
    def post(t, q, a):
        found = set()
        for b in range(len(t.disturbance_labels)):
            found |= set(t.transitions.get((q, a, b), ()))
        return found

    def enabled(t, q):
        return [a for a in range(len(t.control_labels)) if post(t, q, a)]

    relation = {(q1, q2) for q1 in range(t1.num_states) for q2 in range(t2.num_states)
                if abs(t1.outputs[q1] - t2.outputs[q2]) <= epsilon}
    while True:
        keep = set()
        for q1, q2 in relation:
            if all(any(all(any((p1, p2) in relation for p1 in post(t1, q1, a1)) for p2 in post(t2, q2, a2))
                       for a2 in enabled(t2, q2))
                   for a1 in enabled(t1, q1)):
                keep.add((q1, q2))
        if keep == relation:
            return relation
        relation = keep


def game_tree_alt_sim(t1, t2, epsilon):
    """
    Plays the alternating game from the initial pair for |Q1| * |Q2| rounds. A round is four moves:
    the spoiler picks a1, the duplicator answers a2, the spoiler picks p2 in S2(q2, a2) and the
    duplicator picks p1 in S1(q1, a1). The spoiler wins on a pair with distant outputs or when the
    duplicator has no move left.
    """
    def post(t, q, a):
        return sorted({p for b in range(len(t.disturbance_labels)) for p in t.transitions.get((q, a, b), ())})

    def moves(t, q):
        return [a for a in range(len(t.control_labels)) if post(t, q, a)]

    @lru_cache(maxsize=None)
    def duplicator_survives(q1, q2, rounds):
        if abs(t1.outputs[q1] - t2.outputs[q2]) > epsilon:
            return False
        return rounds == 0 or all(answer_exists(q1, q2, a1, rounds) for a1 in moves(t1, q1))

    def answer_exists(q1, q2, a1, rounds):
        return any(all(any(duplicator_survives(p1, p2, rounds - 1) for p1 in post(t1, q1, a1))
                       for p2 in post(t2, q2, a2))
                   for a2 in moves(t2, q2))

    return duplicator_survives(t1.initial, t2.initial, t1.num_states * t2.num_states)


def shifted(ats, offset):
    copy = FiniteATS(ats.control_labels, ats.disturbance_labels)
    for output in ats.outputs:
        copy.add_state(output + offset)
    for (q, a, b), targets in ats.transitions.items():
        for p in targets:
            copy.add_transition(q, a, b, p)
    copy.set_initial(ats.initial)
    return copy


def test_builder_rejects_unknown_states_and_labels():
    ats = FiniteATS(['a'], ['b'])
    ats.add_state(0.0)
    with pytest.raises(ValueError):
        ats.add_transition(0, 0, 0, 1)
    with pytest.raises(ValueError):
        ats.add_transition(0, 1, 0, 0)
    with pytest.raises(ValueError):
        ats.set_initial(3)


def test_post_queries():
    ats = FiniteATS([0, 1], [0, 1])
    for value in (0.0, 1.0, 2.0):
        ats.add_state(value)
    ats.add_transition(0, 0, 0, 1)
    ats.add_transition(0, 0, 1, 2)
    ats.add_transition(0, 1, 1, 0)
    assert ats.post(0, 0, 1) == {2}
    assert ats.control_post(0, 0) == {1, 2}
    assert ats.enabled(0) == [0, 1]
    assert ats.enabled(1) == []
    assert len(ats.disturbance_posts(0, 1)) == 1
    assert ats.successors(0) == {0, 1, 2}
    assert ats.predecessors()[2] == {0}
    assert not ats.is_total()


def test_text_form_restores_the_system():
    ats = random_ats(np.random.default_rng(1), states=4, controls=2, disturbances=2)
    ats.frontier = {3}
    parsed = FiniteATS.from_text(ats.to_text())
    assert parsed.to_text() == ats.to_text()
    assert parsed.frontier == {3}
    with pytest.raises(ValueError):
        FiniteATS.from_text("initial 0\n")


def test_alternating_simulation_matches_naive_iteration():
    rng = np.random.default_rng(42)
    for _ in range(100):
        t1, t2 = random_ats(rng), random_ats(rng)
        epsilon = float(rng.integers(0, 2))
        assert set(max_alt_approx_sim(t1, t2, epsilon).pairs) == naive_alt_sim(t1, t2, epsilon)


def test_alternating_simulation_agrees_with_the_game_tree():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        t1, t2 = random_ats(rng), random_ats(rng)
        epsilon = float(rng.integers(0, 2))
        assert is_alt_simulated(t1, t2, epsilon) == game_tree_alt_sim(t1, t2, epsilon)


def test_schedules_reach_the_same_relation():
    rng = np.random.default_rng(7)
    for _ in range(30):
        t1, t2 = random_ats(rng), random_ats(rng)
        fifo = max_alt_approx_sim(t1, t2, 1.0)
        assert max_alt_approx_sim(t1, t2, 1.0, schedule='lifo') == fifo
        assert max_alt_approx_sim(t1, t2, 1.0, seed=3) == fifo
        assert max_approx_sim(t1, t2, 1.0, schedule='lifo') == max_approx_sim(t1, t2, 1.0)


def test_relations_grow_with_the_precision():
    rng = np.random.default_rng(9)
    for _ in range(30):
        t1, t2 = random_ats(rng), random_ats(rng)
        assert max_alt_approx_sim(t1, t2, 0.0) <= max_alt_approx_sim(t1, t2, 1.0)
        assert max_approx_sim(t1, t2, 1.0) <= max_approx_sim(t1, t2, 2.0)


def test_computed_relations_are_simulations():
    rng = np.random.default_rng(5)
    for _ in range(30):
        t1, t2 = random_ats(rng), random_ats(rng)
        relation = max_alt_approx_sim(t1, t2, 1.0)
        assert is_alt_simulation(t1, t2, relation, 1.0)
        assert all(absolute_distance(t1.outputs[q1], t2.outputs[q2]) <= 1.0 for q1, q2 in relation)
        assert is_simulation(t1, t2, max_approx_sim(t1, t2, 1.0), 1.0)


def test_composition_of_alternating_simulations():
    rng = np.random.default_rng(11)
    for _ in range(40):
        t1, t2, t3 = random_ats(rng), random_ats(rng), random_ats(rng)
        first, second = max_alt_approx_sim(t1, t2, 1.0), max_alt_approx_sim(t2, t3, 1.0)
        assert is_alt_simulation(t1, t3, compose(first, second), 2.0)


def test_identity_bisimulation_and_output_shift():
    rng = np.random.default_rng(3)
    for _ in range(20):
        ats = random_ats(rng)
        holds, relation = check_alt_bisim(ats, ats, 0.0)
        assert holds
        assert {(q, q) for q in range(ats.num_states)} <= set(relation.pairs)
        moved = shifted(ats, 0.3)
        assert not check_alt_bisim(ats, moved, 0.2)[0]
        assert check_alt_bisim(ats, moved, 0.3)[0]
        assert check_approx_bisim(ats, moved, 0.3)[0]


def test_bisimulation_is_symmetric():
    rng = np.random.default_rng(13)
    for _ in range(20):
        t1, t2 = random_ats(rng), random_ats(rng)
        assert max_alt_approx_bisim(t1, t2, 1.0).inverse() == max_alt_approx_bisim(t2, t1, 1.0)


def test_restricted_disturbances_sandwich():
    rng = np.random.default_rng(17)
    for _ in range(20):
        full = random_ats(rng, controls=2, disturbances=3, total=True)
        restricted = FiniteATS(full.control_labels, full.disturbance_labels[:2])
        for output in full.outputs:
            restricted.add_state(output)
        for (q, a, b), targets in full.transitions.items():
            if b < 2:
                for p in targets:
                    restricted.add_transition(q, a, b, p)
        restricted.set_initial(full.initial)
        assert is_alt_simulated(full, restricted, 0.0)
        assert is_simulated(restricted, full, 0.0)


def test_chains_with_offset_outputs():
    long_chain, short_chain = FiniteATS([0], [0]), FiniteATS([0], [0])
    for _ in range(3):
        long_chain.add_state(0.0)
    for _ in range(2):
        short_chain.add_state(0.1)
    for q, p in ((0, 1), (1, 2), (2, 2)):
        long_chain.add_transition(q, 0, 0, p)
    for q, p in ((0, 1), (1, 1)):
        short_chain.add_transition(q, 0, 0, p)
    long_chain.set_initial(0)
    short_chain.set_initial(0)
    assert len(max_approx_sim(long_chain, short_chain, 0.05)) == 0
    assert is_simulated(long_chain, short_chain, 0.1)
    assert is_alt_simulated(long_chain, short_chain, 0.1)


def test_adversary_breaks_plain_but_not_alternating_simulation():
    branching, single = FiniteATS([0], [0, 1]), FiniteATS([0], [0, 1])
    for value in (0.0, 0.0, 5.0):
        branching.add_state(value)
    for value in (0.0, 0.0):
        single.add_state(value)
    branching.add_transition(0, 0, 0, 1)
    branching.add_transition(0, 0, 1, 2)
    branching.add_transition(1, 0, 0, 1)
    branching.add_transition(2, 0, 0, 2)
    single.add_transition(0, 0, 0, 1)
    single.add_transition(1, 0, 0, 1)
    branching.set_initial(0)
    single.set_initial(0)
    assert is_alt_simulated(branching, single, 0.5)
    assert game_tree_alt_sim(branching, single, 0.5)
    assert not is_simulated(branching, single, 0.5)


def test_metrics_must_agree():
    t1, t2 = FiniteATS([0], [0]), FiniteATS([0], [0], metric=sup_distance)
    t1.add_state(0.0)
    t2.add_state(0.0)
    with pytest.raises(ValueError, match="Metric mismatch"):
        max_alt_approx_sim(t1, t2, 1.0)


def test_relation_algebra():
    relation = Relation([(0, 1), (1, 2)])
    assert (0, 1) in relation
    assert relation.inverse() == Relation([(1, 0), (2, 1)])
    assert compose(relation, Relation([(1, 5), (2, 6)])) == Relation([(0, 5), (1, 6)])
    assert relation.to_text() == "0 1\n1 2\n"
