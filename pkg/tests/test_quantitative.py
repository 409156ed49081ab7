from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etctraffic.abstraction import build_traffic_model
from etctraffic.quantitative import (MAX, MIN, MeanPayoffGame, StrategyCoverageError,
                                     WeightedGraph, _howard, _karp, canonical_rotation,
                                     closed_loop_saist_check, critical_cycles, format_report,
                                     mean_payoff_strategy, min_cycle_mean, min_mean_cycles, saist,
                                     solve_mean_payoff)
from etctraffic.systems import MalformedModelError, TrafficModel

import oracles


def as_graph(n, edges):
    return WeightedGraph(list(range(n)), edges)


@st.composite
def graphs(draw, max_nodes=7):
    return oracles.random_graph(oracles.seeded(draw(st.integers(0, 10**6))), max_nodes)


def test_two_region_saist(two_region):
    # Natural transitions only: self-loops of weight 2 and 3, plus 2 -> 3.
    assert saist(two_region) == 2
    value, cycles = min_mean_cycles(two_region)
    assert value == 2 and cycles == {((2,), ((2,),))}


def test_saist_two_cycle():
    m = TrafficModel([(1,), (4,)], [((1,), 1, (4,)), ((4,), 4, (1,)), ((4,), 4, (4,))], kmax=4)
    value, cycles = min_mean_cycles(m)
    assert value == Fraction(5, 2)
    assert {c[0] for c in cycles} == {(4, 1)}


@settings(max_examples=80, deadline=None)
@given(graphs())
def test_min_cycle_mean_matches_enumeration(g):
    n, edges = g
    assert min_cycle_mean(as_graph(n, edges)) == oracles.brute_min_cycle_mean(n, edges)


@settings(max_examples=40, deadline=None)
@given(graphs())
def test_howard_matches_karp_on_strong_graphs(g):
    n, edges = g
    # A Hamiltonian ring makes the graph strongly connected.
    edges = edges + [(i, (i + 1) % n, 9) for i in range(n)]
    src, dst, w = (np.array(c, dtype=np.int64) for c in zip(*edges))
    assert _howard(n, src, dst, w) == _karp(n, src, dst, w)


@settings(max_examples=60, deadline=None)
@given(graphs(max_nodes=6))
def test_critical_cycles_match_enumeration(g):
    n, edges = g
    value, expected = oracles.brute_min_mean_cycles(n, edges)
    got = {tuple(ws) for _, ws in critical_cycles(as_graph(n, edges), value)}
    assert {canonical_rotation(w) for w in got} == {canonical_rotation(w) for w in expected}


@settings(max_examples=60, deadline=None)
@given(graphs())
def test_shift_invariance(g):
    n, edges = g
    shifted = [(u, v, w + 3) for u, v, w in edges]
    assert min_cycle_mean(as_graph(n, shifted)) == min_cycle_mean(as_graph(n, edges)) + 3


def test_acyclic_graph_rejected():
    with pytest.raises(MalformedModelError):
        WeightedGraph([0, 1], [(0, 1, 1)])


def test_canonical_rotation():
    assert canonical_rotation((1, 1, 2, 8, 1, 1)) == (8, 1, 1, 1, 1, 2)
    assert canonical_rotation((3,)) == (3,)


def test_game_simple_choice():
    owner = {"a": MAX, "b": MIN, "c": MIN}
    edges = [("a", "b", 1), ("a", "c", 4), ("b", "a", 0), ("c", "a", 0), ("c", "c", 1)]
    values, strategy, counter = solve_mean_payoff(MeanPayoffGame(owner, edges))
    # From c the minimizer can stay on the weight-1 loop forever.
    assert values["c"] == 1
    assert values["a"] == Fraction(1, 1)
    assert counter["c"] == ("c", "c", 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_game_matches_exhaustive_search(seed):
    game = oracles.random_game(oracles.seeded(seed), max_ctrl=4, max_adv=3)
    values, strategy, _ = solve_mean_payoff(game)
    assert values == oracles.brute_game_values(game)
    assert all(game.owner[v] == MAX for v in strategy)


def test_game_requires_integer_weights():
    owner = {"a": MAX}
    with pytest.raises(MalformedModelError):
        solve_mean_payoff(MeanPayoffGame(owner, [("a", "a", 0.5)]))


def test_game_requires_total_arena():
    with pytest.raises(MalformedModelError):
        MeanPayoffGame({"a": MAX, "b": MIN}, [("a", "b", 1)])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_traffic_strategy_matches_exhaustive_search(seed):
    rng = oracles.seeded(seed)
    model = oracles.random_traffic_model(rng, rng.randint(1, 4), rng.randint(1, 4))
    value, strategy = mean_payoff_strategy(model)
    assert value == oracles.brute_traffic_value(model)
    assert all(1 <= strategy[x] <= x[0] for x in model.states)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_array_arena_agrees_with_object_arena(seed):
    rng = oracles.seeded(seed)
    model = oracles.random_traffic_model(rng, rng.randint(1, 5), rng.randint(1, 5))
    values, _, _ = solve_mean_payoff(MeanPayoffGame.from_traffic_model(model))
    value, _ = mean_payoff_strategy(model)
    assert value == 2 * min(values[("R", x)] for x in model.states)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_optimized_value_dominates_saist(seed):
    rng = oracles.seeded(seed)
    model = oracles.random_traffic_model(rng, rng.randint(1, 5), rng.randint(1, 5))
    value, _ = mean_payoff_strategy(model)
    # Waiting for the natural trigger is one admissible strategy.
    assert value >= saist(model)


def test_closed_loop_check_bounds_game_value(loop_b):
    model = build_traffic_model(loop_b, 2, etc_only=False)
    value, strategy = mean_payoff_strategy(model)
    emp = closed_loop_saist_check(loop_b, strategy, trials=100, horizon=200, burn_in=40, seed=1)
    assert emp >= value
    assert value >= saist(model)


def test_closed_loop_check_reports_gaps(loop_b):
    with pytest.raises(StrategyCoverageError):
        closed_loop_saist_check(loop_b, {(loop_b.kmax,): 1}, trials=50, horizon=3)


def test_format_report():
    text = format_report(Fraction(7, 3), {((8, 1, 1, 1, 1, 2), ())}, Fraction(5))
    assert text.splitlines() == ["SAIST is 2.3333333333333335",
                                 "Smallest average cycles: {(8, 1, 1, 1, 1, 2)}",
                                 "Optimized SAIST is 5.0"]
