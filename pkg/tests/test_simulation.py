import numpy as np
import pytest

from etctraffic.abstraction import build_traffic_model, inter_sample_k, region_of
from etctraffic.games import extract_scheduler, safety_fixpoint
from etctraffic.linalg import ParameterError
from etctraffic.simulation import SimConfig, collision_report, random_unit_states, simulate
from etctraffic.systems import ProductSystem, WaitTriggerSystem

from conftest import PLANT_A, PLANT_B, relative_loop


@pytest.fixture(scope="module")
def scheduler(loop_a, loop_b):
    systems = [WaitTriggerSystem(build_traffic_model(lp, 1, etc_only=False)) for lp in (loop_a, loop_b)]
    return extract_scheduler(safety_fixpoint(ProductSystem(systems)))


@pytest.fixture(scope="module")
def scheduled_trace(loop_a, loop_b, scheduler):
    return simulate(SimConfig([loop_a, loop_b], [[1, 1], [1, -1]], 500, scheduler=scheduler))


@pytest.fixture(scope="module")
def free_trace(loop_a, loop_b):
    return simulate(SimConfig([loop_a, loop_b], [[1, 1], [1, -1]], 500))


def test_kmax_one_triggers_every_step():
    loop = relative_loop(PLANT_A, 1)
    trace = simulate(SimConfig([loop], [[1.0, 0.0]], 50))
    assert trace.trigger[1:, 0].all()
    assert collision_report(trace) == []


def test_single_loop_never_collides(loop_b):
    trace = simulate(SimConfig([loop_b], [[0.3, -2.0]], 300))
    assert collision_report(trace) == []


def test_unscheduled_times_match_oracle(free_trace, loop_a, loop_b):
    for i, loop in enumerate((loop_a, loop_b)):
        steps = np.flatnonzero(free_trace.trigger[:, i])
        prev = 0
        for s in steps:
            assert s - prev == inter_sample_k(free_trace.held[i][prev], loop)
            prev = s


def test_exact_hold_map_at_triggers(free_trace, loop_a, loop_b):
    for i, loop in enumerate((loop_a, loop_b)):
        steps = np.concatenate([[0], np.flatnonzero(free_trace.trigger[:, i])])
        for a, b in zip(steps, steps[1:]):
            expected = loop.M[b - a - 1] @ free_trace.held[i][a]
            got = free_trace.states[i][b]
            assert np.linalg.norm(got - expected) <= 1e-10 * max(1.0, np.linalg.norm(expected))


def test_collision_flag_definition(free_trace):
    assert np.array_equal(free_trace.collision, free_trace.trigger.sum(axis=1) >= 2)
    assert [s for s, _ in collision_report(free_trace)] == np.flatnonzero(free_trace.collision).tolist()


def test_held_changes_only_at_triggers(free_trace):
    for i, held in enumerate(free_trace.held):
        changed = np.any(held[1:] != held[:-1], axis=1)
        assert not (changed & ~free_trace.trigger[1:, i]).any()


def test_unscheduled_baseline_collides(free_trace):
    report = collision_report(free_trace)
    assert report and report[0][0] * free_trace.h < 1.2


def test_scheduled_run_is_collision_free(scheduled_trace):
    assert collision_report(scheduled_trace) == []
    for x in scheduled_trace.states:
        assert np.linalg.norm(x[-1]) < np.linalg.norm(x[0])


def test_scheduled_triggers_are_early_only(scheduled_trace, loop_a, loop_b):
    for i, loop in enumerate((loop_a, loop_b)):
        steps = np.concatenate([[0], np.flatnonzero(scheduled_trace.trigger[:, i])])
        for a, b in zip(steps, steps[1:]):
            natural = inter_sample_k(scheduled_trace.held[i][a], loop)
            assert b - a <= natural
            assert scheduled_trace.early[b, i] == (b - a < natural)


def test_region_tracking_follows_model(scheduled_trace, scheduler, loop_a, loop_b):
    for i, loop in enumerate((loop_a, loop_b)):
        model = scheduler.components[i].model
        regions = scheduled_trace.regions[i]
        for (s0, r0), (s1, r1) in zip(regions, regions[1:]):
            assert (r0, s1 - s0, r1) in model.edges
            assert r1 == region_of(scheduled_trace.held[i][s1], loop, model.depth)


def test_csv_layout(loop_a, loop_b):
    trace = simulate(SimConfig([loop_a, loop_b], [[1, 1], [1, -1]], 5))
    lines = trace.to_csv().splitlines()
    assert lines[0] == ("t,x11,x12,x1hat1,x1hat2,x21,x22,x2hat1,x2hat2,"
                        "trigger1,trigger2,early1,early2,collision")
    assert len(lines) == 7
    assert lines[1].startswith("0,1,1,1,1,1,-1,1,-1,0,0,0,0,0")


def test_config_validation(loop_a):
    other = relative_loop(PLANT_B, 20, h=0.02)
    with pytest.raises(ParameterError):
        SimConfig([loop_a, other], [[1, 0], [1, 0]], 10)
    with pytest.raises(ParameterError):
        SimConfig([loop_a], [[1, 0], [1, 0]], 10)
    with pytest.raises(ParameterError):
        SimConfig([loop_a], [[1, 0]], -1)


def test_deterministic(loop_a, loop_b):
    x0 = list(random_unit_states(2, 2, seed=3))
    a = simulate(SimConfig([loop_a, loop_b], x0, 100)).to_csv()
    b = simulate(SimConfig([loop_a, loop_b], x0, 100)).to_csv()
    assert a == b
