import json
import logging
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from etctraffic.abstraction import build_traffic_model
from etctraffic.games import extract_scheduler, safety_fixpoint
from etctraffic.io import (InputSpec, ParseError, SemanticError, UnsupportedSystemError,
                           export_uppaal, load_input_file, model_from_json, model_to_json,
                           parse_input_file, parse_matrix, scheduler_from_json,
                           scheduler_to_json, serialize_input, system_to_json)
from etctraffic.systems import MalformedModelError, ProductSystem, WaitTriggerSystem

from conftest import FIXTURES

LISTING_Q = np.array([[0.95, 0, -1, 0], [0, 0.95, 0, -1], [-1, 0, 1, 0], [0, -1, 0, 1]])


def test_linear_listing():
    spec = load_input_file(FIXTURES / "linear_petc.txt")
    np.testing.assert_array_equal(spec.A, [[0, 1], [-2, 3]])
    np.testing.assert_array_equal(spec.B, [[0], [1]])
    np.testing.assert_array_equal(spec.K, [[1, -4]])
    assert spec.h == 0.01 and spec.kmax == 40
    np.testing.assert_array_equal(spec.Q, LISTING_Q)
    assert spec.options == {}


def test_general_listing_is_rejected_clearly():
    with pytest.raises(UnsupportedSystemError, match="unsupported: .*external reachability tools"):
        load_input_file(FIXTURES / "general.txt")


def test_malformed_key_reports_line():
    with pytest.raises(ParseError) as info:
        load_input_file(FIXTURES / "malformed_key.txt")
    assert info.value.line == 3
    assert "Triggering Sampling Tme" in str(info.value)


def test_dimension_mismatch_reports_line():
    with pytest.raises(SemanticError) as info:
        load_input_file(FIXTURES / "dimension_mismatch.txt")
    assert info.value.line == 2


def test_scalar_system():
    text = ("Dynamics : [1], [1]\nController: [-2]\nTriggering Sampling Time: 0.1\n"
            "Triggering Heartbeat: 0.5\nTriggering Condition: [0.9 -1; -1 1]\n")
    spec = parse_input_file(text)
    assert spec.A.shape == (1, 1) and spec.kmax == 5


def base_lines():
    return (FIXTURES / "linear_petc.txt").read_text().splitlines()


def with_line(i, text):
    lines = base_lines()
    lines[i] = text
    return "\n".join(lines) + "\n"


@pytest.mark.parametrize("line, text, error", [
    (3, "Triggering Heartbeat: 0.405", SemanticError),
    (2, "Triggering Sampling Time: -0.01", SemanticError),
    (4, "Triggering Condition: [1 0; 0 1]", SemanticError),
    (4, "Triggering Condition: [0.95 0 -1 0;0 0.95 0 -1;-1 0 1 0;0 -1 0 x]", ParseError),
    (4, "Triggering Condition: [0.95 0 -1 0;0 0.95 0 -1;-1 0 1 0;0 -1 1 1]", SemanticError),
    (0, "Dynamics : [0 1; -2 3]", ParseError),
    (1, "controller: [1 -4]", ParseError),
    (1, "Controller [1 -4]", ParseError),
])
def test_errors_carry_line_numbers(line, text, error):
    with pytest.raises(error) as info:
        parse_input_file(with_line(line, text))
    assert info.value.line == line + 1


def test_duplicate_and_missing_keys():
    with pytest.raises(ParseError, match="duplicate"):
        parse_input_file("\n".join(base_lines() + ["Controller: [1 -4]"]))
    with pytest.raises(ParseError, match="missing"):
        parse_input_file("\n".join(base_lines()[:4]))


def test_solver_options():
    text = "\n".join(base_lines() + ["Solver Options : depth=3, etc_only=true, backend=sweep, n_points=500"])
    spec = parse_input_file(text)
    assert spec.depth == 3 and spec.etc_only
    assert spec.options == {"depth": 3, "etc_only": True, "backend": "sweep", "n_points": 500}
    with pytest.raises(ParseError):
        parse_input_file("\n".join(base_lines() + ["Solver Options : depht=3"]))
    with pytest.raises(SemanticError):
        parse_input_file("\n".join(base_lines() + ["Solver Options : depth=0"]))


def test_nonlinear_options_are_ignored(caplog):
    text = "\n".join(base_lines() + ["Solver Options : depth=2, order_approx=4"])
    with caplog.at_level(logging.WARNING):
        spec = parse_input_file(text)
    assert spec.options == {"depth": 2}
    assert "order_approx" in caplog.text


def test_parse_matrix_separators():
    np.testing.assert_array_equal(parse_matrix("[1, 2; 3 4]"), [[1, 2], [3, 4]])
    np.testing.assert_array_equal(parse_matrix(" [ -1e-3 ] "), [[-0.001]])
    with pytest.raises(SemanticError):
        parse_matrix("[1 2; 3]")


finite = st.floats(-1e6, 1e6, allow_nan=False).filter(lambda v: v == 0 or abs(v) > 1e-300)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (2, 2), elements=finite), arrays(np.float64, (2, 1), elements=finite),
       arrays(np.float64, (1, 2), elements=finite), arrays(np.float64, (4, 4), elements=finite),
       st.sampled_from([0.01, 0.1, 0.05, 1.0, 0.003]), st.integers(1, 60), st.integers(1, 5))
def test_serialize_roundtrip(A, B, K, Q, h, kmax, depth):
    Q = 0.5 * (Q + Q.T)
    spec = InputSpec(A, B, K, h, kmax, Q, {"depth": depth})
    assert parse_input_file(serialize_input(spec)) == spec


def test_listing_roundtrip():
    spec = load_input_file(FIXTURES / "linear_petc.txt")
    assert parse_input_file(serialize_input(spec)) == spec


def test_model_json_byte_identical(loop_b):
    model = build_traffic_model(loop_b, 2, etc_only=False)
    text = model_to_json(model)
    again = model_from_json(text)
    assert model_to_json(again) == text
    assert again.edges == model.edges and again.states == model.states
    with pytest.raises(MalformedModelError):
        model_from_json(json.dumps({"format": "other"}))


def test_uppaal_golden(two_region):
    golden = (FIXTURES / "two_region_uppaal.xml").read_text(encoding="utf-8")
    assert export_uppaal(two_region) == golden


def test_uppaal_structure(two_region):
    text = export_uppaal(two_region)
    assert text.startswith('<?xml version="1.0"')
    root = ET.fromstring(text.split("\n", 2)[2])
    assert root.tag == "nta"
    tpl = root.find("template")
    locs = tpl.findall("location")
    assert len(locs) == 2
    assert [loc.find("label").text for loc in locs] == ["c <= 2*H", "c <= 3*H"]
    trans = tpl.findall("transition")
    assert len(trans) == 6
    for tr in trans:
        kinds = {lab.get("kind"): lab.text for lab in tr.findall("label")}
        assert kinds["assignment"] == "c = 0"
        assert kinds["guard"].startswith("c == ")
    assert "const int H = 1;" in root.find("declaration").text


def test_uppaal_deterministic(loop_b):
    model = build_traffic_model(loop_b, 1, etc_only=False)
    assert export_uppaal(model) == export_uppaal(model_from_json(model_to_json(model)))


def test_wait_trigger_fixture(two_region):
    golden = (FIXTURES / "two_region_wait_trigger.json").read_text(encoding="utf-8")
    assert system_to_json(WaitTriggerSystem(two_region)) == golden


def test_scheduler_json_roundtrip(two_region):
    P = ProductSystem([WaitTriggerSystem(two_region)] * 2)
    sched = extract_scheduler(safety_fixpoint(P))
    text = scheduler_to_json(sched)
    table = scheduler_from_json(text)
    assert dict(table.items()) == dict(sched.items())
    assert scheduler_to_json(table) == text
