"""Text input format, JSON persistence and timed-automaton export.

Input files are ``Key : value`` lines::

    Dynamics : [0 1; -2 3], [0; 1]
    Controller: [1 -4]
    Triggering Sampling Time: 0.01
    Triggering Heartbeat: 0.40
    Triggering Condition: [0.95 0 -1 0;0 0.95 0 -1;-1 0 1 0;0 -1 0 1]
    Solver Options: depth=2, etc_only=true

Matrices are bracketed, rows separated by ``;`` and entries by blanks or
commas.  Keys are case-sensitive.
"""
from __future__ import annotations

import json
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .linalg import LtiPlant, PetcLoop, QuadraticTrigger
from .games import TableStrategy
from .systems import FiniteSystem, MalformedModelError, TrafficModel, WaitTriggerSystem

__all__ = [
    "InputError",
    "ParseError",
    "SemanticError",
    "UnsupportedSystemError",
    "InputSpec",
    "parse_input_file",
    "load_input_file",
    "serialize_input",
    "parse_matrix",
    "model_to_json",
    "model_from_json",
    "export_uppaal",
    "scheduler_to_json",
    "scheduler_from_json",
    "system_to_json",
]

log = logging.getLogger(__name__)

LINEAR = "linear PETC"
GENERAL = "general"

_LINEAR_KEYS = ("Dynamics", "Controller", "Triggering Sampling Time",
                "Triggering Heartbeat", "Triggering Condition", "Solver Options")
_GENERAL_KEYS = ("Hyperbox States", "Grid Points Per Dimension", "Hyperbox Disturbances",
                 "Deg. of Homogeneity", "Lyapunov Function", "Dynamics", "Controller",
                 "Triggering Condition", "Triggering Times", "Solver Options")
# Options of the nonlinear CETC path; accepted and ignored for linear loops.
_CETC_OPTIONS = {"manifolds_times", "partition_method", "heartbeat", "order_approx",
                 "precision_deltas", "timeout_deltas", "precision_timing_bounds",
                 "precision_transitions", "timeout_timing_bounds", "timeout_transitions",
                 "nr_cones_small_angles", "nr_cones_big_angle", "gridstep_angular"}
_LINEAR_OPTIONS = {"depth": int, "etc_only": "bool", "backend": str, "n_points": int,
                   "seed": int, "conservative": "bool"}


class InputError(ValueError):
    """Base class of input-file errors."""


class ParseError(InputError):
    """Syntax error; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SemanticError(InputError):
    """Well-formed input describing an inconsistent system."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnsupportedSystemError(InputError):
    """The input describes a system kind this package does not abstract."""


_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def parse_matrix(text: str, line: int | None = None) -> np.ndarray:
    """Parse ``[a b; c d]`` into a 2-D float array."""
    s = text.strip()
    if not (s.startswith("[") and s.endswith("]")):
        raise ParseError(f"expected a bracketed matrix, got {text.strip()!r}", line)
    body = s[1:-1].strip()
    if not body:
        raise ParseError("empty matrix", line)
    rows = []
    for row in body.split(";"):
        toks = [t for t in re.split(r"[\s,]+", row.strip()) if t]
        for t in toks:
            if not _NUMBER.match(t):
                raise ParseError(f"bad number {t!r} in matrix", line)
        rows.append([float(t) for t in toks])
    if any(len(r) != len(rows[0]) for r in rows) or not rows[0]:
        raise SemanticError("matrix rows have different lengths", line)
    return np.array(rows, dtype=float)


def _split_top(text: str, sep: str = ",") -> list[str]:
    """Split on ``sep`` outside brackets."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "[(":
            depth += 1
        elif ch in "])":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts]


def _scalar(text: str, line: int) -> float:
    t = text.strip()
    if not _NUMBER.match(t):
        raise ParseError(f"expected a number, got {t!r}", line)
    return float(t)


def _bool(text: str, line: int) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ParseError(f"expected true/false, got {text.strip()!r}", line)


@dataclass(eq=False)
class InputSpec:
    """A linear PETC loop as described by an input file."""

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    h: float
    kmax: int
    Q: np.ndarray
    options: dict = field(default_factory=dict)
    kind: str = LINEAR

    @property
    def heartbeat(self) -> float:
        return self.h * self.kmax

    @property
    def depth(self) -> int:
        return int(self.options.get("depth", 1))

    @property
    def etc_only(self) -> bool:
        return bool(self.options.get("etc_only", False))

    def loop(self, name: str = "loop") -> PetcLoop:
        return PetcLoop(LtiPlant(self.A, self.B, self.K), QuadraticTrigger(self.Q, self.h, self.kmax), name)

    def __eq__(self, other) -> bool:
        if not isinstance(other, InputSpec):
            return NotImplemented
        return (self.kind == other.kind and self.h == other.h and self.kmax == other.kmax
                and self.options == other.options
                and all(np.array_equal(getattr(self, m), getattr(other, m)) for m in "ABKQ"))


def _lines(text: str):
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        if ":" not in s:
            raise ParseError(f"expected 'Key : value', got {s!r}", no)
        key, _, value = s.partition(":")
        yield no, key.strip(), value.strip()


def _looks_general(entries) -> bool:
    keys = {k for _, k, _ in entries}
    if keys & {"Hyperbox States", "Grid Points Per Dimension", "Hyperbox Disturbances"}:
        return True
    for _, k, v in entries:
        if k in ("Dynamics", "Controller") and not v.lstrip().startswith("["):
            return True
    return False


def _parse_options(value: str, line: int) -> dict:
    out = {}
    for item in _split_top(value):
        if not item:
            continue
        if "=" not in item:
            raise ParseError(f"solver option {item!r} is not key=value", line)
        key, _, val = (t.strip() for t in item.partition("="))
        if key in _CETC_OPTIONS:
            log.warning("line %d: option %r only applies to nonlinear systems; ignored", line, key)
            continue
        kind = _LINEAR_OPTIONS.get(key)
        if kind is None:
            raise ParseError(f"unknown solver option {key!r}", line)
        if kind == "bool":
            out[key] = _bool(val, line)
        elif kind is int:
            if not re.fullmatch(r"[+-]?\d+", val):
                raise ParseError(f"option {key} needs an integer, got {val!r}", line)
            out[key] = int(val)
        else:
            out[key] = val
    if "depth" in out and out["depth"] < 1:
        raise SemanticError("depth must be at least 1", line)
    if "backend" in out and out["backend"] not in ("sweep", "exact"):
        raise SemanticError("backend must be 'sweep' or 'exact'", line)
    return out


def parse_input_file(text: str, system_type: str | None = None) -> InputSpec:
    """Parse the text of a system definition.

    Parameters
    ----------
    text : str
    system_type : {"linear PETC", "general"}, optional
        Inferred from the keys when omitted.

    Raises
    ------
    ParseError
        Unknown or repeated key, malformed value; carries the line number.
    SemanticError
        Inconsistent dimensions, heartbeat not a multiple of the period.
    UnsupportedSystemError
        The file describes a nonlinear (general) system.
    """
    entries = list(_lines(text))
    if system_type is None:
        system_type = GENERAL if _looks_general(entries) else LINEAR
    if system_type == GENERAL:
        for no, key, _ in entries:
            if key not in _GENERAL_KEYS:
                raise ParseError(f"unknown key {key!r}", no)
        raise UnsupportedSystemError(
            "unsupported: general (nonlinear CETC) systems require external reachability tools")
    if system_type != LINEAR:
        raise ParseError(f"unknown system type {system_type!r}")

    seen: dict = {}
    for no, key, value in entries:
        if key not in _LINEAR_KEYS:
            raise ParseError(f"unknown key {key!r}", no)
        if key in seen:
            raise ParseError(f"duplicate key {key!r}", no)
        seen[key] = (no, value)
    for key in _LINEAR_KEYS[:-1]:
        if key not in seen:
            raise ParseError(f"missing key {key!r}")

    no, value = seen["Dynamics"]
    parts = _split_top(value)
    if len(parts) != 2:
        raise ParseError("Dynamics needs two matrices 'A, B'", no)
    A, B = parse_matrix(parts[0], no), parse_matrix(parts[1], no)
    n = A.shape[0]
    if A.shape != (n, n):
        raise SemanticError(f"A must be square, got {A.shape[0]}x{A.shape[1]}", no)
    if B.shape[0] != n:
        raise SemanticError(f"B has {B.shape[0]} rows but A is {n}x{n}", no)
    no, value = seen["Controller"]
    K = parse_matrix(value, no)
    if K.shape != (B.shape[1], n):
        raise SemanticError(f"K must be {B.shape[1]}x{n}, got {K.shape[0]}x{K.shape[1]}", no)
    no, value = seen["Triggering Sampling Time"]
    h = _scalar(value, no)
    if not h > 0:
        raise SemanticError("sampling time must be positive", no)
    no, value = seen["Triggering Heartbeat"]
    hb = _scalar(value, no)
    ratio = hb / h
    kmax = int(round(ratio))
    if kmax < 1 or abs(ratio - kmax) > 1e-9 * max(1.0, ratio):
        raise SemanticError(f"heartbeat {hb} is not a positive integer multiple of h = {h}", no)
    no, value = seen["Triggering Condition"]
    Q = parse_matrix(value, no)
    if Q.shape != (2 * n, 2 * n):
        raise SemanticError(f"triggering matrix must be {2 * n}x{2 * n}, got {Q.shape[0]}x{Q.shape[1]}", no)
    if np.max(np.abs(Q - Q.T)) > 1e-12:
        raise SemanticError("triggering matrix must be symmetric", no)
    options = {}
    if "Solver Options" in seen:
        no, value = seen["Solver Options"]
        options = _parse_options(value, no)
    return InputSpec(A, B, K, h, kmax, Q, options)


def load_input_file(path, system_type: str | None = None) -> InputSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_input_file(fh.read(), system_type)


def _fmt(v: float) -> str:
    return repr(float(v)) if v != int(v) or abs(v) >= 1e16 else str(int(v))


def _fmt_matrix(M: np.ndarray) -> str:
    return "[" + "; ".join(" ".join(_fmt(v) for v in row) for row in np.atleast_2d(M)) + "]"


def serialize_input(spec: InputSpec) -> str:
    """Inverse of :func:`parse_input_file`; floats are written with full precision."""
    lines = [
        f"Dynamics : {_fmt_matrix(spec.A)}, {_fmt_matrix(spec.B)}",
        f"Controller : {_fmt_matrix(spec.K)}",
        f"Triggering Sampling Time : {_fmt(spec.h)}",
        f"Triggering Heartbeat : {_fmt(spec.h * spec.kmax)}",
        f"Triggering Condition : {_fmt_matrix(spec.Q)}",
    ]
    if spec.options:
        items = []
        for k in sorted(spec.options):
            v = spec.options[k]
            items.append(f"{k}={str(v).lower() if isinstance(v, bool) else v}")
        lines.append("Solver Options : " + ", ".join(items))
    return "\n".join(lines) + "\n"


def model_to_json(model: TrafficModel) -> str:
    """Stable JSON: states sorted, edges as index triples sorted."""
    index = {s: i for i, s in enumerate(model.states)}
    edges = sorted((index[x], k, index[y]) for x, k, y in model.edges)
    doc = {
        "format": "etctraffic-model",
        "version": 1,
        "kmax": model.kmax,
        "h": model.h,
        "depth": model.depth,
        "states": [list(s) for s in model.states],
        "outputs": [model.output[s] for s in model.states],
        "edges": [list(e) for e in edges],
        "weights": [e[1] for e in edges],
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def model_from_json(text: str) -> TrafficModel:
    doc = json.loads(text)
    if doc.get("format") != "etctraffic-model":
        raise MalformedModelError("not a traffic model file")
    states = [tuple(s) for s in doc["states"]]
    edges = [(states[a], k, states[b]) for a, k, b in doc["edges"]]
    return TrafficModel(states, edges, doc["kmax"], doc.get("h"))


def _loc_name(label) -> str:
    return "R_" + "_".join(str(k) for k in label)


_DOCTYPE = ("<!DOCTYPE nta PUBLIC '-//Uppaal Team//DTD Flat System 1.1//EN' "
            "'http://www.it.uu.se/research/group/darts/uppaal/flat-1_2.dtd'>")


def export_uppaal(model: TrafficModel, name: str = "Traffic") -> str:
    """UPPAAL NTA document of a traffic model.

    One location per region with invariant ``c <= k1*H``; one transition per
    edge with guard ``c == k*H`` and reset ``c = 0``.  Time is counted in
    ticks of the checking period, so ``H = 1``.  UPPAAL needs a single
    initial location; the first region in sorted order is used.
    """
    nta = ET.Element("nta")
    ET.SubElement(nta, "declaration").text = "// ticks per checking period\nconst int H = 1;"
    tpl = ET.SubElement(nta, "template")
    ET.SubElement(tpl, "name").text = name
    ET.SubElement(tpl, "declaration").text = "clock c;"
    ids = {}
    for i, s in enumerate(model.states):
        ids[s] = f"id{i}"
        loc = ET.SubElement(tpl, "location", id=ids[s], x=str(200 * i), y="0")
        ET.SubElement(loc, "name", x=str(200 * i - 20), y="-34").text = _loc_name(s)
        ET.SubElement(loc, "label", kind="invariant", x=str(200 * i - 20), y="17").text = f"c <= {s[0]}*H"
    ET.SubElement(tpl, "init", ref=ids[model.states[0]])
    order = {s: i for i, s in enumerate(model.states)}
    for x, k, y in sorted(model.edges, key=lambda e: (order[e[0]], e[1], order[e[2]])):
        tr = ET.SubElement(tpl, "transition")
        ET.SubElement(tr, "source", ref=ids[x])
        ET.SubElement(tr, "target", ref=ids[y])
        ET.SubElement(tr, "label", kind="guard").text = f"c == {k}*H"
        ET.SubElement(tr, "label", kind="assignment").text = "c = 0"
    ET.SubElement(nta, "system").text = f"P = {name}();\nsystem P;"
    ET.indent(nta, space="\t")
    body = ET.tostring(nta, encoding="unicode")
    return '<?xml version="1.0" encoding="utf-8"?>\n' + _DOCTYPE + "\n" + body + "\n"


def _jsonable(x):
    return [_jsonable(v) for v in x] if isinstance(x, tuple) else x


def _tupled(x):
    return tuple(_tupled(v) for v in x) if isinstance(x, list) else x


def scheduler_to_json(strategy) -> str:
    """Stable JSON of a scheduler and the traffic models it was built from.

    ``entries`` lists ``[product state, [allowed actions]]`` in product index
    order; an action is written as a string such as ``"wt"``.
    """
    doc = {
        "format": "etctraffic-scheduler",
        "version": 1,
        "models": [json.loads(model_to_json(c.model)) for c in strategy.components],
        "entries": [[_jsonable(s), ["".join(u) for u in acts]] for s, acts in strategy.items()],
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def scheduler_from_json(text: str) -> TableStrategy:
    doc = json.loads(text)
    if doc.get("format") != "etctraffic-scheduler":
        raise MalformedModelError("not a scheduler file")
    comps = [WaitTriggerSystem(model_from_json(json.dumps(m))) for m in doc["models"]]
    table = {_tupled(s): [tuple(a) for a in acts] for s, acts in doc["entries"]}
    return TableStrategy(table, comps)


def system_to_json(system: FiniteSystem) -> str:
    """Stable JSON of any finite system: states with outputs, initial states, edges."""
    index = {x: i for i, x in enumerate(system.states)}
    edges = sorted((index[x], str(u), index[y]) for x, u, y in system.edges)
    doc = {
        "states": [_jsonable(x) for x in system.states],
        "outputs": [system.output[x] for x in system.states],
        "initial": sorted(index[x] for x in system.initial),
        "actions": [str(u) for u in system.actions],
        "edges": [list(e) for e in edges],
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"
