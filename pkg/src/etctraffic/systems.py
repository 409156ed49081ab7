"""Finite transition systems, PETC traffic models and their wait/trigger form.

A system is the tuple ``(states, initial, actions, edges, outputs, H)``.
Traffic models are systems whose states are region labels (tuples of
inter-sample times in units of h), whose actions are inter-sample times
and whose output is the first element of the label.
"""
from __future__ import annotations

import itertools
from collections import defaultdict, deque
from functools import cached_property
from typing import Any, Hashable, Iterable, Sequence

__all__ = [
    "FiniteSystem",
    "TrafficModel",
    "WaitTriggerSystem",
    "ProductSystem",
    "MalformedModelError",
    "IncompleteModelError",
    "WAIT",
    "TRIGGER",
    "T1",
    "T",
    "wait_trigger_transform",
    "parallel_compose",
    "bounded_trace_membership",
    "to_dot",
]

WAIT = "w"
TRIGGER = "t"
T1 = "T1"
T = "T"


class MalformedModelError(ValueError):
    """The system violates a structural invariant."""


class IncompleteModelError(MalformedModelError):
    """The traffic model lacks early-trigger edges needed by the wait/trigger form."""


class FiniteSystem:
    """Explicit finite transition system.

    States may be any hashable objects; ``states`` keeps insertion order so
    serializations and iteration are deterministic.
    """

    def __init__(self, states: Iterable[Hashable], initial: Iterable[Hashable],
                 actions: Iterable[Hashable], edges: Iterable[tuple], output: dict):
        self.states = tuple(dict.fromkeys(states))
        self.initial = tuple(dict.fromkeys(initial))
        self.actions = tuple(dict.fromkeys(actions))
        self.edges = frozenset(edges)
        self.output = dict(output)
        known = set(self.states)
        acts = set(self.actions)
        for x, u, y in self.edges:
            if x not in known or y not in known:
                raise MalformedModelError(f"edge {(x, u, y)} references an undeclared state")
            if u not in acts:
                raise MalformedModelError(f"edge {(x, u, y)} uses undeclared action {u!r}")
        if not set(self.initial) <= known:
            raise MalformedModelError("initial states must be declared states")
        missing = [x for x in self.states if x not in self.output]
        if missing:
            raise MalformedModelError(f"output map undefined on {missing[:3]}")

    @cached_property
    def _post(self) -> dict:
        post = defaultdict(list)
        try:
            ordered = sorted(self.edges)
        except TypeError:
            ordered = sorted(self.edges, key=repr)
        for x, u, y in ordered:
            post[x, u].append(y)
        return dict(post)

    def post(self, state, action) -> tuple:
        return tuple(self._post.get((state, action), ()))

    def enabled(self, state) -> tuple:
        return tuple(u for u in self.actions if (state, u) in self._post)

    def successors(self, state) -> set:
        return {y for u in self.actions for y in self._post.get((state, u), ())}

    @property
    def outputs(self) -> set:
        return set(self.output.values())

    def __len__(self) -> int:
        return len(self.states)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({len(self.states)} states, {len(self.edges)} edges)"


class TrafficModel(FiniteSystem):
    """Weighted traffic model of one PETC loop.

    Parameters
    ----------
    states : iterable of tuple[int, ...]
        Region labels ``(k1, ..., kl)``.
    edges : iterable of (label, k, label)
        ``k`` is the chosen inter-sample time; ``k == label[0]`` is the
        natural ETC transition, smaller values are early triggers.
    kmax : int
    h : float, optional
        Checking period, only used to report values in seconds.
    """

    def __init__(self, states, edges, kmax: int, h: float | None = None):
        states = sorted({tuple(map(int, s)) for s in states})
        edges = {(tuple(map(int, x)), int(k), tuple(map(int, y))) for x, k, y in edges}
        super().__init__(states, states, range(1, kmax + 1), edges,
                         {s: s[0] for s in states})
        self.kmax = int(kmax)
        self.h = h
        self._validate()

    def _validate(self):
        if not self.states:
            raise MalformedModelError("traffic model has no regions")
        depth = len(self.states[0])
        for s in self.states:
            if len(s) != depth or not all(1 <= k <= self.kmax for k in s):
                raise MalformedModelError(f"bad region label {s}")
        for x, k, _ in self.edges:
            if k > x[0]:
                raise MalformedModelError(f"edge from {x} with k={k} exceeds its deadline")
        for s in self.states:
            if (s, s[0]) not in self._post:
                raise MalformedModelError(f"region {s} has no natural (ETC) transition")

    @property
    def depth(self) -> int:
        return len(self.states[0])

    def weight(self, edge) -> int:
        return edge[1]

    @property
    def etc_only(self) -> bool:
        return all(k == x[0] for x, k, _ in self.edges)

    def etc_restriction(self) -> "TrafficModel":
        """The verification model: only natural ETC transitions."""
        return TrafficModel(self.states, [e for e in self.edges if e[1] == e[0][0]],
                            self.kmax, self.h)


def _wt_sort_key(state):
    kind, x, *rest = state
    return (x, 0 if kind == T else 1, rest)


class WaitTriggerSystem(FiniteSystem):
    """Per-sample form of a traffic model with actions wait/trigger.

    States are ``("T", x)`` (just sampled in region x) and ``("W", x, j)``
    (``j`` checks elapsed since sampling in x without triggering).
    """

    def __init__(self, model: TrafficModel):
        deadline = model.output
        for x in model.states:
            for j in range(1, deadline[x] + 1):
                if not model.post(x, j):
                    raise IncompleteModelError(
                        f"region {x} has no edge with k={j}; early-trigger edges are required"
                    )
        states = []
        output = {}
        edges = set()
        for x in model.states:
            hx = deadline[x]
            states.append((T, x))
            output[T, x] = T1 if hx == 1 else T
            for y in model.post(x, 1):
                edges.add(((T, x), TRIGGER, (T, y)))
            if hx > 1:
                edges.add(((T, x), WAIT, ("W", x, 1)))
            for j in range(1, hx):
                states.append(("W", x, j))
                output["W", x, j] = hx - j
                if j < hx - 1:
                    edges.add((("W", x, j), WAIT, ("W", x, j + 1)))
                for y in model.post(x, j + 1):
                    edges.add((("W", x, j), TRIGGER, (T, y)))
        states.sort(key=_wt_sort_key)
        super().__init__(states, [s for s in states if s[0] == T], (WAIT, TRIGGER), edges, output)
        self.model = model

    @cached_property
    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.states)}

    @cached_property
    def wait_next(self) -> list:
        """Index of the unique w-successor of each state, or -1."""
        idx = self.index
        out = []
        for s in self.states:
            nxt = self.post(s, WAIT)
            out.append(idx[nxt[0]] if nxt else -1)
        return out

    @cached_property
    def trigger_next(self) -> list:
        idx = self.index
        return [sorted(idx[y] for y in self.post(s, TRIGGER)) for s in self.states]

    @cached_property
    def is_trigger_state(self) -> list:
        return [self.output[s] in (T, T1) for s in self.states]


def wait_trigger_transform(model: TrafficModel) -> WaitTriggerSystem:
    return WaitTriggerSystem(model)


class ProductSystem:
    """Synchronous parallel composition of wait/trigger systems.

    Nothing is materialized: product states are tuples of component states
    and successors are generated on demand.
    """

    def __init__(self, components: Sequence[WaitTriggerSystem]):
        if not components:
            raise ValueError("parallel composition needs at least one system")
        self.components = tuple(components)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(c.states) for c in self.components)

    @property
    def size(self) -> int:
        return int(_prod(self.shape))

    @property
    def actions(self) -> list[tuple[str, ...]]:
        return list(itertools.product((WAIT, TRIGGER), repeat=len(self.components)))

    @property
    def states(self):
        return itertools.product(*(c.states for c in self.components))

    @property
    def initial(self):
        return itertools.product(*(c.initial for c in self.components))

    def output(self, state) -> tuple:
        return tuple(c.output[s] for c, s in zip(self.components, state))

    def post(self, state, action) -> list[tuple]:
        parts = [c.post(s, u) for c, s, u in zip(self.components, state, action)]
        return list(itertools.product(*parts))

    def enabled(self, state) -> list[tuple[str, ...]]:
        return [u for u in self.actions
                if all(c.post(s, a) for c, s, a in zip(self.components, state, u))]

    def reachable(self) -> set:
        """Explicit breadth-first reachable set; only for small products."""
        seen = set(self.initial)
        queue = deque(seen)
        while queue:
            s = queue.popleft()
            for u in self.actions:
                for y in self.post(s, u):
                    if y not in seen:
                        seen.add(y)
                        queue.append(y)
        return seen

    def __repr__(self):
        return f"ProductSystem({' x '.join(map(str, self.shape))})"


def _prod(xs):
    out = 1
    for x in xs:
        out *= x
    return out


def parallel_compose(systems: Sequence[WaitTriggerSystem]) -> ProductSystem:
    return ProductSystem(systems)


def bounded_trace_membership(system: FiniteSystem, trace: Sequence, actions: Sequence | None = None) -> bool:
    """Whether some run from an initial state produces the output sequence ``trace``.

    If ``actions`` is given (length ``len(trace) - 1``) the run must also
    take exactly those actions.
    """
    if not trace:
        return True
    if actions is not None and len(actions) != len(trace) - 1:
        raise ValueError("actions must be one shorter than the trace")
    current = {x for x in system.initial if system.output[x] == trace[0]}
    for i, y in enumerate(trace[1:]):
        if not current:
            return False
        acts = system.actions if actions is None else (actions[i],)
        current = {z for x in current for u in acts for z in system.post(x, u)
                   if system.output[z] == y}
    return bool(current)


def _dot_id(state: Any) -> str:
    return '"' + str(state).replace('"', "'") + '"'


def to_dot(system: FiniteSystem, name: str = "S") -> str:
    """Graphviz rendering; nodes show their output, edges their action."""
    lines = [f"digraph {name} {{"]
    initial = set(system.initial)
    for s in system.states:
        shape = "doublecircle" if s in initial else "circle"
        lines.append(f'  {_dot_id(s)} [label="{s}\\n{system.output[s]}", shape={shape}];')
    for x, u, y in sorted(system.edges, key=repr):
        lines.append(f'  {_dot_id(x)} -> {_dot_id(y)} [label="{u}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
