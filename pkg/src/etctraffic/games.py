"""Safety games on products of wait/trigger systems: no two loops sample together.

Product state sets are dense boolean tensors with one axis per loop.  The
successor relation of a joint action is a product of per-loop relations, so
"all successors lie in Z" is evaluated one axis at a time: a gather along
the wait successors, or a sparse count of bad trigger successors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import csr_matrix

from .systems import T, T1, TRIGGER, WAIT, ProductSystem, WaitTriggerSystem

__all__ = [
    "UnschedulableError",
    "SchedulingFault",
    "SafetySpec",
    "SafetyResult",
    "SchedulerStrategy",
    "TableStrategy",
    "safe_set",
    "reachable_set",
    "safety_fixpoint",
    "extract_scheduler",
    "step_scheduler",
    "prefer_wait",
    "explicit_fixpoint",
]

log = logging.getLogger(__name__)


class UnschedulableError(RuntimeError):
    """The safety game has an empty winning set."""


class SchedulingFault(RuntimeError):
    """The scheduler was asked about a state outside its domain."""


class _Axis:
    """Index structure of one wait/trigger component."""

    def __init__(self, system: WaitTriggerSystem):
        self.system = system
        n = len(system.states)
        self.n = n
        self.wait = np.asarray(system.wait_next, dtype=np.int64)
        rows, cols = [], []
        for i, succ in enumerate(system.trigger_next):
            rows.extend([i] * len(succ))
            cols.extend(succ)
        self.trig = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        self.has_trig = np.diff(self.trig.indptr) > 0
        self.is_t = np.asarray(system.is_trigger_state, dtype=bool)
        self.initial = np.array([system.index[s] for s in system.initial], dtype=np.int64)


def _along(axis: int, arr: np.ndarray, fn):
    """Apply ``fn`` to ``arr`` with ``axis`` moved to the front."""
    moved = np.moveaxis(arr, axis, 0)
    return np.moveaxis(fn(moved.reshape(moved.shape[0], -1)).reshape(moved.shape), 0, axis)


def _forall_post(ax: _Axis, axis: int, Z: np.ndarray, action: str) -> np.ndarray:
    """States whose ``action``-successors along ``axis`` are nonempty and all in ``Z``."""
    if action == WAIT:
        ok = ax.wait >= 0

        def fn(flat):
            out = flat[np.where(ok, ax.wait, 0)]
            out[~ok] = False
            return out
    else:
        ok = ax.has_trig

        def fn(flat):
            bad = ax.trig @ (~flat).astype(np.float64)
            return (bad == 0) & ok[:, None]
    return _along(axis, Z, fn)


def _exists_image(ax: _Axis, axis: int, R: np.ndarray, action: str) -> np.ndarray:
    """Image of ``R`` along ``axis`` under ``action``."""
    if action == WAIT:
        ok = np.flatnonzero(ax.wait >= 0)

        def fn(flat):
            out = np.zeros_like(flat)
            np.logical_or.at(out, ax.wait[ok], flat[ok])
            return out
    else:
        def fn(flat):
            return (ax.trig.T @ flat.astype(np.float64)) > 0
    return _along(axis, R, fn)


@dataclass(frozen=True)
class SafetySpec:
    """Safe product states: at most one loop is at a sampling instant."""

    mask: np.ndarray

    def __contains__(self, state_index) -> bool:
        return bool(self.mask[tuple(state_index)])


def _axes(product: ProductSystem) -> list[_Axis]:
    return [_Axis(c) for c in product.components]


def safe_set(product: ProductSystem) -> SafetySpec:
    count = np.zeros(product.shape, dtype=np.int64)
    for i, c in enumerate(product.components):
        shape = [1] * len(product.shape)
        shape[i] = -1
        count = count + np.asarray(c.is_trigger_state, dtype=np.int64).reshape(shape)
    return SafetySpec(count <= 1)


def reachable_set(product: ProductSystem, axes: Sequence[_Axis] | None = None) -> np.ndarray:
    axes = axes or _axes(product)
    R = np.zeros(product.shape, dtype=bool)
    R[np.ix_(*[ax.initial for ax in axes])] = True
    while True:
        new = R.copy()
        for u in product.actions:
            img = R
            for i, (ax, a) in enumerate(zip(axes, u)):
                img = _exists_image(ax, i, img, a)
            new |= img
        if np.array_equal(new, R):
            return R
        R = new


def _controllable(axes, actions, Z):
    """Per joint action, the states from which that action stays in ``Z``."""
    out = []
    for u in actions:
        G = Z
        for i, (ax, a) in enumerate(zip(axes, u)):
            G = _forall_post(ax, i, G, a)
        out.append(G)
    return out


@dataclass
class SafetyResult:
    """Winning region of the scheduling game, as tensors over the product index space."""

    product: ProductSystem
    winning: np.ndarray
    reachable: np.ndarray
    safe: np.ndarray
    iterations: int

    @property
    def empty(self) -> bool:
        return not self.winning.any()

    def states(self) -> list[tuple]:
        comps = self.product.components
        return [tuple(c.states[i] for c, i in zip(comps, idx)) for idx in np.argwhere(self.winning)]

    def __len__(self) -> int:
        return int(self.winning.sum())


def safety_fixpoint(product: ProductSystem, spec: SafetySpec | None = None) -> SafetyResult:
    """Greatest fixed point of ``Z -> {x in Z & W : some u has nonempty Post_u(x) inside Z}``.

    Iteration starts from the reachable states; an empty result means the
    loops cannot be scheduled and is returned, not raised.
    """
    spec = spec or safe_set(product)
    axes = _axes(product)
    R = reachable_set(product, axes)
    Z = R & spec.mask
    it = 0
    while True:
        it += 1
        ok = np.zeros_like(Z)
        for G in _controllable(axes, product.actions, Z):
            ok |= G
        new = Z & ok
        if (new & ~Z).any():
            raise RuntimeError("safety iteration is not monotone")
        if np.array_equal(new, Z):
            break
        Z = new
    log.info("safety fixpoint: %d winning of %d reachable states after %d rounds",
             int(Z.sum()), int(R.sum()), it)
    return SafetyResult(product, Z, R, spec.mask, it)


def explicit_fixpoint(product: ProductSystem) -> set:
    """Set-based reference fixed point over explicitly enumerated states."""
    reach = product.reachable()
    Z = {s for s in reach if sum(o in (T, T1) for o in product.output(s)) <= 1}
    while True:
        new = set()
        for s in Z:
            for u in product.actions:
                post = product.post(s, u)
                if post and all(y in Z for y in post):
                    new.add(s)
                    break
        if new == Z:
            return Z
        Z = new


def prefer_wait(actions: Sequence[tuple]) -> tuple:
    """Latest safe triggering: lexicographically prefer ``w`` over ``t`` per loop."""
    return min(actions, key=lambda u: tuple(0 if a == WAIT else 1 for a in u))


class SchedulerStrategy:
    """Maximally permissive scheduler: every action that keeps the game winning.

    The domain is the winning set plus the initial product states (all loops
    sampling at time zero) that have a winning action.  The very first sample
    of every loop happens at once by construction and is not a collision the
    scheduler can avoid.
    """

    def __init__(self, result: SafetyResult):
        self.product = result.product
        self.result = result
        self.components = self.product.components
        self._index = [c.index for c in self.components]
        axes = _axes(self.product)
        self._ok = _controllable(axes, self.product.actions, result.winning)
        init = np.zeros(self.product.shape, dtype=bool)
        init[np.ix_(*[ax.initial for ax in axes])] = True
        any_ok = np.zeros_like(init)
        for G in self._ok:
            any_ok |= G
        self.domain = result.winning | (init & any_ok)

    def index_of(self, state) -> tuple:
        try:
            return tuple(ix[s] for ix, s in zip(self._index, state))
        except KeyError as exc:
            raise SchedulingFault(f"unknown component state {exc.args[0]}") from None

    def __contains__(self, state) -> bool:
        try:
            return bool(self.domain[self.index_of(state)])
        except SchedulingFault:
            return False

    def allowed(self, state) -> list[tuple]:
        idx = self.index_of(state)
        if not self.domain[idx]:
            raise SchedulingFault(f"state {state} is outside the scheduler's domain")
        return [u for u, G in zip(self.product.actions, self._ok) if G[idx]]

    def __len__(self) -> int:
        return int(self.domain.sum())

    def items(self):
        comps = self.components
        for idx in np.argwhere(self.domain):
            idx = tuple(int(i) for i in idx)
            state = tuple(c.states[i] for c, i in zip(comps, idx))
            yield state, [u for u, G in zip(self.product.actions, self._ok) if G[idx]]


class TableStrategy:
    """Scheduler given as an explicit ``state -> actions`` table, e.g. read from disk."""

    def __init__(self, table: dict, components: Sequence[WaitTriggerSystem]):
        self.table = table
        self.components = tuple(components)

    def __contains__(self, state) -> bool:
        return state in self.table

    def allowed(self, state) -> list[tuple]:
        try:
            return self.table[state]
        except KeyError:
            raise SchedulingFault(f"state {state} is outside the scheduler's domain") from None

    def __len__(self) -> int:
        return len(self.table)

    def items(self):
        return iter(self.table.items())


def extract_scheduler(result: SafetyResult) -> SchedulerStrategy:
    """Scheduler allowing, at each winning state, every action that stays winning.

    Raises
    ------
    UnschedulableError
        If the winning set is empty; the message names the reachable states
        that were lost first because they are unsafe.
    """
    if result.empty:
        bad = result.reachable & ~result.safe
        comps = result.product.components
        sample = [tuple(c.states[i] for c, i in zip(comps, idx)) for idx in np.argwhere(bad)[:3]]
        raise UnschedulableError(
            f"no collision-free schedule exists: winning set empty "
            f"({int(bad.sum())} reachable unsafe states, e.g. {sample})")
    return SchedulerStrategy(result)


def step_scheduler(strategy, current, tie_break: Callable[[Sequence[tuple]], tuple] = prefer_wait) -> tuple:
    """Pick one joint action for the current product state."""
    acts = strategy.allowed(current)
    if not acts:
        raise SchedulingFault(f"no safe action at {current}")
    return tie_break(acts)
