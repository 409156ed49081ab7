"""Closed-loop simulation of PETC loops sharing one channel, on the checking grid."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .abstraction import region_of
from .games import SchedulingFault, prefer_wait, step_scheduler
from .linalg import ParameterError, PetcLoop
from .systems import TRIGGER, WAIT

__all__ = ["SimConfig", "SimTrace", "simulate", "collision_report", "random_unit_states"]

TIE_TOL = 1e-12


@dataclass
class SimConfig:
    """Loops, their initial states and the number of checking periods to run.

    ``scheduler`` is a strategy over the product of the loops' wait/trigger
    systems, in the same order as ``loops``.
    """

    loops: Sequence[PetcLoop]
    x0: Sequence[np.ndarray]
    horizon: int
    scheduler: object | None = None
    seed: int = 0
    tie_break: Callable = prefer_wait

    def __post_init__(self):
        if not self.loops:
            raise ParameterError("at least one loop is needed")
        if len(self.x0) != len(self.loops):
            raise ParameterError("one initial state per loop is needed")
        hs = {loop.h for loop in self.loops}
        if len(hs) > 1:
            raise ParameterError(f"all loops must share the checking period, got {sorted(hs)}")
        self.x0 = [np.asarray(x, dtype=float).reshape(loop.n) for x, loop in zip(self.x0, self.loops)]
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise ParameterError("horizon must be a nonnegative integer")
        self.horizon = int(self.horizon)


@dataclass
class SimTrace:
    """Per-step record; index 0 is the initial sample of every loop.

    ``trigger[s, i]`` marks a sample of loop ``i`` at step ``s`` (the common
    initial sample is not counted), ``early`` marks samples taken before the
    loop's own trigger would have fired.
    """

    h: float
    states: list  # per loop, array (steps+1, n)
    held: list
    trigger: np.ndarray
    early: np.ndarray
    regions: list = field(default_factory=list)  # per loop, list of (step, label)

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.trigger.shape[0]) * self.h

    @property
    def collision(self) -> np.ndarray:
        return self.trigger.sum(axis=1) >= 2

    def inter_sample_times(self, loop: int) -> np.ndarray:
        steps = np.flatnonzero(self.trigger[:, loop])
        return np.diff(np.concatenate([[0], steps]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["t"]
        m = len(self.states)
        for i in range(m):
            n = self.states[i].shape[1]
            header += [f"x{i + 1}{j + 1}" for j in range(n)]
            header += [f"x{i + 1}hat{j + 1}" for j in range(n)]
        header += [f"trigger{i + 1}" for i in range(m)]
        header += [f"early{i + 1}" for i in range(m)]
        header += ["collision"]
        w.writerow(header)
        col = self.collision
        for s, t in enumerate(self.time):
            row = [f"{t:.10g}"]
            for i in range(m):
                row += [f"{v:.17g}" for v in self.states[i][s]]
                row += [f"{v:.17g}" for v in self.held[i][s]]
            row += [int(v) for v in self.trigger[s]]
            row += [int(v) for v in self.early[s]]
            row.append(int(col[s]))
            w.writerow(row)
        return buf.getvalue()


def random_unit_states(n: int, count: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((count, n))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def _fires(loop: PetcLoop, x, held) -> bool:
    z = np.concatenate([x, held])
    scale = float(held @ held)
    if scale == 0.0:
        return False
    return float(z @ loop.trigger.Q @ z) / scale > -TIE_TOL


def simulate(config: SimConfig) -> SimTrace:
    """Run the loops for ``config.horizon`` checking periods.

    Without a scheduler each loop samples when its quadratic condition fires
    or after ``kmax`` checks.  With a scheduler, the joint wait/trigger action
    is taken from the strategy at every step and the measured region after a
    sample selects the next product state.

    Raises
    ------
    SchedulingFault
        If the tracked product state leaves the scheduler's domain or the
        measured region is not a successor the abstraction allows.
    """
    loops = config.loops
    m = len(loops)
    steps = config.horizon
    h = loops[0].h
    step_maps = [loop.step_matrices for loop in loops]
    X = [np.empty((steps + 1, loop.n)) for loop in loops]
    H = [np.empty((steps + 1, loop.n)) for loop in loops]
    trig = np.zeros((steps + 1, m), dtype=bool)
    early = np.zeros((steps + 1, m), dtype=bool)
    regions: list = [[] for _ in loops]
    x = [v.copy() for v in config.x0]
    held = [v.copy() for v in config.x0]
    since = [0] * m

    sched = config.scheduler
    comps = None
    if sched is not None:
        comps = sched.components if hasattr(sched, "components") else None
        if comps is None or len(comps) != m:
            raise ParameterError("scheduler does not match the number of loops")
        depth = [c.model.depth for c in comps]
        labels = [region_of(held[i], loops[i], depth[i]) for i in range(m)]
        for i in range(m):
            regions[i].append((0, labels[i]))
        current = tuple(("T", labels[i]) for i in range(m))

    for i in range(m):
        X[i][0], H[i][0] = x[i], held[i]
    for s in range(1, steps + 1):
        if sched is not None:
            try:
                action = step_scheduler(sched, current, config.tie_break)
            except SchedulingFault as exc:
                raise SchedulingFault(f"step {s}: {exc}") from None
        for i, loop in enumerate(loops):
            Ad, BdK = step_maps[i]
            x[i] = Ad @ x[i] + BdK @ held[i]
            since[i] += 1
            if sched is None:
                fire = since[i] >= loop.kmax or _fires(loop, x[i], held[i])
            else:
                fire = action[i] == TRIGGER
                deadline = labels[i][0]
                early[s, i] = fire and since[i] < deadline
                if since[i] > deadline:
                    raise SchedulingFault(f"step {s}: loop {i + 1} passed its deadline")
            if fire:
                trig[s, i] = True
                held[i] = x[i].copy()
                since[i] = 0
            X[i][s], H[i][s] = x[i], held[i]
        if sched is not None:
            nxt = []
            for i in range(m):
                comp, st = comps[i], current[i]
                if action[i] == TRIGGER:
                    lab = region_of(held[i], loops[i], depth[i])
                    new = ("T", lab)
                    if new not in comp.post(st, TRIGGER):
                        raise SchedulingFault(
                            f"step {s}: measured region {lab} of loop {i + 1} is not a "
                            f"successor of {st} in the abstraction")
                    labels[i] = lab
                    regions[i].append((s, lab))
                else:
                    succ = comp.post(st, WAIT)
                    if not succ:
                        raise SchedulingFault(f"step {s}: loop {i + 1} cannot wait in {st}")
                    new = succ[0]
                nxt.append(new)
            current = tuple(nxt)
    return SimTrace(h, X, H, trig, early, regions)


def collision_report(trace: SimTrace) -> list[tuple[int, tuple[int, ...]]]:
    """Steps where two or more loops sampled together, with the loops involved."""
    return [(int(s), tuple(int(i) for i in np.flatnonzero(trace.trigger[s])))
            for s in np.flatnonzero(trace.collision)]
