"""Average inter-sample time metrics and early-trigger synthesis.

All weights are integers (inter-sample times in units of h) and every
reported value is an exact :class:`fractions.Fraction`.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .abstraction import region_labels
from .linalg import PetcLoop
from .systems import MalformedModelError, TrafficModel

__all__ = [
    "WeightedGraph",
    "MeanPayoffGame",
    "StrategyCoverageError",
    "min_cycle_mean",
    "critical_cycles",
    "saist",
    "min_mean_cycles",
    "solve_mean_payoff",
    "mean_payoff_strategy",
    "closed_loop_saist_check",
    "format_report",
]

log = logging.getLogger(__name__)

MAX, MIN = "max", "min"


class StrategyCoverageError(KeyError):
    """A simulated state fell into a region the strategy does not cover."""


@dataclass
class WeightedGraph:
    """Directed multigraph with integer edge weights over arbitrary hashable nodes."""

    nodes: list
    edges: list  # (u, v, weight)

    def __post_init__(self):
        self.nodes = list(dict.fromkeys(self.nodes))
        self.index = {v: i for i, v in enumerate(self.nodes)}
        for u, v, w in self.edges:
            if u not in self.index or v not in self.index:
                raise MalformedModelError(f"edge {(u, v, w)} references an unknown node")
        out = np.zeros(len(self.nodes), dtype=bool)
        for u, _, _ in self.edges:
            out[self.index[u]] = True
        if not out.all():
            dead = [self.nodes[i] for i in np.flatnonzero(~out)[:3]]
            raise MalformedModelError(f"nodes without outgoing edges: {dead}")

    def arrays(self):
        src = np.fromiter((self.index[u] for u, _, _ in self.edges), dtype=np.int64, count=len(self.edges))
        dst = np.fromiter((self.index[v] for _, v, _ in self.edges), dtype=np.int64, count=len(self.edges))
        w = np.fromiter((int(w) for _, _, w in self.edges), dtype=np.int64, count=len(self.edges))
        return src, dst, w

    @classmethod
    def from_model(cls, model: TrafficModel, etc_only: bool = True) -> "WeightedGraph":
        edges = [(x, y, k) for x, k, y in model.edges if not etc_only or k == x[0]]
        return cls(list(model.states), edges)


def _cyclic_components(n: int, src, dst):
    """Yield ``(members, edge_mask)`` for each strongly connected component with a cycle."""
    if n == 0:
        return
    g = csr_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
    ncomp, lab = connected_components(g, directed=True, connection="strong")
    size = np.bincount(lab, minlength=ncomp)
    selfloop = np.zeros(ncomp, dtype=bool)
    selfloop[lab[src[src == dst]]] = True
    inner = lab[src] == lab[dst]
    for c in np.flatnonzero((size > 1) | selfloop):
        yield np.flatnonzero(lab == c), inner & (lab[src] == c)


def _karp(n: int, src, dst, w) -> Fraction:
    """Karp's minimum cycle mean on a strongly connected graph with nodes 0..n-1.

    Two passes keep memory at O(n): the first finds ``D_n``, the second
    replays the walk lengths and keeps the running maximum of
    ``(D_n(v) - D_k(v)) / (n - k)`` as an exact integer fraction.
    """
    big = np.iinfo(np.int64).max // 4

    def relax(prev):
        cur = np.full(n, big, dtype=np.int64)
        cand = prev[src] + w
        cand[prev[src] >= big] = big
        np.minimum.at(cur, dst, cand)
        return cur

    D = np.full(n, big, dtype=np.int64)
    D[0] = 0  # strongly connected: a single source reaches everything
    first = D.copy()
    for _ in range(n):
        D = relax(D)
    Dn = D
    best_num = np.zeros(n, dtype=np.int64)
    best_den = np.ones(n, dtype=np.int64)
    seen = np.zeros(n, dtype=bool)
    D = first
    for k in range(n):
        ok = (D < big) & (Dn < big)
        num = Dn - D
        den = n - k
        better = ok & (~seen | (num * best_den > best_num * den))
        best_num[better] = num[better]
        best_den[better] = den
        seen |= better
        D = relax(D)
    vals = [Fraction(int(a), int(b)) for a, b in zip(best_num[seen], best_den[seen])]
    return min(vals)


def _root_sums(nxt, c):
    """Pointer doubling: final node reached and the sum of ``c`` along the way.

    ``nxt`` must map every node to a root (a fixed point) in finitely many
    steps; ``c`` must be zero at the roots.
    """
    J, S = nxt.copy(), c.copy()
    while True:
        JJ = J[J]
        if np.array_equal(JJ, J):
            return J, S
        S = S + S[J]
        J = JJ


def _evaluate_policy(succ, wt):
    """Gain and bias of every node under a positional successor map.

    Each node's path ends in a cycle; its gain is that cycle's mean as a
    reduced integer pair ``(p, q)``.  The bias, scaled by ``q``, satisfies
    ``X(v) = q w(v) - p + X(succ v)`` and is zero at the smallest node of
    each cycle.
    """
    n = len(succ)
    idx = np.arange(n)
    g = csr_matrix((np.ones(n), (idx, succ)), shape=(n, n))
    ncomp, lab = connected_components(g, directed=True, connection="strong")
    on_cycle = (np.bincount(lab, minlength=ncomp)[lab] > 1) | (succ == idx)
    cyc_nodes = np.flatnonzero(on_cycle)
    csum = np.bincount(lab[cyc_nodes], weights=wt[cyc_nodes], minlength=ncomp).astype(np.int64)
    clen = np.maximum(np.bincount(lab[cyc_nodes], minlength=ncomp), 1).astype(np.int64)
    gcd = np.maximum(np.gcd(csum, clen), 1)
    cp, cq = csum // gcd, clen // gcd
    anchor_of = np.full(ncomp, n, dtype=np.int64)
    np.minimum.at(anchor_of, lab[cyc_nodes], cyc_nodes)
    anchors = anchor_of[anchor_of < n]
    nxt = succ.astype(np.int64).copy()
    nxt[anchors] = anchors
    root, _ = _root_sums(nxt, np.zeros(n, dtype=np.int64))
    p, q = cp[lab[root]], cq[lab[root]]
    c = q * wt - p
    c[anchors] = 0
    _, X = _root_sums(nxt, c)
    return p, q, X


def _segment_argbest(val, valid, starts, fill):
    """Per segment of sorted edges, the best value among ``valid`` and the first edge attaining it."""
    v = np.where(valid, val, fill)
    best = np.maximum.reduceat(v, starts)
    seg_best = np.repeat(best, np.diff(np.append(starts, len(v))))
    hit = valid & (v == seg_best)
    cand = np.where(hit, np.arange(len(v)), len(v))
    return best, np.minimum.reduceat(cand, starts)


def _improve(src, dst, w, starts, pol, p, q, X, mine, sign: int):
    """Switch the nodes in ``mine`` to strictly better edges; ``sign`` +1 maximizes.

    Edges are sorted by source and ``starts`` holds each node's first edge.
    Gain improvements take priority; bias is only compared along edges that
    keep the node's current gain.  Returns the new policy and whether it changed.
    """
    ps, qs, pd, qd = p[src], q[src], p[dst], q[dst]
    ok = mine[src]
    # sign * (gain(dst) - gain(src)) > 0, exactly.
    diff = sign * (pd * qs - ps * qd)
    up = ok & (diff > 0)
    new = pol.copy()
    if up.any():
        _, pick = _segment_argbest(sign * (pd / qd), up, starts, -np.inf)
        hit = pick < len(src)
        new[hit] = pick[hit]
        return new, True
    same = ok & (diff == 0)
    red = sign * (qs * w - ps + X[dst])
    fill = np.iinfo(np.int64).min
    best, pick = _segment_argbest(red, same, starts, fill)
    better = mine & (best != fill) & (best > sign * X)
    if not better.any():
        return pol, False
    new[better] = pick[better]
    return new, True


class _Engine:
    """Integer arrays for a two-player arena with edges sorted by source."""

    def __init__(self, n: int, src, dst, w, is_max):
        order = np.lexsort((dst, w, src))
        self.perm = order
        self.n = n
        self.src, self.dst, self.w = src[order], dst[order], w[order]
        self.is_max = np.asarray(is_max, dtype=bool)
        self.first = np.searchsorted(self.src, np.arange(n))
        if np.any(np.diff(np.append(self.first, len(self.src))) == 0):
            raise MalformedModelError("every node needs an outgoing edge")

    def evaluate(self, pol):
        return _evaluate_policy(self.dst[pol], self.w[pol])

    def solve(self, max_iter: int = 100_000):
        pol = self.first.copy()
        is_min = ~self.is_max
        for _ in range(max_iter):
            for _ in range(max_iter):
                p, q, X = self.evaluate(pol)
                pol, changed = _improve(self.src, self.dst, self.w, self.first, pol, p, q, X, is_min, -1)
                if not changed:
                    break
            else:
                raise RuntimeError("minimizer policy iteration did not converge")
            pol, changed = _improve(self.src, self.dst, self.w, self.first, pol, p, q, X, self.is_max, +1)
            if not changed:
                return pol, p, q
        raise RuntimeError("strategy improvement did not converge")


def _howard(n: int, src, dst, w) -> Fraction:
    """Minimum cycle mean of a strongly connected graph by exact policy iteration."""
    pol, p, q = _Engine(n, src, dst, w, np.zeros(n, dtype=bool)).solve()
    return min(Fraction(int(a), int(b)) for a, b in set(zip(p.tolist(), q.tolist())))


_KARP_BUDGET = 50_000_000


def min_cycle_mean(graph: WeightedGraph) -> Fraction:
    """Exact minimum mean cycle weight, solved per cyclic strongly connected component.

    Components small enough for Karp's Theta(nm) bound use Karp; larger ones
    use policy iteration, whose answer is checked by feasibility of the
    mean-shifted potentials.
    """
    src, dst, w = graph.arrays()
    best = None
    local = np.empty(len(graph.nodes), dtype=np.int64)
    for members, mask in _cyclic_components(len(graph.nodes), src, dst):
        local[members] = np.arange(len(members))
        args = (len(members), local[src[mask]], local[dst[mask]], w[mask])
        if len(members) * int(mask.sum()) <= _KARP_BUDGET:
            val = _karp(*args)
        else:
            val = _howard(*args)
            n_, s_, d_, w_ = args
            _potentials(n_, s_, d_, val.denominator * w_ - val.numerator)
        if best is None or val < best:
            best = val
    if best is None:
        raise MalformedModelError("graph has no cycle")
    return best


def _potentials(n: int, src, dst, w_scaled):
    """Shortest distances from a virtual source joined to all nodes (Bellman-Ford).

    Valid whenever there is no negative cycle, which holds for weights
    shifted by the minimum cycle mean.
    """
    d = np.zeros(n, dtype=np.int64)
    for _ in range(n + 1):
        cand = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(cand, dst, d[src] + w_scaled)
        nd = np.minimum(d, cand)
        if np.array_equal(nd, d):
            return d
        d = nd
    raise RuntimeError("negative cycle under the minimum cycle mean")


def critical_cycles(graph: WeightedGraph, value: Fraction | None = None, limit: int = 10_000):
    """Simple cycles whose mean equals the minimum cycle mean.

    Every such cycle runs along edges that are tight for the potentials of
    the mean-shifted weights, and every cycle of tight edges has the minimum
    mean; cycles are enumerated in that subgraph.
    """
    import networkx as nx

    value = min_cycle_mean(graph) if value is None else value
    src, dst, w = graph.arrays()
    p, q = value.numerator, value.denominator
    shifted = q * w - p
    d = _potentials(len(graph.nodes), src, dst, shifted)
    tight = d[src] + shifted == d[dst]
    G = nx.MultiDiGraph()
    for s, t, wt in zip(src[tight], dst[tight], w[tight]):
        G.add_edge(int(s), int(t), weight=int(wt))
    out = []
    for cyc in nx.simple_cycles(nx.DiGraph(G)):
        # DiGraph collapses parallel edges; recover every weight combination.
        options = [sorted({data["weight"] for data in G.get_edge_data(a, b).values()})
                   for a, b in zip(cyc, cyc[1:] + cyc[:1])]
        for ws in _combinations(options):
            if Fraction(sum(ws), len(ws)) == value:
                out.append(([graph.nodes[i] for i in cyc], tuple(ws)))
        if len(out) >= limit:
            log.warning("stopped after %d critical cycles", limit)
            break
    return out


def _combinations(options):
    if not options:
        yield ()
        return
    for head in options[0]:
        for tail in _combinations(options[1:]):
            yield (head,) + tail


def canonical_rotation(ws: Sequence[int]) -> tuple[int, ...]:
    """Lexicographically largest rotation, so one cycle prints one way."""
    ws = tuple(ws)
    return max(ws[i:] + ws[:i] for i in range(len(ws)))


def saist(model: TrafficModel) -> Fraction:
    """Smallest average inter-sample time of a traffic model, in units of h.

    Only natural ETC transitions (``k`` equal to the region's output) are used.
    """
    return min_cycle_mean(WeightedGraph.from_model(model, etc_only=True))


def min_mean_cycles(model: TrafficModel, limit: int = 10_000):
    """Cycles attaining the SAIST.

    Returns ``(value, cycles)`` where cycles is a set of
    ``(weights, states)`` pairs, each rotated to its canonical form.
    """
    g = WeightedGraph.from_model(model, etc_only=True)
    value = min_cycle_mean(g)
    result = set()
    for states, ws in critical_cycles(g, value, limit):
        canon = canonical_rotation(ws)
        i = next(i for i in range(len(ws)) if ws[i:] + ws[:i] == canon)
        result.add((canon, tuple(states[i:] + states[:i])))
    return value, result


@dataclass
class MeanPayoffGame:
    """Two-player graph game; MAX nodes maximize, MIN nodes minimize the mean weight.

    ``edges`` holds ``(u, v, weight)``; parallel edges are allowed and keep
    their own identity so a strategy can name which one it takes.
    """

    owner: dict
    edges: list
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = list(self.owner)
        self.out = defaultdict(list)
        for i, (u, v, w) in enumerate(self.edges):
            if u not in self.owner or v not in self.owner:
                raise MalformedModelError(f"edge {(u, v, w)} references an unknown node")
            self.out[u].append(i)
        dead = [v for v in self.nodes if not self.out[v]]
        if dead:
            raise MalformedModelError(f"arena is not total: {dead[:3]} have no moves")

    @classmethod
    def from_traffic_model(cls, model: TrafficModel) -> "MeanPayoffGame":
        """Controller picks ``k`` at each region, the adversary resolves the successor.

        The weight ``k`` sits on the controller move; since the arena
        alternates, every cycle has as many adversary moves as controller
        moves, and the per-sample average is twice the per-move average.
        """
        owner = {}
        edges = []
        for x in model.states:
            owner[("R", x)] = MAX
        for x, k, y in sorted(model.edges):
            node = ("C", x, k)
            if node not in owner:
                owner[node] = MIN
                edges.append((("R", x), node, k))
            edges.append((node, ("R", y), 0))
        return cls(owner, edges, labels={("R", x): x for x in model.states})


def solve_mean_payoff(game: MeanPayoffGame, max_iter: int = 100_000):
    """Optimal positional strategies and per-node values of a mean-payoff game.

    Strategy improvement for the maximizer; each of its strategies is
    evaluated against the minimizer's best response, found by multichain
    policy iteration on (gain, bias).  Weights must be integers; all
    arithmetic is exact.

    Returns
    -------
    values : dict node -> Fraction
    strategy : dict MAX node -> edge (u, v, w) chosen
    counter : dict MIN node -> edge chosen by the best response
    """
    idx = {v: i for i, v in enumerate(game.nodes)}
    src = np.array([idx[u] for u, _, _ in game.edges], dtype=np.int64)
    dst = np.array([idx[v] for _, v, _ in game.edges], dtype=np.int64)
    if any(int(wt) != wt for _, _, wt in game.edges):
        raise MalformedModelError("mean-payoff weights must be integers")
    w = np.array([int(wt) for _, _, wt in game.edges], dtype=np.int64)
    is_max = [game.owner[v] == MAX for v in game.nodes]
    eng = _Engine(len(game.nodes), src, dst, w, is_max)
    pol, p, q = eng.solve(max_iter)
    values = {v: Fraction(int(p[i]), int(q[i])) for i, v in enumerate(game.nodes)}
    pick = {v: game.edges[eng.perm[pol[i]]] for i, v in enumerate(game.nodes)}
    strategy = {v: e for v, e in pick.items() if game.owner[v] == MAX}
    counter = {v: e for v, e in pick.items() if game.owner[v] == MIN}
    return values, strategy, counter


def _traffic_arena(model: TrafficModel):
    """Integer arrays of the controller/adversary arena of a traffic model.

    Regions are nodes ``0..R-1`` (maximizer); each enabled pair ``(x, k)``
    is an adversary node ``R + j``.  Same arena as
    :meth:`MeanPayoffGame.from_traffic_model`, without Python-level nodes.
    """
    index = {x: i for i, x in enumerate(model.states)}
    m = len(model.edges)
    xs = np.fromiter((index[x] for x, _, _ in model.edges), dtype=np.int64, count=m)
    ks = np.fromiter((k for _, k, _ in model.edges), dtype=np.int64, count=m)
    ys = np.fromiter((index[y] for _, _, y in model.edges), dtype=np.int64, count=m)
    R, base = len(model.states), model.kmax + 1
    pairs, inv = np.unique(xs * base + ks, return_inverse=True)
    U = len(pairs)
    src = np.concatenate([pairs // base, R + inv])
    dst = np.concatenate([R + np.arange(U), ys])
    w = np.concatenate([pairs % base, np.zeros(m, dtype=np.int64)])
    is_max = np.arange(R + U) < R
    return src, dst, w, is_max


def mean_payoff_strategy(model: TrafficModel):
    """Self-triggered sampling strategy maximizing the worst-case average inter-sample time.

    Returns ``(value, strategy)``: the guaranteed average over all initial
    regions in units of h, and a map region -> chosen inter-sample time.
    """
    src, dst, w, is_max = _traffic_arena(model)
    R = len(model.states)
    eng = _Engine(len(is_max), src, dst, w, is_max)
    pol, p, q = eng.solve()
    gains = set(zip(p[:R].tolist(), q[:R].tolist()))
    value = 2 * min(Fraction(a, b) for a, b in gains)
    ks = eng.w[pol[:R]]
    strategy = {x: int(k) for x, k in zip(model.states, ks.tolist())}
    return value, strategy


def closed_loop_saist_check(loop: PetcLoop, strategy: dict, trials: int = 1000,
                            horizon: int = 1000, burn_in: int = 0, seed: int = 0,
                            depth: int | None = None) -> Fraction:
    """Minimum average inter-sample time (units of h) over simulated runs of a strategy.

    Each run starts on the unit sphere, samples, looks up the region of the
    sampled state and holds for ``strategy[region]`` checks.  The average is
    taken over samples ``burn_in..horizon-1``.
    """
    if depth is None:
        depth = len(next(iter(strategy)))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((trials, loop.n))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    total = np.zeros(trials, dtype=np.int64)
    keys = np.array(sorted(strategy), dtype=np.int64).reshape(len(strategy), depth)
    acts = np.array([strategy[tuple(k)] for k in sorted(strategy)], dtype=np.int64)
    lookup = {tuple(k): a for k, a in zip(keys.tolist(), acts)}
    for step in range(horizon):
        labels = region_labels(X, loop, depth)
        ks = np.empty(trials, dtype=np.int64)
        for i, lab in enumerate(map(tuple, labels.tolist())):
            try:
                ks[i] = lookup[lab]
            except KeyError:
                raise StrategyCoverageError(f"strategy undefined on region {lab}") from None
        if step >= burn_in:
            total += ks
        X = np.einsum("pij,pj->pi", loop.M[ks - 1], X)
        X /= np.linalg.norm(X, axis=1, keepdims=True)
    return Fraction(int(total.min()), horizon - burn_in)


def format_report(saist_value: Fraction | None = None, cycles: Iterable | None = None,
                  optimized: Fraction | None = None, h: float | None = None) -> str:
    lines = []
    if saist_value is not None:
        lines.append(f"SAIST is {float(saist_value)}")
    if cycles is not None:
        ws = sorted({c[0] for c in cycles}, reverse=True)
        lines.append("Smallest average cycles: {" + ", ".join(str(w) for w in ws) + "}")
    if optimized is not None:
        lines.append(f"Optimized SAIST is {float(optimized)}")
    return "\n".join(lines) + ("\n" if lines else "")
