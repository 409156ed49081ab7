"""Independent brute-force oracles, written for clarity rather than speed."""
import itertools
import random
from fractions import Fraction

from etctraffic.quantitative import MAX, MIN, MeanPayoffGame
from etctraffic.systems import T, T1, TrafficModel


def simple_cycles(n, edges):
    """Every simple cycle as a list of edge indices, each found once from its smallest node."""
    out_edges = [[] for _ in range(n)]
    for i, (u, v, _) in enumerate(edges):
        out_edges[u].append(i)
    found = []

    def walk(start, node, visited, path):
        for i in out_edges[node]:
            v = edges[i][1]
            if v == start:
                found.append(path + [i])
            elif v > start and v not in visited:
                walk(start, v, visited | {v}, path + [i])

    for s in range(n):
        walk(s, s, {s}, [])
    return found


def brute_min_cycle_mean(n, edges):
    means = [Fraction(sum(edges[i][2] for i in c), len(c)) for c in simple_cycles(n, edges)]
    return min(means) if means else None


def brute_min_mean_cycles(n, edges):
    """Minimum mean and the weight sequences of all cycles attaining it."""
    best, weights = None, set()
    for c in simple_cycles(n, edges):
        ws = tuple(edges[i][2] for i in c)
        m = Fraction(sum(ws), len(ws))
        if best is None or m < best:
            best, weights = m, set()
        if m == best:
            weights.add(ws)
    return best, weights


def random_graph(rng, max_nodes=8, wmin=1, wmax=9):
    n = rng.randint(1, max_nodes)
    edges = []
    for u in range(n):
        for _ in range(rng.randint(1, 3)):
            edges.append((u, rng.randrange(n), rng.randint(wmin, wmax)))
    return n, edges


def _play(choice, v):
    seen = []
    while v not in seen:
        seen.append(v)
        v = choice[v][1]
    cyc = seen[seen.index(v):]
    return Fraction(sum(choice[c][2] for c in cyc), len(cyc))


def brute_game_values(game):
    """Max over maximizer positional strategies of min over minimizer positional strategies."""
    outs = {v: [e for e in game.edges if e[0] == v] for v in game.nodes}
    maxn = [v for v in game.nodes if game.owner[v] == MAX]
    minn = [v for v in game.nodes if game.owner[v] == MIN]
    best = {}
    for sm in itertools.product(*[outs[v] for v in maxn]):
        worst = {}
        for sn in itertools.product(*[outs[v] for v in minn]):
            choice = dict(zip(maxn, sm))
            choice.update(zip(minn, sn))
            for v in game.nodes:
                val = _play(choice, v)
                if v not in worst or val < worst[v]:
                    worst[v] = val
        for v in game.nodes:
            if v not in best or worst[v] > best[v]:
                best[v] = worst[v]
    return best


def random_game(rng, max_ctrl=6, max_adv=4):
    nmax, nmin = rng.randint(1, max_ctrl), rng.randint(1, max_adv)
    owner = {**{("a", i): MAX for i in range(nmax)}, **{("b", i): MIN for i in range(nmin)}}
    nodes = list(owner)
    edges = []
    for v in nodes:
        for _ in range(rng.randint(1, 2 if owner[v] == MAX and nmax > 4 else 3)):
            edges.append((v, rng.choice(nodes), rng.randint(-5, 9)))
    return MeanPayoffGame(owner, edges)


def random_traffic_model(rng, kmax, nreg, full=True):
    labels = sorted({(rng.randint(1, kmax),) for _ in range(nreg)})
    edges = []
    for x in labels:
        for k in range(1 if full else x[0], x[0] + 1):
            for y in rng.sample(labels, rng.randint(1, min(2, len(labels)))):
                edges.append((x, k, y))
    return TrafficModel(labels, edges, kmax)


def brute_traffic_value(model):
    """Exhaustive search over k-choices per region: max over strategies of the min cycle mean."""
    choices = [range(1, x[0] + 1) for x in model.states]
    best = None
    for pick in itertools.product(*choices):
        k_of = dict(zip(model.states, pick))
        idx = {x: i for i, x in enumerate(model.states)}
        edges = [(idx[x], idx[y], k) for x, k, y in model.edges if k == k_of[x]]
        # Only cycles reachable from somewhere matter; every region is initial.
        val = brute_min_cycle_mean(len(model.states), edges)
        if best is None or val > best:
            best = val
    return best


def explicit_safety_fixpoint(product):
    """Plain set iteration of the safety operator over explicitly explored states."""
    reach = product.reachable()
    Z = {s for s in reach if sum(o in (T, T1) for o in product.output(s)) <= 1}
    while True:
        new = {s for s in Z
               if any(product.post(s, u) and all(y in Z for y in product.post(s, u))
                      for u in product.actions)}
        if new == Z:
            return Z
        Z = new


def seeded(seed):
    return random.Random(seed)
