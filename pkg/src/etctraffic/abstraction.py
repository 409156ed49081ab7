"""Traffic abstraction of linear PETC loops.

Regions are cones of sampled states labelled by their next ``l``
inter-sample times.  Membership is decided by simulating the trigger; the
region sets themselves are never represented geometrically.  Non-emptiness
of a region (or of a transition ``x in R_i, M(kh) x in R_j``) is a
conjunction of homogeneous quadratic sign conditions, handled by a backend:

* :class:`SphereSweep` looks for witnesses on a low-discrepancy sphere grid;
* :class:`AngularPartition` (planar loops only) computes every boundary ray
  of the depth-l partition and samples each arc, so it never misses a
  region of positive measure.

Emptiness is certified by eigenvalue tests and optionally by an S-procedure
LMI (semidefinite relaxation).
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .linalg import PetcLoop
from .systems import TrafficModel

__all__ = [
    "Status",
    "Emptiness",
    "UndefinedStateError",
    "inter_sample_k",
    "inter_sample_ks",
    "region_labels",
    "region_of",
    "region_membership",
    "label_constraints",
    "SphereSweep",
    "AngularPartition",
    "default_backend",
    "region_nonempty",
    "compute_regions",
    "compute_transitions",
    "build_traffic_model",
]

log = logging.getLogger(__name__)

# A form value within this band (on the unit sphere) counts as triggered.
TIE_TOL = 1e-12
_CHUNK = 1 << 16


class UndefinedStateError(ValueError):
    """The origin lies in every cone and has no region."""


class Status(enum.Enum):
    NONEMPTY = "nonempty"
    EMPTY = "empty"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Emptiness:
    status: Status
    witness: np.ndarray | None = None
    certificate: str | None = None

    @property
    def possibly_nonempty(self) -> bool:
        return self.status is not Status.EMPTY


def _unit_rows(X: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))[:, None]
    if not norms.all():
        raise UndefinedStateError("the origin belongs to every region")
    return X / norms


def _form_coefficients(loop: PetcLoop) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows ``i, j`` of the upper triangle and coefficients so that
    ``x^T N x = sum_m C[k, m] x_i[m] x_j[m]``; one matmul then evaluates every form."""
    cache = loop.__dict__.setdefault("_form_cache", {})
    if "coef" not in cache:
        n = loop.n
        iu, ju = np.triu_indices(n)
        C = loop.N[:, iu, ju] * np.where(iu == ju, 1.0, 2.0)
        cache["coef"] = (iu, ju, C)
    return cache["coef"]


def inter_sample_ks(X, loop: PetcLoop) -> np.ndarray:
    """Vectorized :func:`inter_sample_k` over the rows of ``X``."""
    X = _unit_rows(np.atleast_2d(np.asarray(X, dtype=float)))
    kmax = loop.kmax
    if kmax == 1:
        return np.ones(len(X), dtype=np.int64)
    out = np.empty(len(X), dtype=np.int64)
    iu, ju, C = _form_coefficients(loop)
    for lo in range(0, len(X), _CHUNK):
        Y = X[lo:lo + _CHUNK]
        vals = (Y[:, iu] * Y[:, ju]) @ C.T
        fired = vals > -TIE_TOL
        any_fired = fired.any(axis=1)
        out[lo:lo + _CHUNK] = np.where(any_fired, fired.argmax(axis=1) + 1, kmax)
    return out


def inter_sample_k(x, loop: PetcLoop) -> int:
    """Number of checking periods until the trigger fires from sampled state ``x``.

    Smallest ``k < kmax`` with ``x^T N(kh) x > 0``, else ``kmax``.
    """
    x = np.asarray(x, dtype=float).ravel()
    if not np.any(x):
        raise UndefinedStateError("the origin belongs to every region")
    return int(inter_sample_ks(x[None, :], loop)[0])


def region_labels(X, loop: PetcLoop, depth: int) -> np.ndarray:
    """Depth-``depth`` labels of the rows of ``X``, shape ``(len(X), depth)``."""
    Y = _unit_rows(np.atleast_2d(np.asarray(X, dtype=float)))
    out = np.empty((len(Y), depth), dtype=np.int64)
    for d in range(depth):
        k = inter_sample_ks(Y, loop)
        out[:, d] = k
        if d + 1 < depth:
            Y = _unit_rows(np.einsum("pij,pj->pi", loop.M[k - 1], Y))
    return out


def region_of(x, loop: PetcLoop, depth: int) -> tuple[int, ...]:
    x = np.asarray(x, dtype=float).ravel()
    if not np.any(x):
        raise UndefinedStateError("the origin belongs to every region")
    return tuple(int(k) for k in region_labels(x[None, :], loop, depth)[0])


def region_membership(x, label: tuple[int, ...], loop: PetcLoop) -> bool:
    return region_of(x, loop, len(label)) == tuple(label)


def label_constraints(label: tuple[int, ...], loop: PetcLoop, pre: np.ndarray | None = None):
    """Quadratic sign conditions describing ``{x : pre x in R_label}``.

    Returns ``(positive, nonpositive)``: lists of symmetric matrices ``S``
    with ``x^T S x > 0`` respectively ``<= 0`` required.
    """
    n = loop.n
    T = np.eye(n) if pre is None else np.asarray(pre, dtype=float)
    pos, neg = [], []
    for k in label:
        if k < loop.kmax:
            pos.append(T.T @ loop.N[k - 1] @ T)
        neg.extend(T.T @ loop.N[j - 1] @ T for j in range(1, k))
        T = loop.M[k - 1] @ T
    return pos, neg


def _eigen_certificate(pos, neg) -> str | None:
    for S in pos:
        if np.linalg.eigvalsh(S)[-1] <= 0:
            return "form required positive is negative semidefinite"
    for S in neg:
        if np.linalg.eigvalsh(S)[0] > 0:
            return "form required nonpositive is positive definite"
    return None


def _sdr_certificate(pos, neg) -> str | None:
    """S-procedure emptiness certificate via an LMI feasibility problem.

    With nonnegative multipliers ``a`` (sum one) on the strict conditions and
    ``b`` on the non-strict ones, ``sum a_i P_i - sum b_j N_j <= 0`` rules out
    any x satisfying all conditions.  Without strict conditions the matrix
    must be negative definite.
    """
    import cvxpy as cp

    if not pos and not neg:
        return None
    n = (pos or neg)[0].shape[0]
    a = cp.Variable(len(pos), nonneg=True) if pos else None
    b = cp.Variable(len(neg), nonneg=True) if neg else None
    expr = 0
    if pos:
        expr = expr + sum(a[i] * pos[i] for i in range(len(pos)))
    if neg:
        expr = expr - sum(b[j] * neg[j] for j in range(len(neg)))
    margin = 1e-7
    cons = []
    if pos:
        cons.append(cp.sum(a) == 1)
        cons.append(expr << -margin * np.eye(n))
    else:
        cons.append(cp.sum(b) == 1)
        cons.append(expr << -margin * np.eye(n))
    prob = cp.Problem(cp.Minimize(0), cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        return None
    if prob.status != cp.OPTIMAL:
        return None
    # Re-verify the multipliers in floating point; solver tolerances are not a proof.
    S = np.zeros((n, n))
    if pos:
        S += sum(max(float(v), 0.0) * P for v, P in zip(a.value, pos))
    if neg:
        S -= sum(max(float(v), 0.0) * N for v, N in zip(b.value, neg))
    top = np.linalg.eigvalsh(0.5 * (S + S.T))[-1]
    if top < 0:
        return "S-procedure multipliers"
    return None


class SphereSweep:
    """Witness search on a deterministic low-discrepancy covering of the unit sphere.

    Regions are cones symmetric under ``x -> -x``, so planar loops are swept
    over half a circle with evenly spaced angles; higher dimensions use a
    scrambled Sobol sequence pushed through the Gaussian quantile.
    """

    complete = False

    def __init__(self, n_points: int = 100_000, seed: int = 0, use_sdr: bool = False):
        self.n_points = int(n_points)
        self.seed = seed
        self.use_sdr = use_sdr
        self._cache: dict = {}

    def points(self, loop: PetcLoop, depth: int) -> np.ndarray:
        key = ("pts", loop.n)
        if key not in self._cache:
            n = loop.n
            if n == 1:
                pts = np.ones((1, 1))
            elif n == 2:
                th = (np.arange(self.n_points) + 0.5) * (np.pi / self.n_points)
                pts = np.column_stack([np.cos(th), np.sin(th)])
            else:
                from scipy.stats import norm, qmc

                m = max(int(np.ceil(np.log2(self.n_points))), 1)
                u = qmc.Sobol(d=n, scramble=True, seed=self.seed).random_base2(m)
                g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
                pts = _unit_rows(g)
            self._cache[key] = pts
        return self._cache[key]

    def transition_points(self, loop: PetcLoop, depth: int, k: int) -> np.ndarray:
        return self.points(loop, depth)

    def certify_empty(self, pos, neg) -> str | None:
        cert = _eigen_certificate(pos, neg)
        if cert is None and self.use_sdr:
            cert = _sdr_certificate(pos, neg)
        return cert


def _angles(V: np.ndarray) -> np.ndarray:
    return np.mod(np.arctan2(V[:, 1], V[:, 0]), np.pi)


def _directions(theta: np.ndarray) -> np.ndarray:
    return np.column_stack([np.cos(theta), np.sin(theta)])


def _form_roots(S: np.ndarray) -> np.ndarray:
    """Angles in [0, pi) where the direction (cos, sin) annihilates the form S."""
    a, b, c = S[0, 0], S[0, 1], S[1, 1]
    scale = max(abs(a), abs(b), abs(c))
    if scale == 0:
        return np.empty(0)
    a, b, c = a / scale, b / scale, c / scale
    roots = []
    if abs(c) < 1e-14:
        roots.append(np.pi / 2)
        if abs(b) > 1e-14:
            roots.append(np.arctan(-a / (2 * b)))
    else:
        disc = b * b - a * c
        if disc >= 0:
            sq = np.sqrt(disc)
            roots.extend(np.arctan([(-b + sq) / c, (-b - sq) / c]))
    return np.mod(np.asarray(roots, dtype=float), np.pi)


def _midpoints(breaks: np.ndarray, min_gap: float = 1e-13) -> np.ndarray:
    b = np.unique(np.mod(breaks, np.pi))
    if len(b) == 0:
        return np.array([np.pi / 4])
    nxt = np.append(b[1:], b[0] + np.pi)
    gap = nxt - b
    keep = gap > min_gap
    return np.mod(0.5 * (b[keep] + nxt[keep]), np.pi)


class AngularPartition:
    """Exact boundary computation for planar loops.

    The depth-1 partition of the projective circle is cut by the roots of
    the forms ``N(kh)``.  A depth-l boundary is either a depth-1 boundary or
    the preimage, under the linear map ``M(k1 h)`` of the first inter-sample
    time, of a depth-(l-1) boundary.  Sampling one point per arc therefore
    hits every region of positive measure; likewise, adding the preimages of
    the boundaries under ``M(kh)`` hits every transition taken with action k.
    A fixed coarse sweep is always added as a safeguard.
    """

    complete = True

    def __init__(self, coarse: int = 4096, use_sdr: bool = False):
        self.coarse = int(coarse)
        self.use_sdr = use_sdr
        self._cache: dict = {}

    def _check(self, loop: PetcLoop):
        if loop.n != 2:
            raise ValueError("AngularPartition only handles planar loops; use SphereSweep")

    def _pullback(self, loop: PetcLoop, k: int, theta: np.ndarray) -> np.ndarray:
        M = loop.M[k - 1]
        if abs(np.linalg.det(M)) < 1e-300:
            return np.empty(0)
        return _angles(np.linalg.solve(M, _directions(theta).T).T)

    def breakpoints(self, loop: PetcLoop, depth: int) -> np.ndarray:
        self._check(loop)
        key = ("brk", id(loop), depth)
        if key in self._cache:
            return self._cache[key]
        if depth == 1:
            roots = [_form_roots(N) for N in loop.N]
            b = np.unique(np.concatenate(roots)) if roots else np.empty(0)
        else:
            base = self.breakpoints(loop, 1)
            prev = self.breakpoints(loop, depth - 1)
            parts = [base]
            for k in range(1, loop.kmax + 1):
                pulled = self._pullback(loop, k, prev)
                if len(pulled) == 0:
                    continue
                # A pulled-back ray only matters where the first inter-sample
                # time is k; test both sides so rays on a depth-1 boundary survive.
                d = 1e-9
                k_lo = inter_sample_ks(_directions(pulled - d), loop)
                k_hi = inter_sample_ks(_directions(pulled + d), loop)
                parts.append(pulled[(k_lo == k) | (k_hi == k)])
            b = np.unique(np.concatenate(parts))
        self._cache[key] = b
        return b

    def _coarse(self) -> np.ndarray:
        return (np.arange(self.coarse) + 0.5) * (np.pi / self.coarse)

    def points(self, loop: PetcLoop, depth: int) -> np.ndarray:
        theta = np.concatenate([_midpoints(self.breakpoints(loop, depth)), self._coarse()])
        return _directions(theta)

    def transition_points(self, loop: PetcLoop, depth: int, k: int) -> np.ndarray:
        b = self.breakpoints(loop, depth)
        theta = np.concatenate([_midpoints(np.concatenate([b, self._pullback(loop, k, b)])),
                                self._coarse()])
        return _directions(theta)

    def certify_empty(self, pos, neg) -> str | None:
        cert = _eigen_certificate(pos, neg)
        if cert is None and self.use_sdr:
            cert = _sdr_certificate(pos, neg)
        return cert


def default_backend(loop: PetcLoop):
    return AngularPartition() if loop.n == 2 else SphereSweep(use_sdr=True)


class _WitnessIndex:
    """Labels observed on the backend's sample points, with one witness each."""

    def __init__(self, loop: PetcLoop, backend, depth: int):
        X = backend.points(loop, depth)
        L = region_labels(X, loop, depth)
        self.by_prefix: list[dict] = []
        for d in range(1, depth + 1):
            first = _unique_rows(L[:, :d], loop.kmax)
            self.by_prefix.append({tuple(L[i, :d].tolist()): X[i] for i in first})

    def get(self, label):
        return self.by_prefix[len(label) - 1].get(tuple(label))


def region_nonempty(label, loop: PetcLoop, backend=None, _index: _WitnessIndex | None = None) -> Emptiness:
    """Decide whether the region ``label`` contains a nonzero state."""
    label = tuple(int(k) for k in label)
    if not all(1 <= k <= loop.kmax for k in label):
        return Emptiness(Status.EMPTY, certificate="label out of range")
    backend = backend or default_backend(loop)
    index = _index or _WitnessIndex(loop, backend, len(label))
    x = index.get(label)
    if x is not None:
        return Emptiness(Status.NONEMPTY, witness=x)
    if backend.complete:
        return Emptiness(Status.EMPTY, certificate="exhaustive boundary arrangement")
    cert = backend.certify_empty(*label_constraints(label, loop))
    if cert is not None:
        return Emptiness(Status.EMPTY, certificate=cert)
    return Emptiness(Status.UNKNOWN)


def compute_regions(loop: PetcLoop, depth: int, backend=None, return_status: bool = False):
    """All depth-``depth`` labels not certified empty, grown breadth-first by prefix."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    backend = backend or default_backend(loop)
    index = _WitnessIndex(loop, backend, depth)
    status: dict = {}
    frontier = [()]
    for d in range(1, depth + 1):
        nxt = []
        for prefix in frontier:
            for k in range(1, loop.kmax + 1):
                label = prefix + (k,)
                # The tail of a label is the region reached after k1 checks; tails
                # were all settled one level up, unexamined ones had an empty prefix.
                if d > 1 and not (label[1:] in status and status[label[1:]].possibly_nonempty):
                    continue
                res = region_nonempty(label, loop, backend, index)
                status[label] = res
                if res.possibly_nonempty:
                    nxt.append(label)
        frontier = nxt
    regions = set(frontier)
    unknown = sum(status[r].status is Status.UNKNOWN for r in regions)
    if unknown:
        log.warning("%d of %d regions could neither be witnessed nor refuted", unknown, len(regions))
    if return_status:
        return regions, {r: status[r] for r in regions}
    return regions


def _actions(label, etc_only: bool) -> range:
    return range(label[0], label[0] + 1) if etc_only else range(1, label[0] + 1)


def _unique_rows(L: np.ndarray, kmax: int) -> np.ndarray:
    """Index of the first occurrence of each distinct row of an integer label array."""
    base = kmax + 1
    if L.shape[1] * np.log2(base) < 62:
        key = L @ (base ** np.arange(L.shape[1], dtype=np.int64))
        _, first = np.unique(key, return_index=True)
    else:
        _, first = np.unique(L, axis=0, return_index=True)
    return first


def compute_transitions(loop: PetcLoop, regions: Iterable[tuple], etc_only: bool = True,
                        backend=None, conservative: bool = False) -> set:
    """Edges ``(R_i, k, R_j)`` witnessed by a state of ``R_i`` mapped by ``M(kh)`` into ``R_j``.

    Labels first met as images of witnesses are real regions the backend's
    sampling missed; they are added and closed under the same witness
    propagation, so the returned edges may mention regions beyond
    ``regions``.  Regions without any witness (status unknown) get every
    target the certifier cannot refute; ``conservative=True`` does that for
    all pairs.
    """
    regions = sorted(set(regions))
    if not regions:
        return set()
    depth = len(regions[0])
    backend = backend or default_backend(loop)
    known = set(regions)
    witness: dict = {}
    edges: set = set()
    for k in range(1, loop.kmax + 1):
        X = backend.transition_points(loop, depth, k)
        k1 = inter_sample_ks(X, loop)
        ok = k1 == k if etc_only else k1 >= k
        if not ok.any():
            continue
        X = X[ok]
        # One extra label entry is the natural successor's label for free.
        L = region_labels(X, loop, depth + 1)
        src = L[:, :depth]
        dst = L[:, 1:].copy()
        Y = X @ loop.M[k - 1].T
        early = L[:, 0] != k
        if early.any():
            dst[early] = region_labels(Y[early], loop, depth)
        pairs = _unique_rows(np.hstack([src, dst]), loop.kmax)
        for row in np.hstack([src[pairs], dst[pairs]]).tolist():
            edges.add((tuple(row[:depth]), k, tuple(row[depth:])))
        for lab, pts in ((src, X), (dst, Y)):
            for i in _unique_rows(lab, loop.kmax):
                witness.setdefault(tuple(lab[i].tolist()), pts[i])

    index = _WitnessIndex(loop, backend, depth)
    for r in regions:
        x = index.get(r)
        if x is not None:
            witness.setdefault(r, x)

    # Close the region set under witnessed successors.
    queue = [b for b in {e[2] for e in edges} | {e[0] for e in edges} if b not in known]
    while queue:
        r = queue.pop()
        if r in known:
            continue
        known.add(r)
        log.info("region %s found only as a transition image", r)
        for k in _actions(r, etc_only):
            y = loop.M[k - 1] @ witness[r]
            b = region_of(y, loop, depth)
            edges.add((r, k, b))
            if b not in witness:
                witness[b] = y
            if b not in known:
                queue.append(b)

    have = {(a, k) for a, k, _ in edges}
    targets = sorted(known)
    for r in sorted(known):
        for k in _actions(r, etc_only):
            if (r, k) in have and not conservative:
                continue
            if r in witness and not conservative:
                edges.add((r, k, region_of(loop.M[k - 1] @ witness[r], loop, depth)))
                continue
            pos, neg = label_constraints(r, loop)
            for target in targets:
                if (r, k, target) in edges:
                    continue
                p2, n2 = label_constraints(target, loop, pre=loop.M[k - 1])
                if backend.certify_empty(pos + p2, neg + n2) is None:
                    edges.add((r, k, target))
    return edges


def build_traffic_model(loop: PetcLoop, depth: int = 1, etc_only: bool = True,
                        backend=None, conservative: bool = False) -> TrafficModel:
    backend = backend or default_backend(loop)
    regions = compute_regions(loop, depth, backend)
    edges = compute_transitions(loop, regions, etc_only, backend, conservative)
    states = set(regions) | {e[0] for e in edges} | {e[2] for e in edges}
    return TrafficModel(states, edges, loop.kmax, loop.h)
