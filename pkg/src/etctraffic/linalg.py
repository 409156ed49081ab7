"""Linear-systems numerics for periodic event-triggered control loops.

The closed loop between two samples is ``dx/dt = A x + B K x_held``; over a
hold of ``k`` checking periods the sampled state maps through

    M(kh) = e^{A kh} + (int_0^{kh} e^{A s} ds) B K

and the quadratic trigger ``[x(t); x_held]^T Q [x(t); x_held] > 0`` becomes
the form ``x_held^T N(kh) x_held > 0`` with ``N = [M; I]^T Q [M; I]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "DimensionError",
    "ParameterError",
    "LtiPlant",
    "QuadraticTrigger",
    "PetcLoop",
    "TransitionMatrices",
    "matrix_exponential",
    "discretize",
    "hold_transition_matrix",
    "trigger_form",
    "transition_matrices",
    "relative_trigger",
    "lyapunov_trigger",
]


class DimensionError(ValueError):
    """Matrix shapes are inconsistent."""


class ParameterError(ValueError):
    """A scalar parameter is out of its admissible range."""


# Pade(13) numerator coefficients and the 1-norm bound under which no
# scaling is needed (Higham, SIAM J. Matrix Anal. Appl. 26, 2005).
_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)
_THETA13 = 5.371920351148152


def matrix_exponential(A, t: float = 1.0) -> np.ndarray:
    """Return ``exp(A t)`` by scaling and squaring with a degree-13 Pade approximant.

    Parameters
    ----------
    A : array_like, shape (n, n)
    t : float
        Time scaling applied to ``A`` before exponentiation.

    Raises
    ------
    DimensionError
        If ``A`` is not square.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"matrix exponential needs a square matrix, got shape {A.shape}")
    if not np.isfinite(t):
        raise ParameterError("t must be finite")
    X = A * t
    n = X.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    norm = np.linalg.norm(X, 1)
    s = 0
    if norm > _THETA13:
        s = int(np.ceil(np.log2(norm / _THETA13)))
        X = X / 2.0**s

    b = _PADE13
    ident = np.eye(n)
    X2 = X @ X
    X4 = X2 @ X2
    X6 = X4 @ X2
    U = X @ (X6 @ (b[13] * X6 + b[11] * X4 + b[9] * X2)
             + b[7] * X6 + b[5] * X4 + b[3] * X2 + b[1] * ident)
    V = (X6 @ (b[12] * X6 + b[10] * X4 + b[8] * X2)
         + b[6] * X6 + b[4] * X4 + b[2] * X2 + b[0] * ident)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def discretize(A, B, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold pair ``(e^{At}, int_0^t e^{As} ds B)``.

    Both blocks come out of a single exponential of ``[[A, B], [0, 0]] t``,
    which stays exact for singular ``A``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n, m = A.shape[0], B.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A
    aug[:n, n:] = B
    E = matrix_exponential(aug, t)
    return E[:n, :n], E[:n, n:]


@dataclass(frozen=True, eq=False)
class LtiPlant:
    """State-feedback plant ``dx/dt = A x + B u`` with ``u = K x``."""

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        n = A.shape[0]
        if B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {B.shape}")
        if K.shape != (B.shape[1], n):
            raise DimensionError(f"K must be {B.shape[1]}x{n}, got {K.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "K", K)

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True, eq=False)
class QuadraticTrigger:
    """Trigger when ``[x(t); x_held]^T Q [x(t); x_held] > 0``, checked every ``h``.

    ``kmax`` is the heartbeat: a sample is forced after ``kmax`` checks.
    """

    Q: np.ndarray
    h: float
    kmax: int

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape[0] != Q.shape[1] or Q.shape[0] % 2:
            raise DimensionError(f"Q must be 2n x 2n, got {Q.shape}")
        if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-12:
            raise ParameterError("Q must be symmetric")
        if not self.h > 0:
            raise ParameterError("checking period h must be positive")
        if int(self.kmax) != self.kmax or self.kmax < 1:
            raise ParameterError("kmax must be a positive integer")
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "kmax", int(self.kmax))


@dataclass(frozen=True)
class TransitionMatrices:
    """``M[k-1] = M(kh)`` for k = 1..kmax and ``N[k-1] = N(kh)`` for k = 1..kmax-1."""

    M: np.ndarray
    N: np.ndarray


def _check_k(trigger: QuadraticTrigger, k: int, upper: int) -> None:
    if int(k) != k or not 1 <= k <= upper:
        raise ParameterError(f"k must be an integer in 1..{upper}, got {k}")


def hold_transition_matrix(plant: LtiPlant, trigger: QuadraticTrigger, k: int) -> np.ndarray:
    """State reached after holding the input for ``k`` checking periods."""
    _check_k(trigger, k, trigger.kmax)
    Ad, Bd = discretize(plant.A, plant.B, k * trigger.h)
    return Ad + Bd @ plant.K


def _form(M: np.ndarray, Q: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    S = np.vstack([M, np.eye(n)])
    N = S.T @ Q @ S
    return 0.5 * (N + N.T)


def trigger_form(plant: LtiPlant, trigger: QuadraticTrigger, k: int) -> np.ndarray:
    """Quadratic form ``N(kh)`` whose positivity at the sampled state means a trigger at step k.

    At ``k == kmax`` the heartbeat fires unconditionally, so no form exists;
    callers must treat that step as "always triggers".
    """
    if k == trigger.kmax:
        raise ParameterError("k = kmax always triggers and has no trigger form")
    _check_k(trigger, k, trigger.kmax - 1)
    return _form(hold_transition_matrix(plant, trigger, k), trigger.Q)


def transition_matrices(plant: LtiPlant, trigger: QuadraticTrigger) -> TransitionMatrices:
    """All ``M(kh)`` and ``N(kh)`` of a loop.

    ``M`` is propagated by the one-step recursion ``[Ad(h), Bd(h)]`` on the
    augmented state, which is exact and avoids ``kmax`` exponentials.
    """
    n, kmax = plant.n, trigger.kmax
    Ad, Bd = discretize(plant.A, plant.B, trigger.h)
    BdK = Bd @ plant.K
    M = np.empty((kmax, n, n))
    Ak = np.eye(n)
    Bk = np.zeros((n, n))
    for k in range(kmax):
        # M((k+1)h) = Ad M(kh) + BdK since the held input is constant.
        Ak, Bk = Ad @ Ak, Ad @ Bk + BdK
        M[k] = Ak + Bk
    N = np.array([_form(M[k], trigger.Q) for k in range(kmax - 1)]).reshape(kmax - 1, n, n)
    return TransitionMatrices(M=M, N=N)


@dataclass(frozen=True, eq=False)
class PetcLoop:
    """A linear plant under a quadratic periodic event-triggered sampler."""

    plant: LtiPlant
    trigger: QuadraticTrigger
    name: str = field(default="loop")

    def __post_init__(self):
        if self.trigger.Q.shape[0] != 2 * self.plant.n:
            raise DimensionError(
                f"trigger Q is {self.trigger.Q.shape}, plant needs {2 * self.plant.n}x{2 * self.plant.n}"
            )

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def h(self) -> float:
        return self.trigger.h

    @property
    def kmax(self) -> int:
        return self.trigger.kmax

    @cached_property
    def matrices(self) -> TransitionMatrices:
        return transition_matrices(self.plant, self.trigger)

    @property
    def M(self) -> np.ndarray:
        return self.matrices.M

    @property
    def N(self) -> np.ndarray:
        return self.matrices.N

    @cached_property
    def step_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """One-period ZOH pair ``(Ad(h), Bd(h) K)`` used by the simulator."""
        Ad, Bd = discretize(self.plant.A, self.plant.B, self.h)
        return Ad, Bd @ self.plant.K


def relative_trigger(n: int, sigma: float) -> np.ndarray:
    """Q of ``|x - x_held|^2 - sigma |x|^2``, as laid out ``[x; x_held]``.

    With ``sigma = 0.05`` the top-left block is ``0.95 I``.
    """
    eye = np.eye(n)
    return np.block([[(1.0 - sigma) * eye, -eye], [-eye, eye]])


def lyapunov_trigger(plant: LtiPlant, h: float, P, Q_lyap, rho: float) -> np.ndarray:
    """Q of a predictive Lyapunov-decay trigger.

    With the one-step prediction ``z = Ad(h) x + Bd(h) K x_held``, the loop
    samples once the Lyapunov derivative of the held-input dynamics at ``z``
    exceeds a ``rho`` fraction of the nominal decay:

        2 z^T P (A z + B K x_held) + rho z^T Q_lyap z > 0

    The result is expressed as a form on ``[x; x_held]``.
    """
    P = np.asarray(P, dtype=float)
    Q_lyap = np.asarray(Q_lyap, dtype=float)
    n = plant.n
    A, BK = plant.A, plant.B @ plant.K
    Ad, Bd = discretize(plant.A, plant.B, h)
    # Form on [z; x_held].
    inner = np.block([
        [A.T @ P + P @ A + rho * Q_lyap, P @ BK],
        [BK.T @ P, np.zeros((n, n))],
    ])
    lift = np.block([[Ad, Bd @ plant.K], [np.zeros((n, n)), np.eye(n)]])
    Q = lift.T @ inner @ lift
    return 0.5 * (Q + Q.T)
