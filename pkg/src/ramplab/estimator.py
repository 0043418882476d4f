"""Adaptive estimator of the bottleneck critical point.

The estimator fits the concave law ``q = a*rho**2 + b*rho`` to streaming
``(rho, q)`` measurements with a recursive least-squares gain. Its parameters
live in a 4x2 matrix ``Pi_hat`` so that ``u_e = Pi_hat.T @ v`` is the negated
prediction of ``y = [q, rho]``; the top block of ``Pi_hat`` is ``-B_hat.T``
with ``B_hat = [[-a, b], [0, 1]]``.

Per step, with ``e = y + Pi_hat.T @ v``:

    Pi_hat <- Pi_hat - g * Gamma v e^T
    Gamma  <- Gamma  - g * Gamma v v^T Gamma

where ``g = dt`` unless ``dt * v^T Gamma v >= 1``, in which case both updates
are shrunk by the same factor. Using one factor for both keeps the recursion an
exact weighted least-squares solve (see :func:`rls_weight`).

The critical point is read from ``B_hat``: ``rho* = B12 / (2 B11)`` and
``q* = B12**2 / (4 B11)``. A pair of mass-spring-damper reference models
smooths the estimates for logging.

Time is in hours, density in veh/km/lane, flow in veh/h.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "EstimatorError",
    "ReferenceModelParams",
    "EstimatorState",
    "init_estimator",
    "estimator_step",
    "extract_setpoints",
    "reference_matrices",
    "input_matrix",
    "regressor",
    "adapt_gain",
    "adapt_parameters",
    "rls_weight",
    "lsq_batch_oracle",
    "excitation_diagnostic",
    "ExcitationMonitor",
    "RHO_STAR_BOUNDS",
    "GAMMA_GUARD",
]

RHO_STAR_BOUNDS = (5.0, 120.0)
# Largest fraction of the gain along v that one guarded update may remove.
GAMMA_GUARD = 0.99


class EstimatorError(ArithmeticError):
    """Non-finite value produced inside :func:`estimator_step`."""

    def __init__(self, stage: str, step: int | None = None):
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite value in estimator stage '{stage}'{where}")
        self.stage = stage
        self.step = step


@dataclass(frozen=True)
class ReferenceModelParams:
    K_r: float = 10.0  # spring
    C_r: float = 2.0  # damper

    def __post_init__(self) -> None:
        if not self.K_r > 0:
            raise ValueError("K_r must be positive")
        if not self.C_r > 0:
            raise ValueError("C_r must be positive")


def reference_matrices(ref: ReferenceModelParams) -> tuple[np.ndarray, np.ndarray]:
    """``(A_r, B_r)`` of two stacked mass-spring-damper models.

    Each block has state ``[velocity, position]`` and input ``r``:
    ``vel' = -C_r*vel - K_r*(pos - r)``, ``pos' = vel``. The full state is
    ``[dq, q_ref, drho, rho_ref]`` and the positions settle on ``r``.
    """
    block = np.array([[-ref.C_r, -ref.K_r], [1.0, 0.0]])
    A = np.zeros((4, 4))
    A[:2, :2] = block
    A[2:, 2:] = block
    B = np.zeros((4, 2))
    B[0, 0] = ref.K_r
    B[2, 1] = ref.K_r
    return A, B


def input_matrix(a: float, b: float) -> np.ndarray:
    """``[[-a, b], [0, 1]]`` for the parabola ``q = a*rho**2 + b*rho``."""
    return np.array([[-a, b], [0.0, 1.0]])


def regressor(rho: float) -> np.ndarray:
    """Regressor ``[-rho**2, rho, 0, 0]``.

    The last two slots belong to the ``C_hat`` block, which the parabola does
    not need; they stay zero so that block and its gain are left untouched.
    """
    return np.array([-rho * rho, rho, 0.0, 0.0])


def adapt_gain(Gamma: np.ndarray, v: np.ndarray, dt: float) -> tuple[np.ndarray, float]:
    """Guarded Euler step of ``dGamma/dt = -Gamma v v^T Gamma``.

    Returns the new gain and the step weight ``g`` actually used. ``g`` is
    ``dt`` unless ``dt * v^T Gamma v >= 1``; then it is cut to
    ``GAMMA_GUARD / (v^T Gamma v)`` so ``Gamma`` stays positive definite.

    >>> G, g = adapt_gain(20.0 * np.eye(4), np.array([1.0, 0, 0, 0]), 1 / 360)
    >>> round(float(G[0, 0]), 6)
    18.888889
    """
    Gv = Gamma @ v
    quad = float(v @ Gv)
    g = dt
    if dt * quad >= 1.0:
        g = GAMMA_GUARD / quad
    G = Gamma - g * np.outer(Gv, Gv)
    return 0.5 * (G + G.T), g


def adapt_parameters(Pi_hat: np.ndarray, Gamma: np.ndarray, v: np.ndarray, e: np.ndarray, g: float) -> np.ndarray:
    """``Pi_hat - g * Gamma v e^T`` using the gain *before* its own update."""
    return Pi_hat - g * np.outer(Gamma @ v, e)


def rls_weight(g: float, quad: float) -> float:
    """Sample weight implied by one guarded step.

    With ``quad = v^T Gamma v`` taken before the update, ``Gamma^-1`` grows by
    exactly ``c * v v^T`` where ``c = g / (1 - g*quad)``.
    """
    return g / (1.0 - g * quad)


@dataclass
class EstimatorState:
    Pi_hat: np.ndarray  # (4, 2)
    Gamma: np.ndarray  # (4, 4)
    X: np.ndarray  # (2,) [int q dt (veh), int rho dt (veh h/km/lane)]
    X_r: np.ndarray  # (4,) reference-model state
    rho_star_hat: float
    q_star_hat: float
    ref: ReferenceModelParams = field(default_factory=ReferenceModelParams)
    scale: tuple[float, float] = (1.0, 1.0)  # (rho, q) pre-scaler divisors
    e: np.ndarray = field(default_factory=lambda: np.zeros(2))
    k: int = 0

    @property
    def B_hat(self) -> np.ndarray:
        return -self.Pi_hat[:2].T

    @property
    def C_hat(self) -> np.ndarray:
        return -self.Pi_hat[2:].T

    def copy(self) -> "EstimatorState":
        return replace(
            self,
            Pi_hat=self.Pi_hat.copy(),
            Gamma=self.Gamma.copy(),
            X=self.X.copy(),
            X_r=self.X_r.copy(),
            e=self.e.copy(),
        )


def init_estimator(
    rho_star_0: float,
    q_star_0: float,
    Gamma_0: float = 20.0,
    ref: ReferenceModelParams | None = None,
    scale: tuple[float, float] = (1.0, 1.0),
) -> EstimatorState:
    """Fresh estimator centred on the nominal critical point ``(rho_star_0, q_star_0)``.

    ``B_hat`` starts from the parabola whose maximum is that point,
    ``C_hat = inv(B_hat)`` and ``Gamma = Gamma_0 * I``. ``scale`` divides
    density and flow before they enter the regression.
    """
    if not (rho_star_0 > 0 and q_star_0 > 0):
        raise ValueError("initial critical point must be strictly positive")
    if not Gamma_0 > 0:
        raise ValueError("Gamma_0 must be positive")
    s_rho, s_q = scale
    if not (s_rho > 0 and s_q > 0):
        raise ValueError("pre-scaler entries must be positive")
    ref = ref or ReferenceModelParams()
    x0, y0 = rho_star_0 / s_rho, q_star_0 / s_q
    B0 = input_matrix(-y0 / x0**2, 2.0 * y0 / x0)
    Pi_hat = np.vstack((-B0.T, -np.linalg.inv(B0).T))
    return EstimatorState(
        Pi_hat=Pi_hat,
        Gamma=Gamma_0 * np.eye(4),
        X=np.zeros(2),
        X_r=np.array([0.0, q_star_0, 0.0, rho_star_0]),
        rho_star_hat=float(rho_star_0),
        q_star_hat=float(q_star_0),
        ref=ref,
        scale=(float(s_rho), float(s_q)),
    )


def extract_setpoints(state: EstimatorState) -> tuple[float, float]:
    """Critical point ``(rho*, q*)`` encoded by ``B_hat``, in physical units.

    Returns the state's current estimates when ``B_hat`` does not describe a
    concave parabola. ``rho*`` is clamped to :data:`RHO_STAR_BOUNDS`.
    """
    B = state.B_hat
    b11, b12 = float(B[0, 0]), float(B[0, 1])
    if not b11 > 0:
        return state.rho_star_hat, state.q_star_hat
    s_rho, s_q = state.scale
    lo, hi = RHO_STAR_BOUNDS
    rho_star = min(max(b12 / (2.0 * b11) * s_rho, lo), hi)
    q_star = b12**2 / (4.0 * b11) * s_q
    return rho_star, q_star


def _finite(stage: str, k: int, *arrays) -> None:
    for arr in arrays:
        if not np.isfinite(arr).all():
            raise EstimatorError(stage, k)


def estimator_step(
    state: EstimatorState, rho_meas: float, q_meas: float, dt: float
) -> tuple[EstimatorState, float, float]:
    """Feed one ``(rho, q)`` measurement; return the new state and estimates."""
    if rho_meas < 0 or q_meas < 0:
        raise ValueError("measurements must be non-negative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    s = state.copy()
    k = s.k
    A_r, B_r = reference_matrices(s.ref)

    s.X = s.X + dt * np.array([q_meas, rho_meas])
    r_hat = np.array([s.q_star_hat, s.rho_star_hat])
    s.X_r = s.X_r + dt * (A_r @ s.X_r + B_r @ r_hat)
    _finite("integrate", k, s.X, s.X_r)

    s_rho, s_q = s.scale
    x = rho_meas / s_rho
    v = regressor(x)
    e = np.array([q_meas / s_q, x]) + s.Pi_hat.T @ v
    Gamma, g = adapt_gain(s.Gamma, v, dt)
    s.Pi_hat = adapt_parameters(s.Pi_hat, s.Gamma, v, e, g)
    s.Gamma = Gamma
    _finite("adapt", k, s.Pi_hat, s.Gamma)

    s.rho_star_hat, s.q_star_hat = extract_setpoints(s)
    _finite("extract", k, np.array([s.rho_star_hat, s.q_star_hat]))

    s.e = e[:2] * np.array([s_q, s_rho])
    s.k = k + 1
    return s, s.rho_star_hat, s.q_star_hat


def lsq_batch_oracle(regressors: Sequence, targets: Sequence, weights: Sequence | None = None) -> np.ndarray:
    """Least-squares ``Pi`` minimising ``sum w_i ||v_i^T Pi - y_i||^2``.

    Solved through the normal equations. Raises ``np.linalg.LinAlgError`` when
    the Gram matrix is singular, i.e. the regressors are not exciting enough.
    """
    V = np.atleast_2d(np.asarray(regressors, dtype=float))
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    w = np.ones(len(V)) if weights is None else np.asarray(weights, dtype=float)
    gram = V.T @ (w[:, None] * V)
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise np.linalg.LinAlgError("singular Gram matrix: insufficient excitation")
    return np.linalg.solve(gram, V.T @ (w[:, None] * Y))


class ExcitationMonitor:
    """Running ``M = sum dt * v v^T`` for persistence-of-excitation checks."""

    def __init__(self, dim: int = 4):
        self.M = np.zeros((dim, dim))

    def update(self, v, dt: float) -> float:
        v = np.asarray(v, dtype=float)
        self.M += dt * np.outer(v, v)
        return self.lambda_min

    @property
    def lambda_min(self) -> float:
        return float(np.linalg.eigvalsh(self.M)[0])


def excitation_diagnostic(
    history: Iterable, dt: float, Gamma: np.ndarray | None = None
) -> tuple[float, float]:
    """Smallest eigenvalue of ``sum dt * v v^T`` over ``history`` and ``trace(Gamma)``.

    The trace is NaN when no gain matrix is supplied.
    """
    history = [np.asarray(v, dtype=float) for v in history]
    if not history:
        raise ValueError("empty regressor history")
    mon = ExcitationMonitor(history[0].size)
    for v in history:
        mon.M += dt * np.outer(v, v)
    trace = float(np.trace(Gamma)) if Gamma is not None else float("nan")
    return mon.lambda_min, trace
