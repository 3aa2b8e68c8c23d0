# mcco_services/problems/lqr.py
"""Finite-horizon linear-quadratic regulator as a nest of Q-function coefficient maps.

A quadratic Q-function
    Q(s, a) = s'Qss s + 2 s'Qsa a + a'Qaa a + 2 bs's + 2 ba'a + c
is stored as the packed vector (Qss, Qsa, Qaa, bs, ba, c) of length m^2 + mn + n^2 + m + n + 1.
Minimizing over a gives V(s) = s'P s + 2 g's + d with the Schur complement
    P = Qss - Qsa K Qsa',  g = bs - Qsa K ba,  d = c - ba' K ba,  K = Qaa^-1.
For t >= 2 the stage-t integrand maps the coefficients of Q_t and the disturbance xi_t
to the coefficients of Q_{t-1}(s, a) = s'Qs + a'Ra + V_t(A s + B a + xi_t). Stage 1 returns
V_1(xi_1) at the initial state xi_1. The decision vector holds the terminal coefficients,
read as P = Qss, g = bs, d = c.
"""
import logging
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from errors import InvalidParams, SingularQaa
from ..core import FeasibleSet, MccoProblem, Stage

logger = logging.getLogger(__name__)

Matrix = List[List[float]]


class LqrParams(BaseModel):
    kind: Literal["lqr"] = "lqr"
    T: int = Field(2, ge=1)
    A: Matrix = Field(default_factory=lambda: [[1.0]])
    B: Matrix = Field(default_factory=lambda: [[1.0]])
    Q: Matrix = Field(default_factory=lambda: [[1.0]])
    R: Matrix = Field(default_factory=lambda: [[1.0]])
    P_T: Matrix = Field(default_factory=lambda: [[1.0]])
    s0: List[float] = Field(default_factory=lambda: [1.0])
    initial_cov: Optional[Matrix] = Field(None, description="Covariance of the initial state around s0.")
    noise_cov: Optional[Matrix] = Field(None, description="Covariance of the disturbances xi_2..xi_T.")
    noise_ar: float = Field(0.0, gt=-1.0, lt=1.0, description="AR(1) coefficient of the disturbances.")

    model_config = ConfigDict(extra="forbid")


@dataclass(frozen=True)
class LqrMatrices:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P_T: np.ndarray
    s0: np.ndarray
    initial_cov: np.ndarray
    noise_cov: np.ndarray

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.B.shape[1]


def _is_psd(M: np.ndarray, tol: float = 1e-10) -> bool:
    return np.allclose(M, M.T, atol=tol) and float(np.linalg.eigvalsh(M).min()) >= -tol


def lqr_matrices(params: LqrParams, require_invertible_r: bool = True) -> LqrMatrices:
    """Array view of the parameters with the shape and definiteness checks."""
    try:
        A, B, Q, R, P_T = (np.array(M, dtype=float) for M in (params.A, params.B, params.Q, params.R, params.P_T))
        s0 = np.array(params.s0, dtype=float)
    except ValueError as e:
        raise InvalidParams(f"ragged LQR matrix: {e}") from e
    m = A.shape[0] if A.ndim == 2 else 0
    n = B.shape[1] if B.ndim == 2 else 0
    expected = {"A": (A, (m, m)), "B": (B, (m, n)), "Q": (Q, (m, m)), "R": (R, (n, n)), "P_T": (P_T, (m, m)), "s0": (s0, (m,))}
    for name, (M, shape) in expected.items():
        if M.shape != shape or 0 in shape:
            raise InvalidParams(f"{name} has shape {M.shape}, expected {shape}")
    zero = np.zeros((m, m))
    initial_cov = np.array(params.initial_cov, dtype=float) if params.initial_cov is not None else zero
    noise_cov = np.array(params.noise_cov, dtype=float) if params.noise_cov is not None else zero
    for name, M in (("Q", Q), ("P_T", P_T), ("initial_cov", initial_cov), ("noise_cov", noise_cov)):
        if M.shape != (m, m) or not _is_psd(M):
            raise InvalidParams(f"{name} must be a symmetric positive semidefinite {m}x{m} matrix")
    if require_invertible_r and np.linalg.matrix_rank(R) < n:
        raise InvalidParams("R must be invertible")
    return LqrMatrices(A, B, Q, R, P_T, s0, initial_cov, noise_cov)


@dataclass(frozen=True)
class CoefficientLayout:
    """Packing of (Qss, Qsa, Qaa, bs, ba, c) into one row-major vector."""
    m: int
    n: int

    @property
    def size(self) -> int:
        m, n = self.m, self.n
        return m * m + m * n + n * n + m + n + 1

    def pack(self, Qss, Qsa, Qaa, bs, ba, c) -> np.ndarray:
        N = Qss.shape[0]
        return np.concatenate(
            [Qss.reshape(N, -1), Qsa.reshape(N, -1), Qaa.reshape(N, -1), bs, ba, np.reshape(c, (N, 1))], axis=1
        )

    def unpack(self, X: np.ndarray) -> Tuple[np.ndarray, ...]:
        m, n = self.m, self.n
        N = X.shape[0]
        cuts = np.cumsum([m * m, m * n, n * n, m, n])
        Qss, Qsa, Qaa, bs, ba, c = np.split(X, cuts, axis=1)
        return Qss.reshape(N, m, m), Qsa.reshape(N, m, n), Qaa.reshape(N, n, n), bs, ba, c[:, 0]

    def terminal(self, P: np.ndarray) -> np.ndarray:
        m, n = self.m, self.n
        return self.pack(P[None], np.zeros((1, m, n)), np.zeros((1, n, n)), np.zeros((1, m)), np.zeros((1, n)), np.zeros(1))[0]

    def trial_point(self) -> np.ndarray:
        """A point with Qaa = I, safe for the Schur reduction."""
        m, n = self.m, self.n
        return self.pack(np.eye(m)[None], np.zeros((1, m, n)), np.eye(n)[None], np.zeros((1, m)), np.zeros((1, n)), np.zeros(1))[0]


def _mv(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (M @ v[..., None])[..., 0]


def _quad(v: np.ndarray, M: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.einsum("ni,nij,nj->n", v, M, w)


class _Reduction:
    """Value-function coefficients (P, g, d) of a batch of Q-functions and their directional derivatives."""

    def __init__(self, layout: CoefficientLayout, X: np.ndarray, terminal: bool):
        self.layout = layout
        self.terminal = terminal
        self.Qss, self.Qsa, self.Qaa, self.bs, self.ba, self.c = layout.unpack(X)
        if terminal:
            self.K = None
            self.P, self.g, self.d = self.Qss, self.bs, self.c
            return
        try:
            self.K = np.linalg.inv(self.Qaa)
        except np.linalg.LinAlgError as e:
            raise SingularQaa("action block Qaa of an estimated Q-function is singular") from e
        QsaT = np.swapaxes(self.Qsa, 1, 2)
        self.P = self.Qss - self.Qsa @ self.K @ QsaT
        self.g = self.bs - _mv(self.Qsa @ self.K, self.ba)
        self.d = self.c - _quad(self.ba, self.K, self.ba)

    def differential(self, dX: np.ndarray):
        dQss, dQsa, dQaa, dbs, dba, dc = self.layout.unpack(dX)
        if self.terminal:
            return dQss, dbs, dc
        K, Qsa, ba = self.K, self.Qsa, self.ba
        dK = -K @ dQaa @ K
        QsaT, dQsaT = np.swapaxes(Qsa, 1, 2), np.swapaxes(dQsa, 1, 2)
        dP = dQss - dQsa @ K @ QsaT - Qsa @ dK @ QsaT - Qsa @ K @ dQsaT
        dg = dbs - _mv(dQsa @ K, ba) - _mv(Qsa @ dK, ba) - _mv(Qsa @ K, dba)
        dd = dc - _quad(dba, K, ba) - _quad(ba, dK, ba) - _quad(ba, K, dba)
        return dP, dg, dd


def _propagate(mats: LqrMatrices, layout: CoefficientLayout, P, g, d, xi) -> np.ndarray:
    """Coefficients of s'Qs + a'Ra + V(A s + B a + xi); drop Q, R and d for differentials."""
    A, B = mats.A, mats.B
    w = _mv(P, xi) + g
    return layout.pack(
        mats.Q + A.T @ P @ A,
        A.T @ P @ B,
        mats.R + B.T @ P @ B,
        w @ A,
        w @ B,
        _quad(xi, P, xi) + 2.0 * np.sum(g * xi, axis=1) + d,
    )


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """F with F F' = cov for positive semidefinite cov."""
    vals, vecs = np.linalg.eigh(cov)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def build_lqr(params: LqrParams) -> MccoProblem:
    mats = lqr_matrices(params)
    layout = CoefficientLayout(mats.m, mats.n)
    T, D, m = params.T, layout.size, mats.m
    zero_constants = LqrMatrices(mats.A, mats.B, np.zeros_like(mats.Q), np.zeros_like(mats.R), mats.P_T, mats.s0,
                                 mats.initial_cov, mats.noise_cov)

    def value_stage(terminal: bool) -> Stage:
        def integrand(xi, x):
            red = _Reduction(layout, x, terminal)
            return (_quad(xi, red.P, xi) + 2.0 * np.sum(red.g * xi, axis=1) + red.d)[:, None]

        def jacobian(xi, x):
            red = _Reduction(layout, x, terminal)
            J = np.empty((xi.shape[0], D, 1))
            for j in range(D):
                dP, dg, dd = red.differential(_direction(xi.shape[0], D, j))
                J[:, j, 0] = _quad(xi, dP, xi) + 2.0 * np.sum(dg * xi, axis=1) + dd
            return J

        return Stage(integrand, jacobian, trial_point=layout.trial_point(), name="V_1")

    def coefficient_stage(terminal: bool) -> Stage:
        def integrand(xi, x):
            red = _Reduction(layout, x, terminal)
            return _propagate(mats, layout, red.P, red.g, red.d, xi)

        def jacobian(xi, x):
            red = _Reduction(layout, x, terminal)
            J = np.empty((xi.shape[0], D, D))
            for j in range(D):
                dP, dg, dd = red.differential(_direction(xi.shape[0], D, j))
                J[:, j, :] = _propagate(zero_constants, layout, dP, dg, dd, xi)
            return J

        return Stage(integrand, jacobian, trial_point=layout.trial_point(), name="Q-coefficients")

    stages = (value_stage(T == 1),) + tuple(coefficient_stage(t == T) for t in range(2, T + 1))

    initial = _psd_factor(mats.initial_cov)
    disturbance = _psd_factor(mats.noise_cov)
    ar = params.noise_ar

    def sampler_1(rng, n):
        return mats.s0 + rng.standard_normal((n, m)) @ initial.T

    def kernel(rng, path):
        fresh = rng.standard_normal((path.size, m)) @ disturbance.T
        # xi_1 is the initial state, not a disturbance
        if len(path) == 1 or ar == 0.0:
            return fresh
        return ar * path.last + fresh

    logger.debug(f"Built LQR problem with m={mats.m}, n={mats.n}, T={T}, coefficient dimension {D}.")
    return MccoProblem(
        T=T,
        dims=(1,) + (D,) * T,
        noise_dims=(m,) * T,
        sampler_1=sampler_1,
        kernels=(kernel,) * (T - 1),
        stages=stages,
        feasible_set=FeasibleSet.unbounded(D),
        name="lqr",
        reference_point=layout.terminal(mats.P_T),
    )


def _direction(N: int, D: int, j: int) -> np.ndarray:
    dX = np.zeros((N, D))
    dX[:, j] = 1.0
    return dX


# --- Exact value for serially independent Gaussian disturbances ---

def _reduce_exact(layout: CoefficientLayout, X: np.ndarray, terminal: bool):
    """Schur reduction with the pseudo-inverse; an inconsistent singular Qaa has no finite minimum."""
    Qss, Qsa, Qaa, bs, ba, c = (v[0] for v in layout.unpack(X[None]))
    if terminal:
        return Qss, bs, float(c)
    K = np.linalg.pinv(Qaa)
    rhs = np.column_stack([Qsa.T, ba])
    if not np.allclose(Qaa @ K @ rhs, rhs, atol=1e-9 * max(1.0, float(np.abs(rhs).max()))):
        raise SingularQaa("Qaa is singular and the linear terms leave its range; the minimum is unbounded")
    return Qss - Qsa @ K @ Qsa.T, bs - Qsa @ K @ ba, float(c - ba @ K @ ba)


def lqr_exact_value(params: LqrParams, x=None) -> float:
    """E[min_a Q_1(xi_1, a)] by the deterministic coefficient recursion (needs noise_ar = 0)."""
    if params.noise_ar != 0.0:
        raise InvalidParams("the closed form needs serially independent disturbances (noise_ar = 0)")
    mats = lqr_matrices(params, require_invertible_r=False)
    layout = CoefficientLayout(mats.m, mats.n)
    X = layout.terminal(mats.P_T) if x is None else np.asarray(x, dtype=float)
    if X.shape != (layout.size,):
        raise InvalidParams(f"coefficient vector has shape {X.shape}, expected ({layout.size},)")
    A, B = mats.A, mats.B
    for t in range(params.T, 1, -1):
        P, g, d = _reduce_exact(layout, X, terminal=(t == params.T))
        X = layout.pack(
            (mats.Q + A.T @ P @ A)[None], (A.T @ P @ B)[None], (mats.R + B.T @ P @ B)[None],
            (A.T @ g)[None], (B.T @ g)[None], np.array([float(np.trace(P @ mats.noise_cov)) + d]),
        )[0]
    P, g, d = _reduce_exact(layout, X, terminal=(params.T == 1))
    s0 = mats.s0
    return float(s0 @ P @ s0 + np.trace(P @ mats.initial_cov) + 2.0 * g @ s0 + d)
