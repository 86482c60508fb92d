"""Likelihood of the fused Gaussian process without forming ``n x n`` matrices.

The data covariance is ``C = S K S' + A Q^{-1} A' + V``.  Two nested
Woodbury steps reduce every operation with ``C`` to a sparse ``M x M``
factorization of ``P = Q + A' V^{-1} A`` and a dense ``r x r`` factorization
of ``G = K^{-1} + S' D S``, where ``D = (A Q^{-1} A' + V)^{-1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .car import CarModel, car_precision
from .errors import DimensionMismatch, GammaOutOfRange
from .linalg import CholeskyPlan, dense_cholesky, jittered_cholesky, sym, union_pattern

LOG_2PI = math.log(2.0 * math.pi)
#: bytes of dense right-hand side allowed per sparse solve batch
SOLVE_BATCH_BYTES = 64 * 2**20


@dataclass(frozen=True, eq=False)
class FgpStructure:
    """Fixed design of an FGP model: ``Z = X beta + S eta + A xi + eps``.

    ``A`` may have zero columns (pure low-rank model, ``car`` is then
    ``None``) and ``S`` may have zero columns (pure CAR model).
    """

    X: np.ndarray
    S: sp.csr_matrix
    A: sp.csr_matrix
    car: CarModel | None
    noise_var: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = X.shape[0]
        S = sp.csr_matrix(self.S, dtype=float)
        A = sp.csr_matrix(self.A, dtype=float)
        V = np.broadcast_to(np.asarray(self.noise_var, dtype=float), (n,)).copy()
        if S.shape[0] != n or A.shape[0] != n:
            raise DimensionMismatch("X, S and A must have the same number of rows")
        if A.shape[1] > 0 and (self.car is None or self.car.M != A.shape[1]):
            raise DimensionMismatch("A has M columns but the CAR model does not match")
        if np.any(V <= 0) or not np.all(np.isfinite(V)):
            raise ValueError("noise variances must be positive and finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "noise_var", V)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def r(self):
        return self.S.shape[1]

    @property
    def M(self):
        return self.A.shape[1]

    def dense_C(self, params: "FgpParams"):
        """Densified covariance; only for small oracle checks."""
        if self.n > 2000:
            raise MemoryError("dense_C is restricted to small problems")
        C = np.diag(self.noise_var)
        S = self.S.toarray()
        C += S @ params.K @ S.T
        if self.M:
            Q = car_precision(self.car, params.tau2, params.gamma).toarray()
            Ad = self.A.toarray()
            C += Ad @ np.linalg.solve(Q, Ad.T)
        return sym(C)

    @cached_property
    def pieces(self) -> "_Pieces":
        return _Pieces(self)


@dataclass(frozen=True, eq=False)
class FgpParams:
    beta: np.ndarray
    K: np.ndarray
    tau2: float
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        K = np.asarray(self.K, dtype=float)
        if K.ndim == 0:
            K = K.reshape(1, 1)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "tau2", float(self.tau2))
        object.__setattr__(self, "gamma", float(self.gamma))

    def vector(self):
        """``(beta, upper triangle of K, tau2, gamma)`` for convergence checks."""
        iu = np.triu_indices(self.K.shape[0])
        return np.concatenate([self.beta, self.K[iu], [self.tau2, self.gamma]])

    def replace(self, **kw):
        d = dict(beta=self.beta, K=self.K, tau2=self.tau2, gamma=self.gamma)
        d.update(kw)
        return FgpParams(**d)


def _batches(ncols, nrows):
    step = max(1, min(ncols, SOLVE_BATCH_BYTES // (8 * max(nrows, 1))))
    for a in range(0, ncols, step):
        yield slice(a, min(a + step, ncols))


class _Pieces:
    """Parameter-free parts of ``D`` computed once per structure.

    ``Q`` and ``P`` are laid out on fixed sparsity patterns, so a new
    ``(tau2, gamma)`` only rescales value arrays before factorization.
    """

    def __init__(self, st: FgpStructure):
        self.vinv = 1.0 / st.noise_var
        self.logdet_V = float(np.sum(np.log(st.noise_var)))
        S = st.S
        self.SVS = np.asarray((S.T @ sp.diags(self.vinv) @ S).todense())
        if not st.M:
            return
        M = st.M
        car = st.car
        dinv = sp.diags(np.ones(M) if car.delta is None else 1.0 / car.delta)
        DH = (dinv @ car.H).tocsr()
        self.AtVinv = (st.A.T @ sp.diags(self.vinv)).tocsr()
        W = self.AtVinv @ st.A
        self.q_ptr, self.q_idx, (self.q_base, self.q_h) = union_pattern([dinv, DH], (M, M))
        self.p_ptr, self.p_idx, (self.p_base, self.p_h, self.p_w) = union_pattern([dinv, DH, W], (M, M))
        self.q_plan = CholeskyPlan(sp.csc_matrix((np.ones(len(self.q_idx)), self.q_idx, self.q_ptr), (M, M)))
        self.p_plan = CholeskyPlan(sp.csc_matrix((np.ones(len(self.p_idx)), self.p_idx, self.p_ptr), (M, M)))
        T = (self.AtVinv @ S).tocsc()  # A' V^{-1} S
        self.T = T
        self.active = np.flatnonzero(T.getnnz(axis=0))
        Ta = T[:, self.active]
        # dense copy only when it is cheap; otherwise densify per batch
        self.Ta = Ta.toarray() if M * len(self.active) * 8 <= SOLVE_BATCH_BYTES else Ta

    def q_values(self, tau2, gamma):
        return (self.q_base - gamma * self.q_h) / tau2

    def p_values(self, tau2, gamma):
        return (self.p_base - gamma * self.p_h) / tau2 + self.p_w

    def Q(self, tau2, gamma):
        M = len(self.q_ptr) - 1
        return sp.csc_matrix((self.q_values(tau2, gamma), self.q_idx, self.q_ptr), (M, M))

    def P(self, tau2, gamma):
        M = len(self.p_ptr) - 1
        return sp.csc_matrix((self.p_values(tau2, gamma), self.p_idx, self.p_ptr), (M, M))


class DOperator:
    """Operator ``D = (A Q^{-1} A' + V)^{-1}`` for one ``(tau2, gamma)``.

    Holds the sparse factors of ``Q`` and ``P = Q + A' V^{-1} A`` and the
    small matrix ``S' D S``; valid for the given ``(tau2, gamma)`` only.
    """

    def __init__(self, structure: FgpStructure, tau2, gamma, check=True):
        st = structure
        pre = st.pieces
        self.structure = st
        self.tau2 = float(tau2)
        self.gamma = float(gamma)
        self.vinv = pre.vinv
        self.logdet_V = pre.logdet_V
        self._pre = pre
        if st.M:
            if not self.tau2 > 0:
                raise ValueError("tau2 must be positive")
            if check and st.car.has_edges and not st.car.admissible(self.gamma):
                raise GammaOutOfRange(self.gamma, st.car.bounds)
            self.Qfac = pre.q_plan.factor_values(pre.q_values(self.tau2, self.gamma))
            self.Pfac = pre.p_plan.factor_values(pre.p_values(self.tau2, self.gamma))
            self.logdet_Dinv = self.Pfac.logdet - self.Qfac.logdet + self.logdet_V
        else:
            self.Qfac = self.Pfac = None
            self.logdet_Dinv = self.logdet_V
        self._SDS = None

    def apply(self, B):
        """``D @ B`` using one sparse solve with ``P``."""
        B = np.asarray(B, dtype=float)
        vb = B * (self.vinv if B.ndim == 1 else self.vinv[:, None])
        if self.Pfac is None:
            return vb
        y = self.Pfac.solve(self._pre.AtVinv @ B)
        av = self.structure.A @ y
        return vb - av * (self.vinv if B.ndim == 1 else self.vinv[:, None])

    def project(self, R, AtVR=None):
        """Return ``(R' D R, S' D R)`` for a vector or ``n x k`` matrix ``R``.

        ``AtVR`` may carry a precomputed ``A' V^{-1} R``.
        """
        R = np.asarray(R, dtype=float)
        st = self.structure
        vR = R * (self.vinv if R.ndim == 1 else self.vinv[:, None])
        RDR = R.T @ vR
        SDR = st.S.T @ vR
        if self.Pfac is not None:
            t = self._pre.AtVinv @ R if AtVR is None else AtVR
            y = self.Pfac.solve(t)
            RDR = RDR - t.T @ y
            SDR = SDR - self._pre.T.T @ y
        return RDR, np.asarray(SDR)

    @property
    def SDS(self):
        """``S' D S`` (``r x r``), assembled in column batches of ``P^{-1} A' V^{-1} S``."""
        if self._SDS is None:
            pre = self._pre
            out = pre.SVS.copy()
            if self.Pfac is not None and len(pre.active):
                Ta = pre.Ta
                k = len(pre.active)
                corr = np.empty((k, k))
                for sl in _batches(k, self.structure.M):
                    rhs = Ta[:, sl]
                    y = self.Pfac.solve(rhs if isinstance(rhs, np.ndarray) else rhs.toarray())
                    corr[:, sl] = Ta.T @ y
                out[np.ix_(pre.active, pre.active)] -= corr
            self._SDS = sym(out)
        return self._SDS


class Workspace:
    """Factorizations needed to apply ``C^{-1}`` and evaluate ``log|C|``."""

    def __init__(self, structure: FgpStructure, params: FgpParams, dop: DOperator | None = None):
        st = structure
        if params.beta.shape != (st.p,) or params.K.shape != (st.r, st.r):
            raise DimensionMismatch("parameter shapes do not match the structure")
        self.structure = st
        self.params = params
        if dop is None or dop.tau2 != params.tau2 or dop.gamma != params.gamma:
            dop = DOperator(st, params.tau2, params.gamma)
        self.D = dop
        if st.r:
            self.Kfac = jittered_cholesky(params.K)
            Kinv = self.Kfac.solve(np.eye(st.r))
            self.G = sym(Kinv + dop.SDS)
            self.Gfac = dense_cholesky(self.G)
            self.logdet_C = self.Gfac.logdet + self.Kfac.logdet + dop.logdet_Dinv
        else:
            self.Kfac = self.Gfac = None
            self.G = np.zeros((0, 0))
            self.logdet_C = dop.logdet_Dinv

    def apply_D(self, B):
        return self.D.apply(B)

    def solve_Q(self, B):
        """``Q^{-1} B`` from the cached CAR factor."""
        return self.D.Qfac.solve(B)

    def apply_C_inverse(self, b):
        """``C^{-1} b = D b - D S G^{-1} S' D b``."""
        Db = self.D.apply(b)
        if self.Gfac is None:
            return Db
        S = self.structure.S
        u = self.Gfac.solve(S.T @ Db)
        return Db - self.D.apply(S @ u)

    def quad_C_inverse(self, z):
        """``z' C^{-1} z`` and ``S' C^{-1} z`` computed from ``D`` projections."""
        zDz, SDz = self.D.project(z)
        if self.Gfac is None:
            return float(zDz), SDz
        g = self.Gfac.solve(SDz)
        SCz = SDz - self.D.SDS @ g
        return float(zDz - SDz @ g), SCz

    def residual(self, Z):
        return np.asarray(Z, dtype=float) - self.structure.X @ self.params.beta


def apply_D(ws: Workspace, B):
    return ws.apply_D(B)


def apply_C_inverse(ws: Workspace, b):
    return ws.apply_C_inverse(b)


def log_det_C(ws: Workspace):
    return ws.logdet_C


def neg_log_likelihood(structure: FgpStructure, params: FgpParams, Z, ws: Workspace | None = None):
    """Exact Gaussian negative log-density of ``Z`` (including ``n/2 log 2 pi``)."""
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (structure.n,):
        raise DimensionMismatch(f"Z has shape {Z.shape}, expected ({structure.n},)")
    ws = ws or Workspace(structure, params)
    q, _ = ws.quad_C_inverse(ws.residual(Z))
    return 0.5 * (q + ws.logdet_C + structure.n * LOG_2PI)
