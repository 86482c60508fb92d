"""Kriging predictions and standard errors under a fitted FGP."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .likelihood import FgpParams, FgpStructure, Workspace
from .linalg import sym
from .model import FgpDesign


@dataclass
class PredictionRequest:
    locations: np.ndarray
    want_std: bool = True
    batch_size: int = 256

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float)
        if len(self.locations) < 1:
            raise ValueError("at least one prediction location is required")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class PredictionResult:
    mean: np.ndarray
    std: np.ndarray | None
    cells: np.ndarray | None = None


def posterior_xi_mean(structure: FgpStructure, params: FgpParams, Z, ws=None):
    """``E(xi | Z) = Q^{-1} A' C^{-1} (Z - X beta)``."""
    ws = ws or Workspace(structure, params)
    if structure.M == 0:
        return np.zeros(0)
    u = ws.apply_C_inverse(ws.residual(Z))
    return ws.solve_Q(structure.A.T @ u)


def _xi_terms(ws, cells, K):
    """Posterior variance of ``xi_c`` and ``cov(eta, xi_c | Z)`` for a batch of cells."""
    st = ws.structure
    b = len(cells)
    E = np.zeros((st.M, b))
    E[cells, np.arange(b)] = 1.0
    q = ws.solve_Q(E)  # columns of Q^{-1}
    Aq = st.A @ q
    CiAq = ws.apply_C_inverse(Aq)
    var_xi = q[cells, np.arange(b)] - np.einsum("ij,ij->j", Aq, CiAq)
    cov_eta_xi = -K @ (st.S.T @ CiAq) if st.r else np.zeros((0, b))
    return var_xi, cov_eta_xi


def predict_rows(
    structure: FgpStructure,
    params: FgpParams,
    Z,
    Xp,
    Sp,
    Ap,
    want_std=True,
    batch_size=256,
    ws=None,
    workers=1,
):
    """Predictive mean and standard deviation for explicit design rows.

    ``Ap`` must have at most one nonzero per row (a cell indicator).  Only
    the diagonal of the predictive covariance is formed.
    """
    st = structure
    ws = ws or Workspace(st, params)
    Xp = np.asarray(Xp, dtype=float)
    Sp = sp.csr_matrix(Sp)
    Ap = sp.csr_matrix(Ap)
    K = params.K
    u = ws.apply_C_inverse(ws.residual(Z))
    mean = Xp @ params.beta
    if st.r:
        mu_eta = K @ (st.S.T @ u)
        mean = mean + Sp @ mu_eta
    if st.M:
        mu_xi = ws.solve_Q(st.A.T @ u)
        mean = mean + Ap @ mu_xi
    if not want_std:
        return mean, None

    var = np.zeros(len(mean))
    if st.r:
        Sigma_eta = sym(ws.Gfac.solve(np.eye(st.r)))
        var += np.asarray(Sp.multiply(Sp @ Sigma_eta).sum(axis=1)).ravel()
    if st.M:
        has = Ap.getnnz(axis=1) > 0
        rows = np.flatnonzero(has)
        cell_of_row = Ap[rows].indices
        ucells, inv = np.unique(cell_of_row, return_inverse=True)
        var_xi = np.empty(len(ucells))
        cov = np.empty((st.r, len(ucells)))
        chunks = [slice(a, min(a + batch_size, len(ucells))) for a in range(0, len(ucells), batch_size)]

        def run(sl):
            return sl, _xi_terms(ws, ucells[sl], K)

        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(run, chunks))
        else:
            results = [run(sl) for sl in chunks]
        for sl, (v, c) in results:
            var_xi[sl] = v
            cov[:, sl] = c
        var[rows] += var_xi[inv]
        if st.r:
            Sr = Sp[rows]
            var[rows] += 2.0 * np.asarray(Sr.multiply(cov[:, inv].T).sum(axis=1)).ravel()
    std = np.sqrt(np.maximum(var, 0.0))
    return mean, std


def predict(structure: FgpStructure, params: FgpParams, Z, req: PredictionRequest, design: FgpDesign, ws=None, workers=1):
    """Predict ``Y`` at ``req.locations``; locations take the cell that contains them."""
    Xp, Sp, Ap, cells = design.rows(req.locations)
    mean, std = predict_rows(
        structure, params, Z, Xp, Sp, Ap, req.want_std, req.batch_size, ws=ws, workers=workers
    )
    return PredictionResult(mean, std, cells)


def prior_variance_rows(structure: FgpStructure, params: FgpParams, Sp, Ap, ws=None):
    """``diag(Sp K Sp' + Ap Q^{-1} Ap')``, the marginal prior variance of ``Y``."""
    ws = ws or Workspace(structure, params)
    Sp = sp.csr_matrix(Sp)
    Ap = sp.csr_matrix(Ap)
    var = np.asarray(Sp.multiply(Sp @ params.K).sum(axis=1)).ravel()
    if structure.M:
        q = ws.solve_Q(Ap.T.toarray())
        var += np.einsum("ij,ji->i", Ap.toarray(), q)
    return var
