"""Dense reference computations and random small instances.

Everything here forms ``n x n`` matrices on purpose and is meant for
problems with ``n <= 200``.  The identities checked by
:func:`check_identities` are the Woodbury inverse and determinant-lemma
forms used by the fast code, the E-step moments, the predictive
distribution, and the block decomposition of the likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import BisquareSet, Lattice, bisquare_matrix
from .car import CarModel, car_precision, proximity_threshold
from .likelihood import LOG_2PI, FgpParams, FgpStructure, Workspace, neg_log_likelihood
from .linalg import sym


@dataclass(frozen=True, eq=False)
class OracleInstance:
    seed: int
    structure: FgpStructure
    params: FgpParams
    Z: np.ndarray
    lattice: Lattice
    basis: BisquareSet
    locations: np.ndarray
    pred_locations: np.ndarray
    # densified pieces
    S: np.ndarray
    A: np.ndarray
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    X: np.ndarray
    C: np.ndarray

    @property
    def n(self):
        return self.structure.n


def random_spd(rng, k, scale=1.0):
    G = rng.standard_normal((k, k))
    return scale * (G @ G.T / k + 0.5 * np.eye(k))


def build_oracle(seed, noise_scale=1.0, gamma_frac=None, n=None, M=None, r=None) -> OracleInstance:
    """Deterministic random instance with ``n <= 60``, ``M <= 80``, ``r <= 6``.

    ``gamma_frac`` places gamma at that fraction of the upper admissible
    bound (default: uniform inside 90% of the interval).
    """
    rng = np.random.default_rng(seed)
    n = int(n if n is not None else rng.integers(5, 61))
    M = int(M if M is not None else rng.integers(3, 81))
    r = int(r if r is not None else rng.integers(1, 7))
    p = int(rng.integers(1, 4))
    lat = Lattice.regular([(0.0, 1.0)], [M])
    centers = lat.cell_centers()
    # chain plus a few longer links, kept symmetric with zero diagonal
    H = proximity_threshold(centers, 1.01 / M).tolil()
    for _ in range(int(rng.integers(0, 4))):
        i, j = rng.choice(M, 2, replace=False)
        H[i, j] = H[j, i] = 1.0
    car = CarModel(H.tocsr())
    lo, hi = car.bounds
    if gamma_frac is None:
        gamma = float(rng.uniform(0.9 * lo, 0.9 * hi))
    else:
        gamma = float(gamma_frac * hi)
    tau2 = float(np.exp(rng.uniform(-1.0, 1.0)))
    locs = rng.uniform(0.0, 1.0, n)
    bs = BisquareSet(rng.uniform(0.0, 1.0, (r, 1)), [0.35])
    S = bisquare_matrix(bs, locs)
    A = sp.csr_matrix((np.ones(n), (np.arange(n), lat.cell_of(locs))), shape=(n, M))
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    V = noise_scale * rng.uniform(0.5, 2.0, n)
    K = random_spd(rng, r)
    beta = rng.standard_normal(p)
    Z = X @ beta + 2.0 * rng.standard_normal(n)
    st = FgpStructure(X, S, A, car, V)
    params = FgpParams(beta, K, tau2, gamma)
    Qd = car_precision(car, tau2, gamma).toarray()
    C = st.dense_C(params)
    pred = rng.uniform(0.0, 1.0, int(rng.integers(1, 11)))
    return OracleInstance(
        seed, st, params, Z, lat, bs, locs, pred, S.toarray(), A.toarray(), Qd, K, V, X, C
    )


# -- dense references --------------------------------------------------------


def dense_nll(C, resid):
    sign, ld = np.linalg.slogdet(C)
    assert sign > 0
    return 0.5 * (resid @ np.linalg.solve(C, resid) + ld + len(resid) * LOG_2PI)


def dense_D(inst: OracleInstance):
    Qi = np.linalg.inv(inst.Q)
    return np.linalg.inv(inst.A @ Qi @ inst.A.T + np.diag(inst.V))


def dense_e_step(inst: OracleInstance):
    K, S = inst.K, inst.S
    Ci = np.linalg.inv(inst.C)
    z = inst.Z - inst.X @ inst.params.beta
    mu = K @ S.T @ Ci @ z
    Sigma = K - K @ S.T @ Ci @ S @ K.T
    return mu, Sigma


def dense_conditioning(inst: OracleInstance, Sp, Ap, Xp):
    """Mean and variance of ``Y^P | Z`` by joint-Gaussian conditioning."""
    Qi = np.linalg.inv(inst.Q)
    K = inst.K
    Sp, Ap = np.asarray(Sp), np.asarray(Ap)
    cov_pp = Sp @ K @ Sp.T + Ap @ Qi @ Ap.T
    cov_pz = Sp @ K @ inst.S.T + Ap @ Qi @ inst.A.T
    z = inst.Z - inst.X @ inst.params.beta
    W = np.linalg.solve(inst.C, cov_pz.T)
    mean = Xp @ inst.params.beta + W.T @ z
    cov = cov_pp - cov_pz @ W
    return mean, np.diag(cov)


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b))) if b.size else 1.0))


def check_identities(inst: OracleInstance, tol=1e-8, blocks=True):
    """Compare fast and dense computations; returns ``{name: (deviation, passed)}``."""
    from .block import BlockFgp, partition_lattice
    from .em import e_step
    from .predict import predict_rows

    st, params = inst.structure, inst.params
    ws = Workspace(st, params)
    rng = np.random.default_rng(inst.seed + 10_000)
    out = {}

    b = rng.standard_normal(st.n)
    x = ws.apply_C_inverse(b)
    out["inverse"] = np.linalg.norm(inst.C @ x - b) / np.linalg.norm(b)

    B = rng.standard_normal((st.n, 3))
    out["apply_D"] = _rel(ws.apply_D(B), dense_D(inst) @ B)

    ld = np.linalg.slogdet(inst.C)[1]
    out["logdet"] = abs(ws.logdet_C - ld) / max(1.0, abs(ld))

    resid = inst.Z - inst.X @ params.beta
    ref = dense_nll(inst.C, resid)
    out["nll"] = abs(neg_log_likelihood(st, params, inst.Z, ws) - ref) / max(1.0, abs(ref))

    mu, Sigma = e_step(st, params, inst.Z, ws)
    mu_d, Sigma_d = dense_e_step(inst)
    out["e_step"] = max(_rel(mu, mu_d), _rel(Sigma, Sigma_d))

    m = len(inst.pred_locations)
    Xp = np.column_stack([np.ones(m), np.zeros((m, st.p - 1))])
    Sp = bisquare_matrix(inst.basis, inst.pred_locations)
    cells = inst.lattice.cell_of(inst.pred_locations)
    Ap = sp.csr_matrix((np.ones(m), (np.arange(m), cells)), shape=(m, st.M))
    mean, std = predict_rows(st, params, inst.Z, Xp, Sp, Ap, True, batch_size=3, ws=ws)
    m_d, v_d = dense_conditioning(inst, Sp.toarray(), Ap.toarray(), Xp)
    out["predict_mean"] = _rel(mean, m_d)
    out["predict_var"] = _rel(std**2, v_d)

    if blocks:
        J = 1 if st.M < 2 else 2
        part = partition_lattice(inst.lattice, J, st.car)
        bf = BlockFgp(st, part)
        Cb = bf.dense_C(params)
        out["block_nll"] = abs(bf.neg_log_likelihood(params, inst.Z) - dense_nll(Cb, resid)) / max(
            1.0, abs(dense_nll(Cb, resid))
        )
        xb = bf.workspace(params).apply_C_inverse(b)
        out["block_inverse"] = np.linalg.norm(Cb @ xb - b) / np.linalg.norm(b)
        one = BlockFgp(st, partition_lattice(inst.lattice, 1, st.car))
        full = neg_log_likelihood(st, params, inst.Z, ws)
        out["block_single"] = abs(one.neg_log_likelihood(params, inst.Z) - full) / max(1.0, abs(full))

    return {k: (float(v), bool(v <= tol)) for k, v in out.items()}

