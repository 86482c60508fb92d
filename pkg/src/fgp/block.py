"""Block fused Gaussian process.

The lattice graph is cut into ``J`` independent subgraphs so that ``Q`` is
block diagonal.  The likelihood then reduces to four per-block quantities
(``a_j = z_j' D_j z_j``, ``b_j = S_j' D_j z_j``, ``G_j = S_j' D_j S_j`` and
``ld_j = log|D_j^{-1}|``), computed independently and folded in ascending
block order, so the result does not depend on how many workers ran.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import Lattice
from .car import CarModel, car_precision, proximity_first_order
from .likelihood import LOG_2PI, DOperator, FgpParams, FgpStructure
from .linalg import dense_cholesky, jittered_cholesky, sym


@dataclass(frozen=True, eq=False)
class BlockPartition:
    """Cells split into ``J`` contiguous blocks with their own CAR graphs.

    ``block_params`` optionally overrides ``(tau2, gamma)`` per block; by
    default every block uses the shared values from :class:`FgpParams`.
    """

    cells: tuple  # one ascending array of cell ids per block
    cars: tuple  # CarModel per block (cross-block edges removed)
    M: int
    block_params: tuple | None = None

    @property
    def J(self):
        return len(self.cells)

    @property
    def assignment(self):
        a = np.empty(self.M, dtype=int)
        for j, c in enumerate(self.cells):
            a[c] = j
        return a

    def params_for(self, j, params: FgpParams):
        if self.block_params is None or self.block_params[j] is None:
            return params.tau2, params.gamma
        return self.block_params[j]

    def with_block_params(self, block_params):
        if block_params is not None and len(block_params) != self.J:
            raise ValueError("need one (tau2, gamma) per block")
        return BlockPartition(self.cells, self.cars, self.M, None if block_params is None else tuple(block_params))

    def precision(self, params: FgpParams):
        """Assembled block-diagonal ``Q``."""
        blocks = [car_precision(c, *self.params_for(j, params)) for j, c in enumerate(self.cars)]
        Q = sp.block_diag(blocks, format="csc")
        order = np.concatenate(self.cells)
        if np.array_equal(order, np.arange(self.M)):
            return Q
        inv = np.empty(self.M, dtype=int)
        inv[order] = np.arange(self.M)
        return Q[inv][:, inv].tocsc()

    def dropped_graph(self, car: CarModel):
        """The full-size graph with only within-block edges kept."""
        keep = self.assignment
        H = car.H.tocoo()
        m = keep[H.row] == keep[H.col]
        Hb = sp.csr_matrix((H.data[m], (H.row[m], H.col[m])), shape=H.shape)
        return CarModel(Hb, car.delta)


def partition_lattice(lat: Lattice, J, car: CarModel | None = None, block_bounds=None) -> BlockPartition:
    """Split cells into ``J`` contiguous runs of the row-major order (sizes differ by at most 1).

    In 1-D the blocks are intervals, in 2-D bands of rows.  ``car``
    defaults to the first-order neighbourhood graph of the lattice.
    ``block_bounds(size)`` may supply each block's gamma interval in closed
    form (e.g. :func:`~fgp.car.path_gamma_bounds` for a 1-D chain).
    """
    M = lat.M
    if not 1 <= J <= M:
        raise ValueError(f"need 1 <= J <= M, got J={J}, M={M}")
    car = car or CarModel(proximity_first_order(lat))
    cells = tuple(np.array_split(np.arange(M), J))
    cars = tuple(car.subgraph(c, block_bounds(len(c)) if block_bounds else None) for c in cells)
    return BlockPartition(cells, cars, M)


@dataclass
class BlockSummary:
    a: float
    b: np.ndarray
    G: np.ndarray
    ld: float


class _Block:
    """Block-local pieces of the structure: rows, active basis columns, sub-graph."""

    def __init__(self, structure: FgpStructure, cells, car, obs_cell):
        local = np.full(structure.M, -1)
        local[cells] = np.arange(len(cells))
        self.rows = np.flatnonzero(np.isin(obs_cell, cells))
        self.cells = cells
        S = structure.S[self.rows]
        self.active = np.flatnonzero(S.getnnz(axis=0))
        n_j = len(self.rows)
        A = sp.csr_matrix(
            (np.ones(n_j), (np.arange(n_j), local[obs_cell[self.rows]])), shape=(n_j, len(cells))
        )
        self.structure = FgpStructure(
            structure.X[self.rows], S[:, self.active], A, car, structure.noise_var[self.rows]
        )


def _obs_cells(structure: FgpStructure):
    A = structure.A.tocsr()
    if np.any(A.getnnz(axis=1) != 1):
        raise ValueError("every observation must belong to exactly one cell")
    return A.indices.copy()


class BlockWorkspace:
    """Per-block ``D_j`` operators plus the folded ``r x r`` system."""

    def __init__(self, model: "BlockFgp", params: FgpParams, workers=1):
        self.model = model
        self.params = params
        r = model.structure.r
        part = model.partition

        def build(j):
            blk = model.blocks[j]
            return DOperator(blk.structure, *part.params_for(j, params))

        self.dops = _map(build, range(part.J), workers)
        G = np.zeros((r, r))
        ld = 0.0
        for blk, dop in zip(model.blocks, self.dops):
            if len(blk.active):
                G[np.ix_(blk.active, blk.active)] += dop.SDS
            ld += dop.logdet_Dinv
        self.logdet_Dinv = ld
        if r:
            self.Kfac = jittered_cholesky(params.K)
            self.Gt = sym(self.Kfac.solve(np.eye(r)) + G)
            self.Gfac = dense_cholesky(self.Gt)
            self.logdet_C = self.Gfac.logdet + self.Kfac.logdet + ld
        else:
            self.Gfac = None
            self.logdet_C = ld

    @property
    def structure(self):
        return self.model.structure

    def residual(self, Z):
        return np.asarray(Z, dtype=float) - self.structure.X @ self.params.beta

    def apply_D(self, B):
        B = np.asarray(B, dtype=float)
        out = np.zeros_like(B)
        for blk, dop in zip(self.model.blocks, self.dops):
            out[blk.rows] = dop.apply(B[blk.rows])
        return out

    def apply_C_inverse(self, b):
        """``blockdiag(D_j) b - [D_j S_j] Gt^{-1} sum_j S_j' D_j b_j``."""
        Db = self.apply_D(b)
        if self.Gfac is None:
            return Db
        S = self.structure.S
        u = self.Gfac.solve(S.T @ Db)
        return Db - self.apply_D(S @ u)

    def quad_C_inverse(self, z):
        Dz = self.apply_D(z)
        zDz = float(z @ Dz)
        if self.Gfac is None:
            return zDz, np.zeros(0)
        SDz = self.structure.S.T @ Dz
        g = self.Gfac.solve(SDz)
        return zDz - SDz @ g, SDz - (self.Gt - self.Kfac.solve(np.eye(len(g)))) @ g

    def solve_Q(self, B):
        B = np.asarray(B, dtype=float)
        out = np.zeros_like(B)
        for blk, dop in zip(self.model.blocks, self.dops):
            if dop.Qfac is not None:
                out[blk.cells] = dop.Qfac.solve(B[blk.cells])
        return out


def _map(fn, items, workers):
    items = list(items)
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


class BlockFgp:
    """FGP whose CAR component is block diagonal according to ``partition``."""

    def __init__(self, structure: FgpStructure, partition: BlockPartition):
        if structure.M != partition.M:
            raise ValueError("partition and structure disagree on M")
        self.structure = structure
        self.partition = partition
        obs_cell = _obs_cells(structure)
        self.blocks = [
            _Block(structure, c, car, obs_cell) for c, car in zip(partition.cells, partition.cars)
        ]

    def block_summary(self, j, params: FgpParams, Z) -> BlockSummary:
        """``(a_j, b_j, G_j, ld_j)`` from block-local data only."""
        blk = self.blocks[j]
        r = self.structure.r
        b = np.zeros(r)
        G = np.zeros((r, r))
        if len(blk.rows) == 0:
            return BlockSummary(0.0, b, G, 0.0)
        st = blk.structure
        dop = DOperator(st, *self.partition.params_for(j, params))
        z = np.asarray(Z, dtype=float)[blk.rows] - st.X @ params.beta
        a, SDz = dop.project(z)
        if len(blk.active):
            b[blk.active] = SDz
            G[np.ix_(blk.active, blk.active)] = dop.SDS
        return BlockSummary(float(a), b, G, float(dop.logdet_Dinv))

    def summaries(self, params: FgpParams, Z, workers=1):
        return _map(lambda j: self.block_summary(j, params, Z), range(self.partition.J), workers)

    def neg_log_likelihood(self, params: FgpParams, Z, workers=1):
        return reduce_summaries(self.summaries(params, Z, workers), params.K, self.structure.n)

    def workspace(self, params: FgpParams, workers=1) -> BlockWorkspace:
        return BlockWorkspace(self, params, workers)

    def dense_C(self, params: FgpParams):
        """Densified covariance of the block model; oracle use only."""
        st = self.structure
        S = st.S.toarray()
        Ad = st.A.toarray()
        Q = self.partition.precision(params).toarray()
        C = S @ params.K @ S.T + Ad @ np.linalg.solve(Q, Ad.T) + np.diag(st.noise_var)
        return sym(C)


def reduce_summaries(summaries, K, n):
    """Fold block summaries in order into the negative log-likelihood."""
    r = K.shape[0]
    a = 0.0
    b = np.zeros(r)
    G = np.zeros((r, r))
    ld = 0.0
    for s in summaries:
        a += s.a
        b += s.b
        G += s.G
        ld += s.ld
    val = a + ld
    if r:
        Kfac = jittered_cholesky(K)
        Gt = sym(Kfac.solve(np.eye(r)) + G)
        Gfac = dense_cholesky(Gt)
        val += -b @ Gfac.solve(b) + Gfac.logdet + Kfac.logdet
    return 0.5 * (val + n * LOG_2PI)


def block_summary(model: BlockFgp, j, params: FgpParams, Z) -> BlockSummary:
    return model.block_summary(j, params, Z)


def block_neg_log_likelihood(model: BlockFgp, params: FgpParams, Z, workers=1):
    return model.neg_log_likelihood(params, Z, workers)


def block_apply_C_inverse(model: BlockFgp, params: FgpParams, b, workers=1):
    return model.workspace(params, workers).apply_C_inverse(b)
