"""Dense and sparse Cholesky factorizations with log-determinants.

Every factor exposes the same small surface: ``solve``, ``whiten`` (the
half-solve ``L^{-1} P b`` so that ``b' M^{-1} b == ||whiten(b)||^2``),
``logdet`` and ``perm``.  Sparse matrices with a narrow band (chains and
thin lattices in natural order) go to LAPACK's banded Cholesky.  Others are
factorized by CHOLMOD when scikit-sparse is importable, otherwise by SuperLU
run in symmetric mode with diagonal pivoting, which for SPD input is an
LDL' factorization.
"""

from __future__ import annotations

import threading
import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .errors import DimensionMismatch, NotPositiveDefinite

try:  # pragma: no cover - exercised implicitly when installed
    from sksparse import cholmod as _cholmod
except ImportError:  # pragma: no cover
    _cholmod = None

#: relative pivot floor: a pivot <= PIVOT_RTOL * max(diag) is a failure
PIVOT_RTOL = 1e-12

#: matrices whose half-bandwidth is at most this use the banded LAPACK path
BAND_MAX = 32

HAVE_CHOLMOD = _cholmod is not None
DEFAULT_SPARSE_BACKEND = "cholmod" if HAVE_CHOLMOD else "superlu"


def _check_pivots(pivots, scale):
    pivots = np.asarray(pivots, dtype=float)
    floor = PIVOT_RTOL * scale
    bad = np.flatnonzero(~(pivots > floor))
    if bad.size:
        i = int(bad[0])
        raise NotPositiveDefinite(i, float(pivots[i]))


def _as_rhs(b, dim):
    b = np.asarray(b, dtype=float)
    if b.ndim not in (1, 2) or b.shape[0] != dim:
        raise DimensionMismatch(f"right-hand side has shape {b.shape}, factor has dim {dim}")
    return b


class CholFactor:
    """Factor of a symmetric positive definite matrix ``M = P' L L' P``.

    Subclasses fill in ``dim``, ``perm``, ``logdet`` and implement
    ``_solve`` / ``_whiten``.  Instances are immutable after construction.
    """

    dim: int
    perm: np.ndarray
    logdet: float

    def solve(self, b):
        """Return ``x`` with ``M x = b``; ``b`` may be a vector or a matrix."""
        b = _as_rhs(b, self.dim)
        if b.size == 0:
            return np.zeros_like(b)
        return self._solve(b)

    def whiten(self, b):
        """Return ``L^{-1} P b``."""
        b = _as_rhs(b, self.dim)
        if b.size == 0:
            return np.zeros_like(b)
        return self._whiten(b)

    def quad(self, b):
        """``b' M^{-1} b`` for a vector, or ``B' M^{-1} B`` for a matrix."""
        w = self.whiten(b)
        return w @ w if w.ndim == 1 else w.T @ w

    @property
    def L(self):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, logdet={self.logdet:.6g})"


class DenseCholFactor(CholFactor):
    def __init__(self, m):
        m = np.asarray(m, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
        self.dim = m.shape[0]
        self.perm = np.arange(self.dim)
        if self.dim == 0:
            self._L = np.zeros((0, 0))
            self.logdet = 0.0
            return
        L, info = lapack.dpotrf(m, lower=1, clean=1)
        scale = float(np.max(np.diag(m))) if self.dim else 1.0
        if info > 0:
            raise NotPositiveDefinite(info - 1)
        if info < 0:  # pragma: no cover
            raise ValueError(f"dpotrf illegal argument {-info}")
        d = np.diag(L)
        _check_pivots(d * d, max(scale, 0.0))
        self._L = L
        self.logdet = float(2.0 * np.sum(np.log(d)))

    @property
    def L(self):
        return self._L

    def _solve(self, b):
        return sla.cho_solve((self._L, True), b, check_finite=False)

    def _whiten(self, b):
        return sla.solve_triangular(self._L, b, lower=True, check_finite=False)


class CholmodFactor(CholFactor):
    def __init__(self, m, ordering="amd", symbolic=None):
        self.dim = m.shape[0]
        # CHOLMOD keeps per-factor workspace; serialize calls on one factor.
        self._lock = threading.Lock()
        method = {"amd": "amd", "natural": "natural", "default": "default"}[ordering]
        try:
            if symbolic is None:
                f = _cholmod.cholesky(m, ordering_method=method)
            else:
                f = symbolic.cholesky(m)
        except _cholmod.CholmodNotPositiveDefiniteError as exc:
            raise NotPositiveDefinite(-1) from exc
        pivots = f.D()
        p = f.P()
        _check_pivots(pivots, float(m.diagonal().max()))
        self._f = f
        self.perm = np.asarray(p)
        self.logdet = float(np.sum(np.log(pivots)))

    @property
    def L(self):
        return self._f.L()

    def _solve(self, b):
        with self._lock:
            return self._f.solve_A(b)

    def _whiten(self, b):
        with self._lock:
            return self._f.solve_L(self._f.apply_P(b), use_LDLt_decomposition=False)


class SuperLUFactor(CholFactor):
    """Symmetric-mode SuperLU: ``A[p][:, p] = L diag(u) L'`` for SPD ``A``."""

    def __init__(self, m, ordering="amd"):
        self.dim = m.shape[0]
        spec = {"amd": "MMD_AT_PLUS_A", "default": "MMD_AT_PLUS_A", "natural": "NATURAL"}[ordering]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sp.SparseEfficiencyWarning)
            try:
                lu = spla.splu(
                    m.tocsc(),
                    permc_spec=spec,
                    diag_pivot_thresh=0.0,
                    options={"SymmetricMode": True},
                )
            except RuntimeError as exc:  # exactly singular
                raise NotPositiveDefinite(-1) from exc
        if not np.array_equal(lu.perm_r, lu.perm_c):  # pragma: no cover
            raise NotPositiveDefinite(-1)
        pivots = lu.U.diagonal()
        _check_pivots(pivots, float(m.diagonal().max()))
        self._lu = lu
        self._pivots = pivots
        # perm_c maps original column j to position perm_c[j]; invert it.
        inv = np.empty(self.dim, dtype=np.intp)
        inv[lu.perm_c] = np.arange(self.dim)
        self.perm = inv
        self.logdet = float(np.sum(np.log(pivots)))
        self._Lunit = lu.L.tocsr()

    @property
    def L(self):
        return self._Lunit @ sp.diags(np.sqrt(self._pivots))

    def _solve(self, b):
        return self._lu.solve(b)

    def _whiten(self, b):
        pb = b[self.perm]
        y = spla.spsolve_triangular(self._Lunit, pb, lower=True, unit_diagonal=True)
        scale = 1.0 / np.sqrt(self._pivots)
        return y * (scale if y.ndim == 1 else scale[:, None])


class BandedCholFactor(CholFactor):
    """LAPACK ``dpbtrf`` on the lower band of a narrow-banded SPD matrix (natural order).

    ``ab`` is LAPACK lower band storage: ``ab[i - j, j] = m[i, j]`` for ``i >= j``.
    """

    def __init__(self, ab):
        ab = np.asarray(ab, dtype=float)
        self.bw = ab.shape[0] - 1
        self.dim = n = ab.shape[1]
        self.perm = np.arange(n)
        scale = float(ab[0].max())
        c, info = lapack.dpbtrf(ab, lower=1)
        if info > 0:
            raise NotPositiveDefinite(info - 1)
        if info < 0:  # pragma: no cover
            raise ValueError(f"dpbtrf illegal argument {-info}")
        d = c[0]
        _check_pivots(d * d, max(scale, 0.0))
        self._c = c
        self.logdet = float(2.0 * np.sum(np.log(d)))

    @classmethod
    def from_sparse(cls, m, bw=None):
        low = sp.tril(m).tocoo()
        off = low.row - low.col
        bw = int(bw if bw is not None else (off.max() if off.size else 0))
        ab = np.zeros((bw + 1, m.shape[0]))
        np.add.at(ab, (off, low.col), low.data)
        return cls(ab)

    @property
    def L(self):
        n = self.dim
        return sp.diags([self._c[k, : n - k] for k in range(self.bw + 1)], [-k for k in range(self.bw + 1)], format="csr")

    def _solve(self, b):
        x, info = lapack.dpbtrs(self._c, b if b.ndim == 2 else b[:, None], lower=1)
        return x if b.ndim == 2 else x[:, 0]

    def _whiten(self, b):
        x, info = lapack.dtbtrs(self._c, b if b.ndim == 2 else b[:, None], uplo="L")
        return x if b.ndim == 2 else x[:, 0]


def bandwidth(m):
    """Half-bandwidth ``max |i - j|`` over stored entries."""
    c = sp.coo_matrix(m)
    return int(np.max(np.abs(c.row - c.col))) if c.nnz else 0


def _pick_backend(m, backend):
    if backend is None:
        return "banded" if bandwidth(m) <= BAND_MAX else DEFAULT_SPARSE_BACKEND
    return backend


def dense_cholesky(m) -> DenseCholFactor:
    """Cholesky factor of a dense SPD matrix.

    Raises :class:`NotPositiveDefinite` carrying the index of the first
    pivot at or below ``1e-12 * max(diag(m))``.
    """
    return DenseCholFactor(m)


def sparse_cholesky(m, ordering="amd", backend=None) -> CholFactor:
    """Fill-reducing Cholesky factor of a sparse SPD matrix.

    ``ordering`` is ``"amd"`` (approximate minimum degree class) or
    ``"natural"``.  ``backend`` is ``"banded"``, ``"cholmod"`` or
    ``"superlu"``; by default narrow-banded input takes the banded path and
    everything else the best available general backend.  Only the
    structure-symmetric case is supported; the caller is responsible for
    symmetry of values.
    """
    m = sp.csc_matrix(m, dtype=float)
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] == 0:
        return DenseCholFactor(np.zeros((0, 0)))
    m.sort_indices()
    backend = _pick_backend(m, backend)
    if backend == "banded":
        return BandedCholFactor.from_sparse(m)
    if backend == "cholmod":
        if not HAVE_CHOLMOD:
            raise RuntimeError("scikit-sparse is not installed")
        return CholmodFactor(m, ordering)
    if backend == "superlu":
        return SuperLUFactor(m, ordering)
    raise ValueError(f"unknown sparse backend {backend!r}")


class CholeskyPlan:
    """Factorizations of many matrices sharing one sparsity pattern.

    The backend choice and, for CHOLMOD, the fill-reducing symbolic analysis
    are done once from ``pattern``; :meth:`factor` then only does numerics.
    """

    def __init__(self, pattern, ordering="amd", backend=None):
        m = sp.csc_matrix(pattern, dtype=float)
        m.sort_indices()
        self.dim = m.shape[0]
        self.ordering = ordering
        self.bw = bandwidth(m)
        self.backend = _pick_backend(m, backend)
        self._indices, self._indptr = m.indices, m.indptr
        if self.backend == "cholmod" and not HAVE_CHOLMOD:
            raise RuntimeError("scikit-sparse is not installed")
        self._symbolic = None
        if self.backend == "banded":
            # where each stored lower-triangle entry lands in band storage
            col = np.repeat(np.arange(self.dim), np.diff(m.indptr))
            low = m.indices >= col
            self._band = (low, m.indices[low] - col[low], col[low])
        if self.backend == "cholmod" and self.dim:
            method = {"amd": "amd", "natural": "natural", "default": "default"}[ordering]
            self._symbolic = _cholmod.analyze(m, ordering_method=method)

    def factor(self, m) -> CholFactor:
        """Factor ``m``, a CSC matrix whose pattern is contained in the plan's."""
        if self.dim == 0:
            return DenseCholFactor(np.zeros((0, 0)))
        m = sp.csc_matrix(m, dtype=float)
        if self.backend == "banded":
            if m.nnz == len(self._indices):
                return self.factor_values(m.data)
            return BandedCholFactor.from_sparse(m, max(self.bw, bandwidth(m)))
        if self.backend == "cholmod":
            return CholmodFactor(m, self.ordering, symbolic=self._symbolic)
        return SuperLUFactor(m, self.ordering)

    def factor_values(self, data) -> CholFactor:
        """Factor the matrix with the plan's pattern and stored values ``data``."""
        if self.backend == "banded":
            low, off, col = self._band
            ab = np.zeros((self.bw + 1, self.dim))
            ab[off, col] = data[low]
            return BandedCholFactor(ab)
        return self.factor(sp.csc_matrix((data, self._indices, self._indptr), (self.dim, self.dim)))


def union_pattern(mats, shape):
    """Common CSC pattern of ``mats`` and each matrix's values laid out on it.

    Returns ``(indptr, indices, [data_k])`` so that
    ``csc_matrix((sum_k w_k data_k, indices, indptr))`` equals
    ``sum_k w_k mats[k]`` without any sparse arithmetic.
    """
    nrow, ncol = shape
    coos = [sp.coo_matrix(m) for m in mats]
    keys = [c.col.astype(np.int64) * nrow + c.row for c in coos]
    allk = np.unique(np.concatenate(keys)) if keys else np.zeros(0, np.int64)
    col, row = np.divmod(allk, nrow)
    indptr = np.searchsorted(col, np.arange(ncol + 1)).astype(np.int32)
    datas = []
    for c, k in zip(coos, keys):
        d = np.zeros(len(allk))
        np.add.at(d, np.searchsorted(allk, k), c.data)
        datas.append(d)
    return indptr, row.astype(np.int32), datas


def solve(f: CholFactor, b):
    return f.solve(b)


def jittered_cholesky(m, rel=1e-10):
    """Dense Cholesky, retrying once with ``rel * trace(m) / dim`` added to the diagonal."""
    try:
        return dense_cholesky(m)
    except NotPositiveDefinite:
        m = np.array(m, dtype=float)
        k = m.shape[0]
        m[np.diag_indices(k)] += rel * np.trace(m) / k
        return dense_cholesky(m)


def sym(a):
    return 0.5 * (a + a.T)
