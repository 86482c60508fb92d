"""Conditional autoregressive (CAR) component.

The precision is ``Q = Delta^{-1} (I - gamma H) / tau2``.  It is symmetric
when ``h_ij / Delta_i == h_ji / Delta_j`` and positive definite exactly when
``gamma`` lies strictly between the reciprocals of the smallest and largest
eigenvalues of ``H``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .basis import Lattice, _as_points
from .errors import AsymmetricPrecision, GammaOutOfRange, ZeroMatrix

#: above this size eigen-extremes come from Lanczos iteration
DENSE_EIG_MAX = 2000
#: relative shrink of the admissible gamma interval used by optimizers
GAMMA_EPS = 1e-6


def proximity_threshold(locations, d) -> sp.csr_matrix:
    """0/1 matrix with ``H_ij = 1`` iff ``0 < |s_i - s_j| <= d``."""
    if not d > 0:
        raise ValueError("distance threshold must be positive")
    pts = _as_points(locations)
    n = len(pts)
    pairs = cKDTree(pts).query_pairs(d, output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    H = sp.coo_matrix((np.ones(2 * len(i)), (np.r_[i, j], np.r_[j, i])), shape=(n, n))
    return H.tocsr()


def proximity_first_order(lat: Lattice) -> sp.csr_matrix:
    """Rook adjacency of the lattice (left/right in 1-D, 4 neighbors in 2-D)."""
    shape = lat.shape
    ids = np.arange(lat.M).reshape(shape)
    rows, cols = [], []
    for axis in range(len(shape)):
        a = np.take(ids, np.arange(shape[axis] - 1), axis=axis).ravel()
        b = np.take(ids, np.arange(1, shape[axis]), axis=axis).ravel()
        rows += [a, b]
        cols += [b, a]
    r = np.concatenate(rows) if rows else np.zeros(0, int)
    c = np.concatenate(cols) if cols else np.zeros(0, int)
    return sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(lat.M, lat.M))


def path_gamma_bounds(M):
    """Closed-form admissible interval for a chain of ``M`` nodes."""
    if M < 2:
        raise ZeroMatrix("a single node has no edges")
    lam = 2.0 * np.cos(np.pi / (M + 1))
    return (-1.0 / lam, 1.0 / lam)


def _symmetrized(H, delta):
    if delta is None:
        return H
    s = 1.0 / np.sqrt(delta)
    t = np.sqrt(delta)
    # Delta^{-1/2} H Delta^{1/2} is similar to H and symmetric under the CAR condition
    return sp.diags(s) @ H @ sp.diags(t)


def gamma_bounds(H, delta=None):
    """``(1 / lambda_min, 1 / lambda_max)`` of the proximity matrix.

    Small graphs use a dense symmetric eigensolver; large ones use Lanczos
    with relative tolerance 1e-8 and a fixed start vector.  If Lanczos fails
    to converge the Gershgorin interval is returned instead, which is a
    conservative (inner) bound.
    """
    H = sp.csr_matrix(H, dtype=float)
    if H.nnz == 0 or not np.any(H.data):
        raise ZeroMatrix("proximity matrix has no edges; every gamma is admissible")
    B = _symmetrized(H, delta)
    M = B.shape[0]
    if M <= DENSE_EIG_MAX:
        ev = np.linalg.eigvalsh(B.toarray())
        lo, hi = ev[0], ev[-1]
    else:
        v0 = np.ones(M) / np.sqrt(M) + 1e-3 * np.cos(np.arange(M))
        try:
            hi = spla.eigsh(B, k=1, which="LA", v0=v0, tol=1e-8, return_eigenvectors=False)[0]
            lo = spla.eigsh(B, k=1, which="SA", v0=v0, tol=1e-8, return_eigenvectors=False)[0]
        except spla.ArpackNoConvergence:
            warnings.warn("Lanczos did not converge; using Gershgorin gamma bounds", RuntimeWarning)
            g = float(abs(B).sum(axis=1).max())
            lo, hi = -g, g
    if not (lo < 0 < hi):  # pragma: no cover - zero-trace H always has both signs
        raise ZeroMatrix("proximity matrix spectrum does not straddle zero")
    return (1.0 / lo, 1.0 / hi)


def shrink_bounds(bounds, eps=GAMMA_EPS):
    lo, hi = bounds
    pad = eps * (hi - lo)
    return (lo + pad, hi - pad)


@dataclass(frozen=True, eq=False)
class CarModel:
    """Proximity structure ``(H, Delta)`` shared by every parameter value.

    ``bounds`` may be supplied when the admissible interval is known in
    closed form (e.g. :func:`path_gamma_bounds`); otherwise it is computed
    on first use.
    """

    H: sp.csr_matrix
    delta: np.ndarray | None = None
    bounds_hint: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        H = sp.csr_matrix(self.H, dtype=float)
        if H.shape[0] != H.shape[1]:
            raise ValueError("H must be square")
        if np.any(H.diagonal() != 0):
            raise AsymmetricPrecision("H must have a zero diagonal")
        delta = None
        if self.delta is not None:
            delta = np.asarray(self.delta, dtype=float)
            if delta.shape != (H.shape[0],) or np.any(delta <= 0):
                raise ValueError("Delta must be a positive vector of length M")
            if np.allclose(delta, 1.0):
                delta = None
        W = H if delta is None else sp.diags(1.0 / delta) @ H
        asym = abs(W - W.T)
        if asym.nnz and asym.max() > 1e-12 * max(1.0, abs(W).max()):
            raise AsymmetricPrecision("Delta^{-1} H is not symmetric")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "delta", delta)

    @property
    def M(self):
        return self.H.shape[0]

    @cached_property
    def has_edges(self):
        return self.H.nnz > 0 and bool(np.any(self.H.data))

    @cached_property
    def bounds(self):
        """Admissible open interval for gamma (infinite for an edgeless graph)."""
        if self.bounds_hint is not None:
            return tuple(map(float, self.bounds_hint))
        if not self.has_edges:
            return (-np.inf, np.inf)
        return gamma_bounds(self.H, self.delta)

    def box(self, eps=GAMMA_EPS):
        """Closed optimizer box for gamma."""
        if not self.has_edges:
            return (0.0, 0.0)
        return shrink_bounds(self.bounds, eps)

    def admissible(self, gamma):
        lo, hi = self.bounds
        return lo < gamma < hi

    def subgraph(self, idx, bounds_hint=None):
        idx = np.asarray(idx)
        d = None if self.delta is None else self.delta[idx]
        return CarModel(self.H[idx][:, idx], d, bounds_hint)


def car_precision(c: CarModel, tau2, gamma, check=True) -> sp.csc_matrix:
    """Sparse CAR precision ``Delta^{-1} (I - gamma H) / tau2``."""
    if not tau2 > 0:
        raise ValueError("tau2 must be positive")
    if check and c.has_edges and not c.admissible(gamma):
        raise GammaOutOfRange(gamma, c.bounds)
    M = c.M
    B = sp.identity(M, format="csr") - gamma * c.H if c.has_edges else sp.identity(M, format="csr")
    if c.delta is not None:
        B = sp.diags(1.0 / c.delta) @ B
    Q = (B / tau2).tocsc()
    Q.sort_indices()
    return Q
