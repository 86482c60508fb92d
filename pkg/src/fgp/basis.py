"""Fixed basis structures: bisquare low-rank basis and lattice incidence."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import EmptyDomain, LocationOutsideLattice


def _as_points(locations, dim=None):
    pts = np.asarray(locations, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if dim is not None and pts.shape[1] != dim:
        raise ValueError(f"locations have dimension {pts.shape[1]}, expected {dim}")
    return pts


@dataclass(frozen=True, eq=False)
class Lattice:
    """Rectangular lattice of non-overlapping cells.

    ``edges[k]`` holds the ascending cell boundaries along axis ``k`` and
    ``centers[k]`` the representative coordinate of each cell along that
    axis.  Cells are numbered in row-major order (last axis fastest), so a
    contiguous range of cell ids is a band of rows.
    """

    edges: tuple
    centers: tuple

    def __post_init__(self):
        edges = tuple(np.asarray(e, dtype=float) for e in self.edges)
        centers = tuple(np.asarray(c, dtype=float) for c in self.centers)
        if len(edges) != len(centers) or not edges:
            raise ValueError("edges and centers must list the same axes")
        for e, c in zip(edges, centers):
            if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
                raise EmptyDomain("cell edges must be strictly increasing with at least one cell")
            if c.size != e.size - 1 or np.any(c < e[:-1]) or np.any(c > e[1:]):
                raise ValueError("each cell center must lie inside its cell")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "centers", centers)

    @classmethod
    def regular(cls, domain, shape):
        """Equal cells over ``domain`` (one ``(lo, hi)`` per axis)."""
        domain = np.atleast_2d(np.asarray(domain, dtype=float))
        shape = np.atleast_1d(shape)
        if len(domain) != len(shape):
            raise ValueError("domain and shape disagree on dimension")
        edges, centers = [], []
        for (lo, hi), m in zip(domain, shape):
            if not hi > lo:
                raise EmptyDomain(f"empty interval [{lo}, {hi}]")
            e = np.linspace(lo, hi, int(m) + 1)
            edges.append(e)
            centers.append(0.5 * (e[:-1] + e[1:]))
        return cls(tuple(edges), tuple(centers))

    @classmethod
    def from_centers(cls, centers, domain):
        """Cells around given center coordinates, split at midpoints.

        ``centers`` is one ascending array per axis (or a single array for
        1-D) and the outer edges are the domain ends.
        """
        domain = np.atleast_2d(np.asarray(domain, dtype=float))
        if len(domain) == 1 and np.ndim(centers[0]) == 0:
            centers = [centers]
        edges = []
        for (lo, hi), c in zip(domain, centers):
            c = np.asarray(c, dtype=float)
            mid = 0.5 * (c[:-1] + c[1:])
            edges.append(np.concatenate([[lo], mid, [hi]]))
        return cls(tuple(edges), tuple(np.asarray(c, dtype=float) for c in centers))

    @property
    def dim(self):
        return len(self.edges)

    @property
    def shape(self):
        return tuple(e.size - 1 for e in self.edges)

    @property
    def M(self):
        return int(np.prod(self.shape))

    @property
    def domain(self):
        return np.array([[e[0], e[-1]] for e in self.edges])

    def cell_centers(self):
        """``M x d`` array of representative coordinates, row-major."""
        grids = np.meshgrid(*self.centers, indexing="ij")
        return np.column_stack([g.ravel() for g in grids])

    def cell_of(self, locations):
        """Cell id of each location.

        A location exactly on a shared boundary goes to the lower-index
        cell.  Raises :class:`LocationOutsideLattice` naming the first
        offending row.
        """
        pts = _as_points(locations, self.dim)
        idx = []
        for k, e in enumerate(self.edges):
            x = pts[:, k]
            bad = ~((x >= e[0]) & (x <= e[-1]))
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise LocationOutsideLattice(i, tuple(pts[i]))
            j = np.searchsorted(e, x, side="left") - 1
            idx.append(np.clip(j, 0, e.size - 2))
        return np.ravel_multi_index(tuple(idx), self.shape)

    def contains(self, locations):
        pts = _as_points(locations, self.dim)
        ok = np.ones(len(pts), dtype=bool)
        for k, e in enumerate(self.edges):
            ok &= (pts[:, k] >= e[0]) & (pts[:, k] <= e[-1])
        return ok


def incidence_matrix(lat: Lattice, locations) -> sp.csr_matrix:
    """``n x M`` 0/1 matrix with a single 1 per row at the containing cell."""
    cells = lat.cell_of(locations)
    n = len(cells)
    return sp.csr_matrix((np.ones(n), (np.arange(n), cells)), shape=(n, lat.M))


@dataclass(frozen=True, eq=False)
class BisquareSet:
    """Multi-resolution set of bisquare functions.

    ``level`` gives the 1-based resolution of each center, ``radii[k]``
    the radius shared by every function at level ``k + 1``.
    """

    centers: np.ndarray
    radii: np.ndarray
    level: np.ndarray = field(default=None)

    def __post_init__(self):
        centers = _as_points(self.centers)
        radii = np.atleast_1d(np.asarray(self.radii, dtype=float))
        level = (
            np.ones(len(centers), dtype=int)
            if self.level is None
            else np.asarray(self.level, dtype=int)
        )
        if level.shape != (len(centers),):
            raise ValueError("one level per center is required")
        if np.any(radii <= 0):
            raise ValueError("bisquare radii must be positive")
        if not np.all(np.isfinite(centers)):
            raise ValueError("bisquare centers must be finite")
        if len(centers) and (level.min() < 1 or level.max() > len(radii)):
            raise ValueError("levels must run from 1 to len(radii)")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "level", level)

    @property
    def r(self):
        return len(self.centers)

    @property
    def dim(self):
        return self.centers.shape[1]

    def radius_of(self):
        return self.radii[self.level - 1]

    def subset(self, keep):
        keep = np.asarray(keep)
        return BisquareSet(self.centers[keep], self.radii, self.level[keep])


def bisquare(dist, radius):
    """``{1 - (d / radius)^2}^2`` inside the radius, 0 outside."""
    u = np.asarray(dist, dtype=float) / radius
    return np.where(u < 1.0, (1.0 - u * u) ** 2, 0.0)


def bisquare_matrix(bs: BisquareSet, locations) -> sp.csr_matrix:
    """Sparse ``n x r`` matrix of bisquare values at ``locations``."""
    pts = _as_points(locations, bs.dim)
    n = len(pts)
    if bs.r == 0 or n == 0:
        return sp.csr_matrix((n, bs.r))
    tree = cKDTree(pts)
    rows, cols, vals = [], [], []
    radius = bs.radius_of()
    for j in range(bs.r):
        hits = tree.query_ball_point(bs.centers[j], radius[j])
        if not hits:
            continue
        hits = np.asarray(hits)
        d = np.linalg.norm(pts[hits] - bs.centers[j], axis=1)
        v = bisquare(d, radius[j])
        nz = v > 0
        rows.append(hits[nz])
        cols.append(np.full(nz.sum(), j))
        vals.append(v[nz])
    if not rows:
        return sp.csr_matrix((n, bs.r))
    S = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, bs.r)
    )
    S.sort_indices()
    return S


def _level_centers(lo, hi, count):
    w = (hi - lo) / count
    return lo + (np.arange(count) + 0.5) * w, w


def multiresolution_centers_1d(domain, counts: Sequence[int], radius_factor=1.5) -> BisquareSet:
    """Equally spaced centers per level; radius = ``radius_factor`` x spacing.

    >>> multiresolution_centers_1d((0, 10), [1]).radii
    array([15.])
    """
    lo, hi = map(float, domain)
    if not hi > lo:
        raise EmptyDomain(f"empty interval [{lo}, {hi}]")
    if len(counts) == 0 or min(counts) < 1:
        raise ValueError("counts must be a nonempty list of positive integers")
    centers, radii, level = [], [], []
    for k, c in enumerate(counts, start=1):
        v, w = _level_centers(lo, hi, int(c))
        centers.append(v)
        radii.append(radius_factor * w)
        level.append(np.full(int(c), k))
    return BisquareSet(np.concatenate(centers)[:, None], np.array(radii), np.concatenate(level))


def multiresolution_centers_2d(bbox, counts, radius_factor=1.5, support_points=None) -> BisquareSet:
    """Regular grid of centers per level over ``bbox = ((x0, x1), (y0, y1))``.

    Each entry of ``counts`` is either ``g`` (a ``g x g`` grid) or
    ``(gx, gy)``.  The level radius is ``radius_factor`` times the larger
    grid spacing.  When ``support_points`` is given (typically the lattice
    cell centers), functions that vanish at all of them are dropped.
    """
    (x0, x1), (y0, y1) = np.asarray(bbox, dtype=float)
    if not (x1 > x0 and y1 > y0):
        raise EmptyDomain("bounding box has zero area")
    if len(counts) == 0:
        raise ValueError("counts must be nonempty")
    centers, radii, level = [], [], []
    for k, c in enumerate(counts, start=1):
        gx, gy = (c, c) if np.ndim(c) == 0 else c
        if min(gx, gy) < 1:
            raise ValueError("grid counts must be positive")
        vx, wx = _level_centers(x0, x1, int(gx))
        vy, wy = _level_centers(y0, y1, int(gy))
        cx, cy = np.meshgrid(vx, vy, indexing="ij")
        centers.append(np.column_stack([cx.ravel(), cy.ravel()]))
        radii.append(radius_factor * max(wx, wy))
        level.append(np.full(cx.size, k))
    bs = BisquareSet(np.vstack(centers), np.array(radii), np.concatenate(level))
    if support_points is not None:
        S = bisquare_matrix(bs, support_points)
        bs = bs.subset(np.flatnonzero(S.getnnz(axis=0) > 0))
    return bs
