"""Model design: turns locations into the matrices of an FGP structure."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .basis import BisquareSet, Lattice, _as_points, bisquare_matrix, incidence_matrix
from .car import CarModel
from .likelihood import FgpStructure


def intercept(locations):
    return np.ones((len(_as_points(locations)), 1))


@dataclass(frozen=True, eq=False)
class FgpDesign:
    """Generators for ``X``, ``S`` and ``A`` at arbitrary locations.

    ``basis`` or ``car`` may be ``None`` to obtain the pure CAR or the pure
    low-rank model.
    """

    lattice: Lattice
    basis: BisquareSet | None
    car: CarModel | None
    covariates: Callable = intercept

    def __post_init__(self):
        if self.car is not None and self.car.M != self.lattice.M:
            raise ValueError("CAR model size does not match the lattice")

    def rows(self, locations):
        """``(X, S, A, cell ids)`` for the given locations."""
        pts = _as_points(locations, self.lattice.dim)
        cells = self.lattice.cell_of(pts)
        X = np.asarray(self.covariates(pts), dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = len(pts)
        S = bisquare_matrix(self.basis, pts) if self.basis is not None else sp.csr_matrix((n, 0))
        if self.car is not None:
            A = sp.csr_matrix((np.ones(n), (np.arange(n), cells)), shape=(n, self.lattice.M))
        else:
            A = sp.csr_matrix((n, 0))
        return X, S, A, cells

    def structure(self, locations, noise_var) -> FgpStructure:
        X, S, A, _ = self.rows(locations)
        return FgpStructure(X, S, A, self.car, noise_var)


__all__ = ["FgpDesign", "intercept", "incidence_matrix"]
