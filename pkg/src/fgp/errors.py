"""Exception types raised across the package."""


class FgpError(Exception):
    """Base class for all errors raised by :mod:`fgp`."""


class NumericalError(FgpError):
    """A factorization or optimization failed for numerical reasons."""


class NotPositiveDefinite(NumericalError):
    def __init__(self, index, pivot=None):
        self.index = int(index)
        self.pivot = pivot
        msg = f"matrix is not positive definite (pivot {self.index}"
        if pivot is not None:
            msg += f" = {pivot:.3e}"
        super().__init__(msg + ")")


class DimensionMismatch(FgpError, ValueError):
    pass


class GammaOutOfRange(NumericalError, ValueError):
    def __init__(self, gamma, bounds):
        self.gamma = gamma
        self.bounds = bounds
        super().__init__(
            f"gamma={gamma!r} outside admissible interval ({bounds[0]:.6g}, {bounds[1]:.6g})"
        )


class AsymmetricPrecision(FgpError, ValueError):
    pass


class ZeroMatrix(FgpError, ValueError):
    pass


class EmptyDomain(FgpError, ValueError):
    pass


class LocationOutsideLattice(FgpError, ValueError):
    def __init__(self, index, location=None):
        self.index = int(index)
        self.location = location
        super().__init__(f"location {self.index} ({location}) lies outside the lattice")


class SingularGram(NumericalError):
    pass


class DegenerateData(FgpError, ValueError):
    pass


class SimulationTooLarge(FgpError, ValueError):
    pass


class EmptyHoldout(FgpError, ValueError):
    pass


class ConfigError(FgpError, ValueError):
    pass


class DataError(FgpError, ValueError):
    pass
