"""Gaussian-process simulation and dense kriging baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .basis import _as_points
from .errors import EmptyHoldout, NotPositiveDefinite, SimulationTooLarge
from .linalg import dense_cholesky

SIM_MAX = 20_000
KRIGE_MAX = 5_000


@dataclass(frozen=True)
class CovarianceSpec:
    family: str
    sigma2: float
    phi: float

    def __post_init__(self):
        if self.family not in ("exponential", "sinusoidal"):
            raise ValueError(f"unknown covariance family {self.family!r}")
        if not (self.sigma2 > 0 and self.phi > 0):
            raise ValueError("sigma2 and phi must be positive")


def cov_eval(spec: CovarianceSpec, h):
    """Covariance at distance ``h``: ``s2 exp(-h/phi)`` or ``s2 sin(h/phi) phi/h``."""
    h = np.asarray(h, dtype=float)
    if spec.family == "exponential":
        return spec.sigma2 * np.exp(-h / spec.phi)
    # np.sinc(x) = sin(pi x) / (pi x), with the h -> 0 limit built in
    return spec.sigma2 * np.sinc(h / (np.pi * spec.phi))


def cov_matrix(spec: CovarianceSpec, a, b=None):
    a = _as_points(a)
    if spec.family == "sinusoidal" and a.shape[1] != 1:
        raise ValueError("the sinusoidal covariance is only valid in one dimension")
    b = a if b is None else _as_points(b)
    return cov_eval(spec, cdist(a, b))


def _factor_with_jitter(C, base):
    """Cholesky with ``base`` added to the diagonal, escalating tenfold on failure."""
    jitter = base
    for _ in range(7):
        try:
            return dense_cholesky(C + jitter * np.eye(len(C)))
        except NotPositiveDefinite:
            jitter *= 10.0
    raise NotPositiveDefinite(-1)


def simulate_gp(spec: CovarianceSpec, locations, noise_var, seed):
    """Draw ``Y ~ GP(0, c)`` at ``locations`` and ``Z = Y + eps``.

    ``seed`` may be an integer or a :class:`numpy.random.Generator`.
    """
    pts = _as_points(locations)
    if len(pts) > SIM_MAX:
        raise SimulationTooLarge(f"{len(pts)} locations exceed the dense limit {SIM_MAX}")
    rng = np.random.default_rng(seed)
    C = cov_matrix(spec, pts)
    L = _factor_with_jitter(C, 1e-10 * spec.sigma2).L
    Y = L @ rng.standard_normal(len(pts))
    Z = Y + np.sqrt(noise_var) * rng.standard_normal(len(pts))
    return Y, Z


def _cov_fn(cov):
    if isinstance(cov, CovarianceSpec):
        return lambda a, b=None: cov_matrix(cov, a, b)
    return cov


def exact_kriging(cov, noise_var, obs_locations, Z, pred_locations, mean="constant", return_var=False):
    """Kriging predictor of ``Y`` with a known covariance.

    With ``mean="constant"`` the constant trend is estimated by generalized
    least squares (universal kriging); ``mean="zero"`` is simple kriging.
    """
    obs = _as_points(obs_locations)
    if len(obs) > KRIGE_MAX:
        raise SimulationTooLarge(f"{len(obs)} observations exceed the dense kriging limit")
    cf = _cov_fn(cov)
    Z = np.asarray(Z, dtype=float)
    C = cf(obs) + noise_var * np.eye(len(obs))
    f = _factor_with_jitter(C, 0.0) if noise_var > 0 else _factor_with_jitter(C, 1e-12 * np.max(np.diag(C)))
    c0 = cf(_as_points(pred_locations), obs)
    if mean == "constant":
        one = np.ones(len(obs))
        Ci1 = f.solve(one)
        m = float(Ci1 @ Z / (one @ Ci1))
    elif mean == "zero":
        m = 0.0
    else:
        raise ValueError(f"unknown mean option {mean!r}")
    w = f.solve(Z - m)
    pred = m + c0 @ w
    if not return_var:
        return pred
    W = f.whiten(c0.T)
    var = np.diag(cf(_as_points(pred_locations))) - np.sum(W * W, axis=0)
    return pred, np.maximum(var, 0.0)


@dataclass
class ExpFit:
    sigma2: float
    phi: float
    nll: float
    at_bound: bool
    success: bool


def exp_profile_nll(log_s2, log_phi, D, Z, noise_var):
    """Gaussian negative log-likelihood with the constant mean profiled out (GLS)."""
    C = np.exp(log_s2) * np.exp(-D / np.exp(log_phi))
    C[np.diag_indices_from(C)] += noise_var
    try:
        f = dense_cholesky(C)
    except NotPositiveDefinite:
        return np.inf
    one = np.ones(len(Z))
    Ci1 = f.solve(one)
    m = Ci1 @ Z / (one @ Ci1)
    e = f.whiten(Z - m)
    return 0.5 * (e @ e + f.logdet + len(Z) * np.log(2 * np.pi))


def fit_exponential_ml(locations, Z, noise_var, budget=400):
    """Maximum likelihood ``(sigma2, phi)`` of an exponential covariance, noise held fixed.

    Bounded Nelder-Mead on ``(log sigma2, log phi)``; a solution on the box
    edge is returned with ``at_bound=True`` rather than raised.
    """
    pts = _as_points(locations)
    Z = np.asarray(Z, dtype=float)
    if len(Z) < 10:
        raise ValueError("need at least 10 observations")
    D = cdist(pts, pts)
    dpos = D[D > 0]
    vz = float(np.var(Z, ddof=1))
    span = float(D.max())
    bounds = [
        (np.log(1e-4 * vz), np.log(1e2 * vz)),
        (np.log(0.1 * dpos.min()), np.log(10.0 * span)),
    ]
    x0 = np.array([np.log(max(vz - noise_var, 0.1 * vz)), np.log(span / 10.0)])
    x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])

    def fun(x):
        return exp_profile_nll(x[0], x[1], D, Z, noise_var)

    res = minimize(
        fun, x0, method="Nelder-Mead", bounds=bounds,
        options=dict(maxfev=budget, xatol=1e-6, fatol=1e-8),
    )
    x = res.x
    tol = 1e-3
    at_bound = any(abs(x[k] - bounds[k][0]) < tol or abs(x[k] - bounds[k][1]) < tol for k in range(2))
    return ExpFit(float(np.exp(x[0])), float(np.exp(x[1])), float(res.fun), bool(at_bound), bool(res.success))


def mspe(Y, Yhat, holdout=None):
    """Mean squared prediction error.

    ``Y`` and ``Yhat`` are aligned arrays; ``holdout`` (indices or mask)
    selects the entries that count, all of them when ``None``.
    """
    Y = np.asarray(Y, dtype=float)
    Yhat = np.asarray(Yhat, dtype=float)
    if Y.shape != Yhat.shape:
        raise ValueError("truth and predictions are not aligned")
    if holdout is not None:
        Y, Yhat = Y[holdout], Yhat[holdout]
    if Y.size == 0:
        raise EmptyHoldout("holdout set is empty")
    return float(np.mean((Y - Yhat) ** 2))
