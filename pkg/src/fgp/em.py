"""EM estimation of ``(beta, K, tau2, gamma)`` with ``eta`` as missing data.

Each iteration computes the conditional moments of ``eta``, sets
``K <- Sigma + mu mu'`` in closed form, and minimizes the profiled
objective ``f(tau2, gamma)`` (``beta`` substituted by its generalized
least squares value) with a bounded Nelder-Mead search on
``(log tau2, gamma)``.  Starting the search at the current iterate makes
every step a generalized EM step, so the likelihood never increases.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateData, NotPositiveDefinite, NumericalError, SingularGram
from .likelihood import DOperator, FgpParams, FgpStructure, Workspace, neg_log_likelihood
from .linalg import dense_cholesky, sym

log = logging.getLogger(__name__)


#: simplex size (in log tau2 and gamma units) at which the inner search stops
XATOL = 1e-6


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class EmConfig:
    max_iters: int = 500
    tol: float | None = None  # default 1e-6 * max(r, 1)**2
    inner_budget: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.inner_budget < 4:
            raise ValueError("inner_budget must be >= 4")

    def threshold(self, r):
        return self.tol if self.tol is not None else 1e-6 * max(r, 1) ** 2


@dataclass
class FitReport:
    params: FgpParams
    trace: list
    iterations: int
    converged: bool
    wall_time: float
    steps: list = field(default_factory=list)

    @property
    def final_nll(self):
        return self.trace[-1]


def e_step(structure: FgpStructure, params: FgpParams, Z, ws: Workspace | None = None):
    """Conditional mean and covariance of ``eta`` given ``Z``.

    Uses ``var(eta | Z) = (K^{-1} + S' D S)^{-1}``, the Woodbury form of
    ``K - K S' C^{-1} S K``, which is symmetric PSD by construction.
    """
    ws = ws or Workspace(structure, params)
    r = structure.r
    if r == 0:
        return np.zeros(0), np.zeros((0, 0))
    _, SDz = ws.D.project(ws.residual(Z))
    Sigma = sym(ws.Gfac.solve(np.eye(r)))
    mu = Sigma @ SDz
    return mu, Sigma


def _gls(RDR):
    """Solve the GLS normal equations from ``[w, X]' D [w, X]``."""
    XDX = RDR[1:, 1:]
    XDw = RDR[1:, 0]
    try:
        f = dense_cholesky(sym(XDX))
    except NotPositiveDefinite as exc:
        raise SingularGram("X' D X is not invertible") from exc
    beta = f.solve(XDw)
    resid = float(RDR[0, 0] - XDw @ beta)
    return beta, resid


def m_step_closed(structure: FgpStructure, Z, e_out, tau2, gamma, dop: DOperator | None = None):
    """``beta_hat = (X'DX)^{-1} X'D (Z - S mu)`` and ``K_next = Sigma + mu mu'``."""
    mu, Sigma = e_out
    dop = dop or DOperator(structure, tau2, gamma)
    w = np.asarray(Z, dtype=float) - structure.S @ mu
    RDR, _ = dop.project(np.column_stack([w, structure.X]))
    beta, _ = _gls(RDR)
    K_next = sym(Sigma + np.outer(mu, mu))
    return beta, K_next


class ProfileObjective:
    """``f(tau2, gamma)`` with ``beta`` profiled out; ``+inf`` when inadmissible.

    ``f = log|A Q^{-1} A' + V| + (w - X beta_hat)' D (w - X beta_hat)
    + tr(S' D S Sigma)`` with ``w = Z - S mu``; expanding the quadratic
    gives the textbook form with ``Z_tilde = Z - X beta_hat``.
    """

    def __init__(self, structure: FgpStructure, Z, e_out):
        self.structure = structure
        self.mu, self.Sigma = e_out
        self.w = np.asarray(Z, dtype=float) - structure.S @ self.mu
        self.R = np.column_stack([self.w, structure.X])
        self._AtVR = structure.pieces.AtVinv @ self.R if structure.M else None
        self.nevals = 0
        self.best = None  # (value, tau2, gamma, beta)

    def evaluate(self, tau2, gamma):
        self.nevals += 1
        try:
            dop = DOperator(self.structure, tau2, gamma)
            RDR, _ = dop.project(self.R, self._AtVR)
            beta, quad = _gls(RDR)
            val = dop.logdet_Dinv + quad
            if self.structure.r:
                val += float(np.sum(dop.SDS * self.Sigma))
        except (NumericalError, ValueError):
            return np.inf, None
        if not np.isfinite(val):
            return np.inf, None
        if self.best is None or val < self.best[0]:
            self.best = (val, float(tau2), float(gamma), beta)
        return val, beta

    def __call__(self, tau2, gamma):
        return self.evaluate(tau2, gamma)[0]


def profile_objective(structure: FgpStructure, Z, e_out) -> ProfileObjective:
    return ProfileObjective(structure, Z, e_out)


def initial_params(structure: FgpStructure, Z) -> FgpParams:
    """Starting values: ``tau2 = 0.1 var(Z)``, ``K = 0.9 var(Z) I``, OLS ``beta``,
    ``gamma`` at the midpoint of the admissible interval."""
    Z = np.asarray(Z, dtype=float)
    if Z.size < 2:
        raise DegenerateData("need at least two observations")
    v = float(np.var(Z, ddof=1))
    if not v > 0:
        raise DegenerateData("data have zero sample variance")
    beta = np.linalg.lstsq(structure.X, Z, rcond=None)[0]
    r = structure.r
    car = structure.car
    if structure.M and car.has_edges:
        lo, hi = car.box()
        gamma = 0.5 * (lo + hi)
    else:
        gamma = 0.0
    tau2 = 0.1 * v if structure.M else 1.0
    return FgpParams(beta, 0.9 * v * np.eye(r), tau2, gamma)


def _optimize_car(obj: ProfileObjective, structure, start, budget, var_z, step_hint):
    """Bounded Nelder-Mead on ``(log tau2, gamma)`` started at the current iterate.

    A second search is run only when the first one stops on its budget or
    fails to improve; it starts from the best point found (the current
    iterate if nothing improved) with a ten times wider simplex in the
    latter case.
    """
    car = structure.car
    t0, g0 = start
    lt_bounds = (np.log(1e-8 * var_z), np.log(1e4 * var_z))
    x0_lt = float(np.clip(np.log(t0), *lt_bounds))
    if car.has_edges:
        g_lo, g_hi = car.box()
        x0 = np.array([x0_lt, float(np.clip(g0, g_lo, g_hi))])
        bounds = [lt_bounds, (g_lo, g_hi)]
        width = np.array([1.0, 0.5 * (g_hi - g_lo)])

        def fun(x):
            return obj(np.exp(x[0]), x[1])
    else:
        x0 = np.array([x0_lt])
        bounds = [lt_bounds]
        width = np.array([1.0])

        def fun(x):
            return obj(np.exp(x[0]), 0.0)

    f0 = fun(x0)
    best_x, best_f = x0, f0
    remaining = budget - 1
    h = float(np.clip(step_hint, 10 * XATOL, 0.1))
    for attempt in range(2):
        if remaining < len(x0) + 2:
            break
        simplex = [best_x]
        for k in range(len(x0)):
            e = best_x.copy()
            dk = h * width[k]
            e[k] = e[k] + dk if e[k] + dk <= bounds[k][1] else e[k] - dk
            simplex.append(e)
        before = obj.nevals
        res = minimize(
            fun,
            best_x,
            method="Nelder-Mead",
            bounds=bounds,
            options=dict(
                maxfev=remaining,
                xatol=max(XATOL, 0.01 * h),
                fatol=1e-10 * max(1.0, abs(best_f)),
                initial_simplex=np.array(simplex),
            ),
        )
        remaining -= obj.nevals - before
        improved = res.fun < best_f
        if improved:
            best_x, best_f = res.x, float(res.fun)
        # one restart, only when the search stalled or ran out of budget
        if res.success and improved:
            break
        h = min(10.0 * h, 0.1) if not improved else h
    if car.has_edges:
        return float(np.exp(best_x[0])), float(best_x[1])
    return float(np.exp(best_x[0])), 0.0


def _car_move(structure, old: FgpParams, tau2, gamma):
    if not structure.M:
        return 0.0
    move = abs(np.log(tau2 / old.tau2))
    if structure.car.has_edges:
        lo, hi = structure.car.box()
        move = max(move, abs(gamma - old.gamma) / (0.5 * (hi - lo)))
    return move


def fit_em(structure: FgpStructure, Z, cfg: EmConfig | None = None, init: FgpParams | None = None) -> FitReport:
    """Run EM until ``||theta_{t+1} - theta_t||_2 < zeta`` or ``max_iters``."""
    cfg = cfg or EmConfig()
    Z = np.asarray(Z, dtype=float)
    if not np.all(np.isfinite(Z)):
        raise DegenerateData("data contain non-finite values")
    t_start = time.perf_counter()
    params = init if init is not None else initial_params(structure, Z)
    var_z = float(np.var(Z, ddof=1))
    zeta = cfg.threshold(structure.r)
    ws = Workspace(structure, params)
    trace = [neg_log_likelihood(structure, params, Z, ws)]
    steps = []
    converged = False
    step_hint = 0.05
    it = 0
    for it in range(1, cfg.max_iters + 1):
        e_out = e_step(structure, params, Z, ws)
        obj = ProfileObjective(structure, Z, e_out)
        if structure.M:
            tau2, gamma = _optimize_car(
                obj, structure, (params.tau2, params.gamma), cfg.inner_budget, var_z, step_hint
            )
        else:
            tau2, gamma = params.tau2, params.gamma
        dop = DOperator(structure, tau2, gamma)
        beta, K = m_step_closed(structure, Z, e_out, tau2, gamma, dop)
        new = FgpParams(beta, K, tau2, gamma)
        ws = Workspace(structure, new, dop)
        trace.append(neg_log_likelihood(structure, new, Z, ws))
        step = float(np.linalg.norm(new.vector() - params.vector()))
        steps.append(step)
        # next simplex: twice this iteration's move, relative to the box widths
        step_hint = 2.0 * _car_move(structure, params, tau2, gamma)
        params = new
        log.debug("EM iter %d: nll=%.10g step=%.3e", it, trace[-1], step)
        if step < zeta:
            converged = True
            break
    if not converged:
        warnings.warn(f"EM stopped after {it} iterations without converging", ConvergenceWarning)
    return FitReport(params, trace, it, converged, time.perf_counter() - t_start, steps)
