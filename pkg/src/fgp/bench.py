"""Misspecification benchmark (EK / MK / FGP) and likelihood timing runs."""

from __future__ import annotations

import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import Lattice, multiresolution_centers_1d, multiresolution_centers_2d
from .block import BlockFgp, partition_lattice
from .car import CarModel, path_gamma_bounds, proximity_first_order, proximity_threshold
from .em import ConvergenceWarning, EmConfig, fit_em
from .likelihood import FgpParams, neg_log_likelihood
from .model import FgpDesign
from .predict import predict_rows
from .simulate import CovarianceSpec, exact_kriging, fit_exponential_ml, mspe, simulate_gp

log = logging.getLogger(__name__)

METHODS = ("EK", "MK", "FGP", "CAR", "LOWRANK")


@dataclass
class StructureConfig:
    """How the FGP is built on a lattice.

    ``basis_counts`` lists centers per resolution (ints; in 2-D an int
    ``g`` means a ``g x g`` grid).  ``proximity`` is ``"threshold"``
    (uses ``threshold``) or ``"first_order"``.
    """

    basis_counts: list = field(default_factory=lambda: [2, 4, 8])
    radius_factor: float = 1.5
    proximity: str = "threshold"
    threshold: float = 0.3

    def __post_init__(self):
        if self.proximity not in ("threshold", "first_order"):
            raise ValueError(f"unknown proximity rule {self.proximity!r}")
        if self.proximity == "threshold" and not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.radius_factor <= 0:
            raise ValueError("radius_factor must be positive")

    def design(self, lat: Lattice, component="FGP") -> FgpDesign:
        """FGP design on ``lat``; ``component`` may drop the low-rank (``CAR``) or CAR (``LOWRANK``) part."""
        basis = car = None
        if component in ("FGP", "LOWRANK") and self.basis_counts:
            if lat.dim == 1:
                basis = multiresolution_centers_1d(lat.domain[0], self.basis_counts, self.radius_factor)
            else:
                basis = multiresolution_centers_2d(
                    lat.domain, self.basis_counts, self.radius_factor, support_points=lat.cell_centers()
                )
        if component in ("FGP", "CAR"):
            if self.proximity == "threshold":
                H = proximity_threshold(lat.cell_centers(), self.threshold)
            else:
                H = proximity_first_order(lat)
            car = CarModel(H)
        return FgpDesign(lat, basis, car)


@dataclass
class ScenarioConfig:
    M: int = 450
    domain: list = field(default_factory=lambda: [[0.0, 100.0]])
    shape: list | None = None  # 2-D lattices: cells per axis (M is then their product)
    holdout_fraction: float = 0.1
    noise_var: float = 4.0
    covariance: CovarianceSpec = field(default_factory=lambda: CovarianceSpec("exponential", 16.0, 10.0))
    replicates: int = 50
    seed: int = 2018
    methods: list = field(default_factory=lambda: ["EK", "MK", "FGP"])
    # MSPE is scored against the held-out observations Z ("noisy") or the latent Y ("latent")
    holdout_truth: str = "noisy"
    structure: StructureConfig = field(default_factory=StructureConfig)
    em: EmConfig = field(default_factory=EmConfig)

    def __post_init__(self):
        if not 0 < self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in (0, 1)")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.noise_var <= 0:
            raise ValueError("noise_var must be positive")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")
        if self.holdout_truth not in ("noisy", "latent"):
            raise ValueError("holdout_truth must be 'noisy' or 'latent'")
        if "EK" not in self.methods:
            raise ValueError("EK is the reference method and must be included")
        if self.shape is not None:
            self.M = int(np.prod(self.shape))

    def lattice(self) -> Lattice:
        if len(self.domain) == 1:
            lo, hi = self.domain[0]
            return Lattice.from_centers(np.linspace(lo, hi, self.M), [(lo, hi)])
        return Lattice.regular(self.domain, self.shape)

    @property
    def n_holdout(self):
        return max(1, int(round(self.holdout_fraction * self.M)))


@dataclass
class BenchResult:
    methods: list
    per_run: dict  # method -> array over successful replicates
    ave: dict
    std: dict
    rel_efficiency: dict
    failures: list  # (replicate index, method, message)
    replicates: int

    def rows(self):
        return [(m, self.ave[m], self.std[m], self.rel_efficiency[m]) for m in self.methods]


def draw_replicate(cfg: ScenarioConfig, i, lat=None):
    """Truth, data and holdout set of replicate ``i`` (seed ``cfg.seed + i``)."""
    lat = lat or cfg.lattice()
    rng = np.random.default_rng(cfg.seed + i)
    locs = lat.cell_centers()
    Y, Z = simulate_gp(cfg.covariance, locs, cfg.noise_var, rng)
    hold = np.sort(rng.choice(len(locs), cfg.n_holdout, replace=False))
    obs = np.setdiff1d(np.arange(len(locs)), hold)
    return locs, Y, Z, obs, hold


def fgp_predict(cfg: ScenarioConfig, lat, locs, Z, obs, hold, component="FGP"):
    design = cfg.structure.design(lat, component)
    st = design.structure(locs[obs], cfg.noise_var)
    with warnings.catch_warnings():
        # hitting max_iters is reported in FitReport.converged, not an error here
        warnings.simplefilter("ignore", ConvergenceWarning)
        report = fit_em(st, Z[obs], cfg.em)
    Xp, Sp, Ap, _ = design.rows(locs[hold])
    mean, _ = predict_rows(st, report.params, Z[obs], Xp, Sp, Ap, want_std=False)
    return mean, report


def run_replicate(cfg: ScenarioConfig, i):
    """MSPE of each configured method on replicate ``i``; failures become messages."""
    lat = cfg.lattice()
    locs, Y, Z, obs, hold = draw_replicate(cfg, i, lat)
    truth = Z[hold] if cfg.holdout_truth == "noisy" else Y[hold]
    out, errors = {}, {}
    for m in cfg.methods:
        try:
            if m == "EK":
                pred = exact_kriging(cfg.covariance, cfg.noise_var, locs[obs], Z[obs], locs[hold])
            elif m == "MK":
                fit = fit_exponential_ml(locs[obs], Z[obs], cfg.noise_var)
                spec = CovarianceSpec("exponential", fit.sigma2, fit.phi)
                pred = exact_kriging(spec, cfg.noise_var, locs[obs], Z[obs], locs[hold])
            else:
                pred, _ = fgp_predict(cfg, lat, locs, Z, obs, hold, m)
            out[m] = mspe(truth, pred)
        except Exception as exc:  # recorded per replicate, excluded from aggregates
            log.warning("replicate %d method %s failed: %s", i, m, exc)
            errors[m] = f"{type(exc).__name__}: {exc}"
    return out, errors


def _run_one(args):
    cfg, i = args
    return run_replicate(cfg, i)


def run_scenario(cfg: ScenarioConfig, workers=1, progress=None) -> BenchResult:
    """All replicates of a scenario; aggregates use replicates where every method succeeded."""
    jobs = [(cfg, i) for i in range(cfg.replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_one(job))
            if progress:
                progress(job[1], results[-1])
    failures = []
    good = []
    for i, (out, errors) in enumerate(results):
        for m, msg in errors.items():
            failures.append((i, m, msg))
        if not errors:
            good.append(out)
    per_run = {m: np.array([g[m] for g in good]) for m in cfg.methods}
    ave = {m: float(np.mean(v)) if v.size else float("nan") for m, v in per_run.items()}
    std = {m: float(np.std(v, ddof=1)) if v.size > 1 else 0.0 for m, v in per_run.items()}
    rel = {m: ave["EK"] / ave[m] for m in cfg.methods}
    return BenchResult(list(cfg.methods), per_run, ave, std, rel, failures, cfg.replicates)


# -- timing -------------------------------------------------------------------


@dataclass
class TimingConfig:
    sizes: list = field(default_factory=lambda: [10_000, 100_000, 400_000])
    blocks: list = field(default_factory=lambda: [1, 4, 8])
    domain: list = field(default_factory=lambda: [0.0, 2000.0])
    basis_counts: list = field(default_factory=lambda: [16, 64, 256])
    repeats: int = 1
    seed: int = 0

    def __post_init__(self):
        if list(self.sizes) != sorted(self.sizes):
            raise ValueError("sizes must be ascending")
        if any(j < 1 for j in self.blocks):
            raise ValueError("block counts must be positive")


def timing_problem(M, cfg: TimingConfig):
    """1-D lattice with first-order CAR, observed at every cell, white-noise data."""
    lo, hi = cfg.domain
    lat = Lattice.regular([(lo, hi)], [M])
    H = proximity_first_order(lat)
    car = CarModel(H, bounds_hint=path_gamma_bounds(M))
    basis = multiresolution_centers_1d((lo, hi), cfg.basis_counts)
    design = FgpDesign(lat, basis, car)
    st = design.structure(lat.cell_centers(), 4.0)
    rng = np.random.default_rng(cfg.seed + M)
    Z = 4.0 * rng.standard_normal(M)
    params = FgpParams([0.0], np.eye(basis.r), 1.0, 0.5 * car.bounds[1])
    return lat, st, Z, params


def timing_benchmark(cfg: TimingConfig, workers=1):
    """Seconds per likelihood evaluation; ``J=1`` is the unblocked FGP."""
    rows = []
    for M in cfg.sizes:
        try:
            lat, st, Z, params = timing_problem(M, cfg)
        except MemoryError:
            rows += [(M, J, "oom") for J in cfg.blocks]
            continue
        for J in cfg.blocks:
            try:
                if J == 1:
                    fn = lambda: neg_log_likelihood(st, params, Z)  # noqa: E731
                else:
                    model = BlockFgp(st, partition_lattice(lat, J, st.car, path_gamma_bounds))
                    fn = lambda: model.neg_log_likelihood(params, Z, workers=workers)  # noqa: E731
                best = np.inf
                for _ in range(cfg.repeats):
                    t0 = time.perf_counter()
                    fn()
                    best = min(best, time.perf_counter() - t0)
                rows.append((M, J, best))
            except MemoryError:
                rows.append((M, J, "oom"))
            log.info("timing M=%d J=%d: %s", M, J, rows[-1][2])
    return rows


def config_dict(cfg):
    d = asdict(cfg)
    return d


__all__ = [
    "StructureConfig",
    "ScenarioConfig",
    "BenchResult",
    "TimingConfig",
    "run_replicate",
    "run_scenario",
    "timing_benchmark",
]
