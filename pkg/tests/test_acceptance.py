"""Acceptance criteria; each test prints one PASS/FAIL line.

Criteria 5 and 6 run the full 50-replicate benchmark and take several
minutes each on one core.
"""

import time
import warnings

import numpy as np
import scipy.sparse as sp

from fgp.bench import ScenarioConfig, TimingConfig, draw_replicate, run_scenario, timing_benchmark
from fgp.block import BlockFgp, partition_lattice
from fgp.car import CarModel, car_precision
from fgp.cli import main
from fgp.em import ConvergenceWarning, EmConfig, fit_em
from fgp.errors import NotPositiveDefinite
from fgp.likelihood import Workspace, neg_log_likelihood
from fgp.linalg import sparse_cholesky
from fgp.oracle import build_oracle, check_identities, dense_nll
from fgp.simulate import CovarianceSpec

SEEDS = range(200)


def worst(key, tol=1e-8):
    devs = [check_identities(build_oracle(s), tol, blocks=False)[key][0] for s in SEEDS]
    return max(devs)


def test_c1_woodbury_inverse(criterion):
    t0 = time.perf_counter()
    devs = []
    for s in SEEDS:
        inst = build_oracle(s)
        b = np.random.default_rng(s).standard_normal(inst.n)
        x = Workspace(inst.structure, inst.params).apply_C_inverse(b)
        devs.append(np.linalg.norm(inst.C @ x - b) / np.linalg.norm(b))
    elapsed = time.perf_counter() - t0
    ok = max(devs) <= 1e-8 and elapsed < 30
    criterion(1, ok, f"max residual {max(devs):.2e} (<= 1e-8), {elapsed:.1f} s (< 30 s)")


def test_c2_log_determinant(criterion):
    dev = worst("logdet")
    criterion(2, dev <= 1e-8, f"max relative log|C| deviation {dev:.2e} (<= 1e-8)")


def test_c3_predictive_distribution(criterion):
    devs = []
    for s in SEEDS:
        rep = check_identities(build_oracle(s), blocks=False)
        devs.append(max(rep["predict_mean"][0], rep["predict_var"][0]))
    dev = max(devs)
    criterion(3, dev <= 1e-8, f"max mean/variance deviation {dev:.2e} (<= 1e-8)")


def test_c4_em_monotone_and_fixed_point(criterion):
    cfg = ScenarioConfig()
    lat = cfg.lattice()
    design = cfg.structure.design(lat)
    worst_rise, refit_iters = -np.inf, []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for i in range(10):
            locs, _, Z, obs, _ = draw_replicate(cfg, i, lat)
            st = design.structure(locs[obs], cfg.noise_var)
            first = fit_em(st, Z[obs], cfg.em)
            worst_rise = max(worst_rise, float(np.max(np.diff(first.trace))))
            again = fit_em(st, Z[obs], EmConfig(max_iters=3), init=first.params)
            refit_iters.append(again.iterations if again.converged else np.inf)
    monotone = worst_rise <= 1e-8
    fixed = max(refit_iters) <= 2
    criterion(
        4,
        monotone and fixed,
        f"largest nll increase {worst_rise:.2e} (<= 1e-8); refit iterations {refit_iters} (<= 2)",
    )


def test_c5_scenario_one(criterion):
    res = run_scenario(ScenarioConfig())
    ek, rel = res.ave["EK"], res.rel_efficiency
    ok = 4.0 <= ek <= 6.0 and rel["FGP"] >= 0.90 and rel["MK"] >= 0.90 and not res.failures
    criterion(
        5,
        ok,
        f"Ave EK {ek:.4f} in [4, 6]; RE FGP {rel['FGP']:.3f}, MK {rel['MK']:.3f} (>= 0.90); "
        f"{len(res.failures)} failures",
    )


def test_c6_scenario_two(criterion):
    res = run_scenario(ScenarioConfig(covariance=CovarianceSpec("sinusoidal", 16.0, 0.5)))
    ave, sd, rel = res.ave, res.std, res.rel_efficiency
    ok = rel["FGP"] >= 0.70 and ave["MK"] >= 2 * ave["FGP"] and sd["MK"] >= 3 * sd["FGP"]
    criterion(
        6,
        ok,
        f"RE FGP {rel['FGP']:.3f} (>= 0.70); Ave MK/FGP {ave['MK'] / ave['FGP']:.2f} (>= 2); "
        f"StD MK/FGP {sd['MK'] / sd['FGP']:.2f} (>= 3)",
    )


def test_c7_block_identity(criterion):
    single, double, bitwise = 0.0, 0.0, True
    for s in range(50):
        inst = build_oracle(s, M=int(np.random.default_rng(s).integers(4, 81)))
        st, params = inst.structure, inst.params
        full = neg_log_likelihood(st, params, inst.Z)
        one = BlockFgp(st, partition_lattice(inst.lattice, 1, st.car)).neg_log_likelihood(params, inst.Z)
        single = max(single, abs(one - full) / max(1.0, abs(full)))
        two = BlockFgp(st, partition_lattice(inst.lattice, 2, st.car))
        ref = dense_nll(two.dense_C(params), inst.Z - st.X @ params.beta)
        double = max(double, abs(two.neg_log_likelihood(params, inst.Z) - ref) / max(1.0, abs(ref)))
        J = min(8, st.M)
        many = BlockFgp(st, partition_lattice(inst.lattice, J, st.car))
        vals = {many.neg_log_likelihood(params, inst.Z, workers=w) for w in (1, 2, 8)}
        bitwise &= len(vals) == 1
    ok = single <= 1e-10 and double <= 1e-8 and bitwise
    criterion(7, ok, f"J=1 dev {single:.2e} (<= 1e-10); J=2 dev {double:.2e} (<= 1e-8); workers bitwise {bitwise}")


def random_graph(rng, M):
    H = np.triu((rng.uniform(size=(M, M)) < rng.uniform(0.05, 0.5)).astype(float), 1)
    H[0, 1] = 1.0
    return sp.csr_matrix(H + H.T)


def factors(c, g):
    try:
        sparse_cholesky(car_precision(c, 1.0, g, check=False))
        return True
    except NotPositiveDefinite:
        return False


def test_c8_gamma_admissibility(criterion):
    rng = np.random.default_rng(8)
    mismatches = 0
    for _ in range(50):
        M = int(rng.integers(2, 101))
        H = random_graph(rng, M)
        ev = np.linalg.eigvalsh(H.toarray())
        lo, hi = 1 / ev[0], 1 / ev[-1]
        c = CarModel(H)
        inside = [lo + 1e-3, hi - 1e-3, rng.uniform(lo + 1e-3, hi - 1e-3)]
        outside = [lo - 1e-3, hi + 1e-3, lo - 1.0, hi + 1.0]
        mismatches += sum(not factors(c, g) for g in inside) + sum(factors(c, g) for g in outside)
        mismatches += not np.allclose(c.bounds, (lo, hi), rtol=1e-10)
    criterion(8, mismatches == 0, f"{mismatches} disagreements with the eigen oracle over 50 graphs")


def test_c9_scaling(criterion):
    rows = timing_benchmark(TimingConfig(sizes=[10_000, 100_000, 400_000], blocks=[1, 8]), workers=8)
    t = {(M, J): s for M, J, s in rows}
    done = all(isinstance(s, float) for s in t.values())
    ratio = t[400_000, 1] / t[100_000, 1] if done else np.inf
    faster = done and t[400_000, 8] < t[400_000, 1]
    detail = ", ".join(f"M={M} J={J}: {s if isinstance(s, str) else f'{s:.2f} s'}" for M, J, s in rows)
    criterion(9, done and ratio <= 8 and faster, f"t(4e5)/t(1e5) = {ratio:.2f} (<= 8); {detail}")


def test_c10_determinism(tmp_path, criterion):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"scenario": {"replicates": 8, "seed": 77}}')
    outs = []
    for w in (1, 8):
        out = tmp_path / f"w{w}.csv"
        assert main(["benchmark", "--config", str(cfg), "--out", str(out), "--workers", str(w)]) == 0
        outs.append(out.read_bytes())
    criterion(10, outs[0] == outs[1], "benchmark CSVs byte-identical across --workers 1 and 8")
