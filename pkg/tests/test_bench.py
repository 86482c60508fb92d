import time

import numpy as np
import pytest

from fgp import bench
from fgp.bench import (
    ScenarioConfig,
    StructureConfig,
    TimingConfig,
    draw_replicate,
    run_replicate,
    run_scenario,
    timing_benchmark,
)
from fgp.em import EmConfig
from fgp.simulate import CovarianceSpec, exact_kriging


def test_defaults_match_scenario_one():
    cfg = ScenarioConfig()
    assert cfg.M == 450 and cfg.n_holdout == 45 and cfg.noise_var == 4.0
    assert cfg.covariance == CovarianceSpec("exponential", 16.0, 10.0)
    assert cfg.lattice().M == 450
    assert cfg.structure.design(cfg.lattice()).basis.r == 14


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(holdout_fraction=1.0)
    with pytest.raises(ValueError):
        ScenarioConfig(replicates=0)
    with pytest.raises(ValueError):
        ScenarioConfig(methods=["MK", "FGP"])
    with pytest.raises(ValueError):
        ScenarioConfig(methods=["EK", "SPDE"])
    with pytest.raises(ValueError):
        ScenarioConfig(holdout_truth="both")
    with pytest.raises(ValueError):
        StructureConfig(proximity="knn")
    with pytest.raises(ValueError):
        TimingConfig(sizes=[10, 5])


def test_replicate_draw_is_seeded():
    cfg = ScenarioConfig()
    a, b = draw_replicate(cfg, 3), draw_replicate(cfg, 3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    locs, Y, Z, obs, hold = a
    assert len(obs) == 405 and len(hold) == 45 and not np.intersect1d(obs, hold).size
    other = draw_replicate(cfg, 4)
    assert not np.array_equal(other[4], hold)  # holdout redrawn per replicate


def test_component_designs():
    lat = ScenarioConfig().lattice()
    s = StructureConfig()
    assert s.design(lat, "CAR").basis is None and s.design(lat, "CAR").car is not None
    assert s.design(lat, "LOWRANK").car is None and s.design(lat, "LOWRANK").basis.r == 14


def test_two_d_scenario_design():
    cfg = ScenarioConfig(domain=[[0, 10], [0, 10]], shape=[8, 8], structure=StructureConfig([2, 3], proximity="first_order"))
    assert cfg.M == 64
    d = cfg.structure.design(cfg.lattice())
    assert d.basis.dim == 2 and d.car.M == 64


def test_mspe_scoring_targets():
    base = dict(methods=["EK"], replicates=1, M=120, domain=[[0.0, 30.0]])
    noisy = run_replicate(ScenarioConfig(**base), 0)[0]["EK"]
    latent = run_replicate(ScenarioConfig(holdout_truth="latent", **base), 0)[0]["EK"]
    cfg = ScenarioConfig(**base)
    locs, Y, Z, obs, hold = draw_replicate(cfg, 0)
    pred = exact_kriging(cfg.covariance, cfg.noise_var, locs[obs], Z[obs], locs[hold])
    assert noisy == np.mean((Z[hold] - pred) ** 2)
    assert latent == np.mean((Y[hold] - pred) ** 2)


def test_smoke_single_replicate_all_methods():
    cfg = ScenarioConfig(replicates=1, methods=list(bench.METHODS))
    t0 = time.perf_counter()
    res = run_scenario(cfg)
    assert time.perf_counter() - t0 < 60
    assert res.failures == []
    assert res.rel_efficiency["EK"] == 1.0
    assert all(np.isfinite(res.ave[m]) for m in bench.METHODS)
    assert res.std["EK"] == 0.0


def test_failures_are_recorded_not_raised(monkeypatch):
    def boom(*a, **k):
        raise FloatingPointError("synthetic")

    monkeypatch.setattr(bench, "fit_exponential_ml", boom)
    res = run_scenario(ScenarioConfig(replicates=2, methods=["EK", "MK"], M=100, domain=[[0.0, 20.0]]))
    assert [f[:2] for f in res.failures] == [(0, "MK"), (1, "MK")]
    assert res.per_run["EK"].size == 0 and np.isnan(res.ave["EK"])


def test_workers_do_not_change_aggregates():
    cfg = ScenarioConfig(replicates=3, methods=["EK", "MK"], M=150, domain=[[0.0, 30.0]])
    a, b = run_scenario(cfg, workers=1), run_scenario(cfg, workers=2)
    assert a.rows() == b.rows()
    assert all(np.array_equal(a.per_run[m], b.per_run[m]) for m in cfg.methods)


def test_ek_not_beaten_by_mk_when_correct():
    cfg = ScenarioConfig(replicates=10, methods=["EK", "MK"], holdout_truth="latent")
    res = run_scenario(cfg)
    diff = res.per_run["MK"] - res.per_run["EK"]
    assert np.mean(diff) >= -np.std(diff, ddof=1) / np.sqrt(len(diff))


def test_timing_rows_and_growth():
    cfg = TimingConfig(sizes=[5_000, 20_000], blocks=[1, 2], basis_counts=[4, 8])
    rows = timing_benchmark(cfg)
    assert [(M, J) for M, J, _ in rows] == [(5000, 1), (5000, 2), (20000, 1), (20000, 2)]
    assert all(isinstance(s, float) and s > 0 for _, _, s in rows)


def test_timing_records_oom(monkeypatch):
    def oom(M, cfg):
        raise MemoryError

    monkeypatch.setattr(bench, "timing_problem", oom)
    assert timing_benchmark(TimingConfig(sizes=[10], blocks=[1, 4])) == [(10, 1, "oom"), (10, 4, "oom")]


def test_em_config_threads_through():
    cfg = ScenarioConfig(replicates=1, methods=["EK", "FGP"], em=EmConfig(max_iters=3))
    locs, Y, Z, obs, hold = draw_replicate(cfg, 0)
    _, rep = bench.fgp_predict(cfg, cfg.lattice(), locs, Z, obs, hold)
    assert rep.iterations == 3


def test_fused_not_worse_than_components_in_2d():
    """Full FGP holdout MSPE <= best single component + one pooled Monte-Carlo SE."""
    cfg = ScenarioConfig(
        domain=[[0, 30], [0, 30]],
        shape=[15, 15],
        replicates=20,
        seed=5,
        methods=["EK", "FGP", "CAR", "LOWRANK"],
        structure=StructureConfig([2, 4], proximity="first_order"),
        em=EmConfig(max_iters=60),
    )
    res = run_scenario(cfg)
    assert not res.failures
    best = min(("CAR", "LOWRANK"), key=res.ave.get)
    se = np.sqrt((res.std["FGP"] ** 2 + res.std[best] ** 2) / 2 / cfg.replicates)
    assert res.ave["FGP"] <= res.ave[best] + se
