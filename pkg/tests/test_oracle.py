import numpy as np
import pytest
from hypothesis import given, strategies as st

from fgp.oracle import build_oracle, check_identities, dense_nll


def failures(report):
    return {k: v for k, (v, ok) in report.items() if not ok}


def test_two_hundred_instances():
    for seed in range(200):
        assert not failures(check_identities(build_oracle(seed), tol=1e-8)), seed


@pytest.mark.parametrize("seed", range(10))
def test_large_noise_probe(seed):
    inst = build_oracle(seed, noise_scale=1e4)
    assert not failures(check_identities(inst, tol=1e-6, blocks=False))


@pytest.mark.parametrize("seed", range(10))
def test_near_boundary_gamma(seed):
    inst = build_oracle(seed, gamma_frac=0.99)
    assert not failures(check_identities(inst, tol=1e-6, blocks=False))


@given(st.integers(0, 10**6))
def test_dense_C_symmetric(seed):
    inst = build_oracle(seed)
    assert np.max(np.abs(inst.C - inst.C.T)) <= 1e-12
    assert np.all(np.linalg.eigvalsh(inst.C) > 0)


@given(st.integers(0, 10**6))
def test_signal_rank(seed):
    inst = build_oracle(seed)
    signal = inst.S @ inst.K @ inst.S.T + inst.A @ np.linalg.solve(inst.Q, inst.A.T)
    r, M = inst.K.shape[0], inst.Q.shape[0]
    assert np.linalg.matrix_rank(signal) <= min(inst.n, r + M)


def test_instances_reproducible():
    a, b = build_oracle(17), build_oracle(17)
    assert np.array_equal(a.C, b.C) and np.array_equal(a.Z, b.Z)
    c = build_oracle(18)
    assert c.n != a.n or not np.array_equal(c.Z, a.Z)


def test_fixed_sizes():
    inst = build_oracle(3, n=7, M=5, r=2)
    assert (inst.n, inst.Q.shape[0], inst.K.shape[0]) == (7, 5, 2)


def test_dense_nll_matches_scipy():
    from scipy.stats import multivariate_normal

    inst = build_oracle(4)
    resid = inst.Z - inst.X @ inst.params.beta
    ref = -multivariate_normal(np.zeros(inst.n), inst.C).logpdf(resid)
    assert dense_nll(inst.C, resid) == pytest.approx(ref, rel=1e-10)
