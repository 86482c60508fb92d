import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from fgp.basis import Lattice
from fgp.car import (
    CarModel,
    car_precision,
    gamma_bounds,
    path_gamma_bounds,
    proximity_first_order,
    proximity_threshold,
    shrink_bounds,
)
from fgp.errors import AsymmetricPrecision, GammaOutOfRange, NotPositiveDefinite, ZeroMatrix
from fgp.linalg import dense_cholesky, sparse_cholesky


def edges(H):
    c = sp.triu(H).tocoo()
    return sorted(zip(c.row.tolist(), c.col.tolist()))


def chain(M):
    return proximity_first_order(Lattice.regular([(0, 1)], [M]))


def test_threshold_three_points():
    assert edges(proximity_threshold([0.0, 0.2, 1.0], 0.3)) == [(0, 1)]


def test_threshold_scenario_grid_is_first_order():
    x = np.linspace(0, 100, 450)
    H = proximity_threshold(x, 0.3)
    # brute-force pairwise oracle
    D = np.abs(x[:, None] - x[None, :])
    ref = (D <= 0.3) & (D > 0)
    assert np.array_equal(H.toarray() != 0, ref)
    deg = np.asarray(H.sum(axis=1)).ravel()
    assert np.all(deg[1:-1] == 2) and deg[0] == deg[-1] == 1


def test_threshold_below_spacing_is_empty():
    H = proximity_threshold([0.0, 1.0, 2.0], 0.5)
    assert H.nnz == 0
    c = CarModel(H)
    assert c.bounds == (-np.inf, np.inf)
    assert np.allclose(car_precision(c, 2.0, 0.7).toarray(), 0.5 * np.eye(3))
    with pytest.raises(ZeroMatrix):
        gamma_bounds(H)


def test_first_order_chain():
    assert edges(chain(4)) == [(0, 1), (1, 2), (2, 3)]


def test_first_order_rook():
    H = proximity_first_order(Lattice.regular([(0, 1), (0, 1)], [3, 3]))
    deg = np.asarray(H.sum(axis=1)).ravel().reshape(3, 3)
    assert deg[0, 0] == deg[0, 2] == deg[2, 0] == deg[2, 2] == 2
    assert deg[1, 1] == 4


def test_rook_edge_count():
    g = 10
    H = proximity_first_order(Lattice.regular([(0, 1), (0, 1)], [g, g]))
    assert len(edges(H)) == 2 * g * (g - 1) == 180


def test_path_bounds():
    lo, hi = gamma_bounds(chain(3))
    assert lo == pytest.approx(-1 / np.sqrt(2), abs=1e-12)
    assert hi == pytest.approx(1 / np.sqrt(2), abs=1e-12)
    assert path_gamma_bounds(3) == pytest.approx((lo, hi), abs=1e-12)


def test_single_edge_bounds():
    assert gamma_bounds(chain(2)) == pytest.approx((-1.0, 1.0), abs=1e-14)


def test_rook_bounds_vs_dense():
    H = proximity_first_order(Lattice.regular([(0, 1), (0, 1)], [10, 10]))
    ev = np.linalg.eigvalsh(H.toarray())
    assert gamma_bounds(H)[1] == pytest.approx(1 / ev[-1], abs=1e-10)


def test_lanczos_bounds_for_large_chain():
    M = 3000  # above the dense eigen cut-off
    assert gamma_bounds(chain(M)) == pytest.approx(path_gamma_bounds(M), rel=1e-8)


def test_precision_independence():
    c = CarModel(chain(4))
    assert np.allclose(car_precision(c, 2.0, 0.0).toarray(), 0.5 * np.eye(4))


def test_precision_chain_half():
    H = chain(3)
    Q = car_precision(CarModel(H), 1.0, 0.5).toarray()
    assert np.allclose(Q, np.eye(3) - 0.5 * H.toarray())
    dense_cholesky(Q)


def test_gamma_out_of_range():
    with pytest.raises(GammaOutOfRange):
        car_precision(CarModel(chain(3)), 1.0, 0.8)


def test_asymmetric_delta_rejected():
    with pytest.raises(AsymmetricPrecision):
        CarModel(chain(3), delta=[1.0, 2.0, 3.0])
    with pytest.raises(AsymmetricPrecision):
        CarModel(sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]])))


def test_weighted_delta_symmetric():
    # h_ij / delta_i == h_ji / delta_j with an asymmetric H
    H = sp.csr_matrix(np.array([[0, 0.5, 0], [1.0, 0, 1.0], [0, 0.5, 0]]))
    c = CarModel(H, delta=[1.0, 2.0, 1.0])
    Q = car_precision(c, 1.0, 0.5).toarray()
    assert np.allclose(Q, Q.T)
    lo, hi = c.bounds
    for g in np.linspace(lo, hi, 9)[1:-1]:
        dense_cholesky(car_precision(c, 1.0, g).toarray())


def test_tau2_scales_inverse():
    c = CarModel(chain(5))
    Q1 = np.linalg.inv(car_precision(c, 1.3, 0.4).toarray())
    Q2 = np.linalg.inv(car_precision(c, 2.6, 0.4).toarray())
    assert np.allclose(Q2, 2 * Q1, rtol=1e-12)


def gibbs_covariance(H, gamma, tau2, delta, sweeps=5000, tol=1e-13):
    """Stationary covariance of systematic-scan Gibbs with the CAR conditionals.

    Updating site ``i`` draws ``y_i = gamma * sum_j h_ij y_j + e_i`` with
    ``var(e_i) = delta_i tau2``; the covariance evolves deterministically.
    """
    M = H.shape[0]
    S = np.eye(M)
    for _ in range(sweeps):
        old = S.copy()
        for i in range(M):
            T = np.eye(M)
            T[i] = gamma * H[i]
            S = T @ S @ T.T
            S[i, i] += delta[i] * tau2
        if np.max(np.abs(S - old)) < tol:
            break
    return S


@pytest.mark.parametrize("M", [3, 4, 6])
def test_conditionals_imply_joint(M):
    rng = np.random.default_rng(M)
    H = (rng.uniform(size=(M, M)) < 0.5).astype(float)
    H = np.triu(H, 1)
    H = H + H.T
    H[0, 1] = H[1, 0] = 1.0
    c = CarModel(sp.csr_matrix(H))
    gamma = 0.6 * c.bounds[1]
    S = gibbs_covariance(H, gamma, 1.7, np.ones(M))
    assert np.allclose(S, np.linalg.inv(car_precision(c, 1.7, gamma).toarray()), atol=1e-6)


def test_shrunk_box():
    lo, hi = shrink_bounds((-1.0, 1.0))
    assert lo == pytest.approx(-1 + 2e-6) and hi == pytest.approx(1 - 2e-6)


def random_graph(rng, M):
    H = np.triu((rng.uniform(size=(M, M)) < rng.uniform(0.05, 0.5)).astype(float), 1)
    H[0, 1] = 1.0
    return sp.csr_matrix(H + H.T)


@given(st.integers(0, 10_000), st.integers(2, 100))
def test_admissibility_matches_eigen_oracle(seed, M):
    rng = np.random.default_rng(seed)
    H = random_graph(rng, M)
    ev = np.linalg.eigvalsh(H.toarray())
    lo, hi = 1 / ev[0], 1 / ev[-1]
    c = CarModel(H)
    assert c.bounds == pytest.approx((lo, hi), rel=1e-10)
    for g in (lo + 1e-3, hi - 1e-3, rng.uniform(lo + 1e-3, hi - 1e-3)):
        sparse_cholesky(car_precision(c, 1.0, g))
    for g in (lo - 1e-3, hi + 1e-3):
        with pytest.raises(NotPositiveDefinite):
            sparse_cholesky(car_precision(c, 1.0, g, check=False))
        with pytest.raises(GammaOutOfRange):
            car_precision(c, 1.0, g)
