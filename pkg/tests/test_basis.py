import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from fgp.basis import (
    BisquareSet,
    Lattice,
    bisquare,
    bisquare_matrix,
    incidence_matrix,
    multiresolution_centers_1d,
    multiresolution_centers_2d,
)
from fgp.errors import EmptyDomain, LocationOutsideLattice


def test_value_at_center_and_boundary():
    bs = BisquareSet([[50.0]], [25.0])
    S = bisquare_matrix(bs, [[50.0], [75.0], [25.0]]).toarray()
    assert S[:, 0].tolist() == [1.0, 0.0, 0.0]


def test_hand_evaluated_value():
    bs = BisquareSet([[50.0]], [25.0])
    assert bisquare_matrix(bs, [[60.0]]).toarray()[0, 0] == pytest.approx(0.7056, abs=1e-12)


def test_continuous_at_support_edge():
    r = 3.0
    inside = bisquare(r * (1 - 1e-9), r)
    assert 0 < inside < 1e-16
    assert bisquare(r, r) == 0.0


def test_scenario_centers():
    bs = multiresolution_centers_1d((0, 100), [2, 4, 8])
    c = bs.centers[:, 0]
    assert bs.r == 14
    assert np.allclose(c[:2], [25, 75])
    assert np.allclose(c[2:6], [12.5, 37.5, 62.5, 87.5])
    assert np.allclose(c[6:], 6.25 * np.arange(1, 16, 2))
    assert np.allclose(bs.radii, [75.0, 37.5, 18.75])
    assert bs.level.tolist() == [1] * 2 + [2] * 4 + [3] * 8


def test_single_center():
    bs = multiresolution_centers_1d((0, 10), [1])
    assert bs.centers[0, 0] == 5.0 and bs.radii[0] == 15.0


def test_timing_design_has_336_functions():
    assert multiresolution_centers_1d((0, 2000), [16, 64, 256]).r == 336


def test_empty_domain():
    with pytest.raises(EmptyDomain):
        multiresolution_centers_1d((1, 1), [2])
    with pytest.raises(EmptyDomain):
        Lattice.regular([(0, 0)], [3])


def test_2d_centers_drop_unsupported():
    lat = Lattice.regular([(0, 1), (0, 1)], [10, 10])
    full = multiresolution_centers_2d([(0, 1), (0, 1)], [2, 3])
    assert full.r == 4 + 9
    # points only in one corner: far-away functions vanish there and are dropped
    corner = lat.cell_centers()[:5]
    kept = multiresolution_centers_2d([(0, 1), (0, 1)], [2, 3], support_points=corner)
    assert 0 < kept.r < full.r
    assert np.all(bisquare_matrix(kept, corner).getnnz(axis=0) > 0)


def test_incidence_identity_on_centers():
    lat = Lattice.regular([(0, 100)], [450])
    A = incidence_matrix(lat, lat.cell_centers())
    assert (A != sp.identity(450)).nnz == 0


def test_incidence_shared_cell():
    lat = Lattice.regular([(0, 1)], [4])
    A = incidence_matrix(lat, [0.1, 0.2]).toarray()
    assert A[0].tolist() == A[1].tolist() == [1, 0, 0, 0]


def test_incidence_scenario_holdout():
    lat = Lattice.regular([(0, 100)], [450])
    rng = np.random.default_rng(0)
    hold = rng.choice(450, 45, replace=False)
    obs = np.setdiff1d(np.arange(450), hold)
    A = incidence_matrix(lat, lat.cell_centers()[obs])
    assert A.shape == (405, 450)
    assert np.all(A.getnnz(axis=1) == 1) and np.all(A.sum(axis=1) == 1)
    assert np.sum(A.getnnz(axis=0) == 0) == 45


def test_boundary_goes_to_lower_cell():
    lat = Lattice.regular([(0, 1)], [4])
    assert lat.cell_of([0.25, 0.5, 0.0, 1.0]).tolist() == [0, 1, 0, 3]


def test_outside_lattice_names_row():
    lat = Lattice.regular([(0, 1)], [4])
    with pytest.raises(LocationOutsideLattice) as e:
        lat.cell_of([0.5, 0.2, 1.5])
    assert e.value.index == 2


def test_2d_row_major_numbering():
    lat = Lattice.regular([(0, 2), (0, 3)], [2, 3])
    assert lat.cell_of([[0.5, 0.5], [0.5, 2.5], [1.5, 0.5]]).tolist() == [0, 2, 3]


@given(st.lists(st.floats(0, 100), min_size=1, max_size=40), st.integers(0, 1000))
def test_incidence_rows_sum_to_one(xs, seed):
    lat = Lattice.regular([(0, 100)], [37])
    A = incidence_matrix(lat, xs)
    assert np.all(np.asarray(A.sum(axis=1)).ravel() == 1)
    AtA = (A.T @ A).toarray()
    assert np.array_equal(AtA, np.diag(np.diag(AtA)))


@given(st.lists(st.floats(-10, 110), min_size=2, max_size=30), st.randoms())
def test_row_permutation_invariance(xs, rnd):
    bs = multiresolution_centers_1d((0, 100), [2, 4])
    perm = list(range(len(xs)))
    rnd.shuffle(perm)
    S = bisquare_matrix(bs, xs).toarray()
    Sp = bisquare_matrix(bs, np.asarray(xs)[perm]).toarray()
    assert np.array_equal(S[perm], Sp)
    assert np.all((S >= 0) & (S <= 1))
