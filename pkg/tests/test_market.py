import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from segsearch.errors import AssumptionError, ValidationError
from segsearch.market import (
    Prior,
    Segmentation,
    SurplusSplit,
    binary_segmentation,
    feasibility_residual,
    hinge_moment,
    make_prior_uniform,
    perfect_segmentation,
    pooled_segmentation,
    posterior_mean_distribution,
    segmentation_from_partition,
    verify_consistency,
    verify_mpc,
)

from .conftest import random_segmentation


@pytest.mark.parametrize("n, grid", [
    (1, [0.5]),
    (2, [0.25, 0.75]),
    (4, [0.125, 0.375, 0.625, 0.875]),
])
def test_uniform_prior(n, grid):
    p = make_prior_uniform(n)
    np.testing.assert_allclose(p.grid, grid)
    np.testing.assert_allclose(p.weights, np.full(n, 1.0 / n))
    assert p.mean == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("n", [0, -3, 2.5])
def test_uniform_prior_rejects_bad_n(n):
    with pytest.raises(ValidationError):
        make_prior_uniform(n)


@pytest.mark.parametrize("grid, weights", [
    ([0.2, 0.1], [0.5, 0.5]),
    ([0.2, 1.2], [0.5, 0.5]),
    ([0.2, 0.4], [0.5, 0.6]),
    ([0.2, 0.4], [1.0, 0.0]),
    ([0.2, 0.4], [1.0]),
    ([], []),
])
def test_prior_validation(grid, weights):
    with pytest.raises(ValidationError):
        Prior(grid, weights)


def test_prior_cdf_is_right_continuous_step():
    p = make_prior_uniform(4)
    np.testing.assert_allclose(p.cdf([0.0, 0.125, 0.2, 0.875, 1.0]), [0, 0.25, 0.25, 1.0, 1.0])


def test_perfect_and_pooled():
    p = make_prior_uniform(2)
    perf = perfect_segmentation(p)
    np.testing.assert_allclose(perf.weights, [0.5, 0.5])
    np.testing.assert_allclose(perf.posteriors, np.eye(2))
    pool = pooled_segmentation(p)
    np.testing.assert_allclose(pool.posteriors, [[0.5, 0.5]])
    assert pool.means(p)[0] == pytest.approx(0.5)
    one = make_prior_uniform(1)
    np.testing.assert_allclose(perfect_segmentation(one).posteriors, pooled_segmentation(one).posteriors)


@pytest.mark.parametrize("n, idx, means, weights", [
    (2, 1, (0.25, 0.75), (0.5, 0.5)),
    (4, 2, (0.25, 0.75), (0.5, 0.5)),
])
def test_binary_segmentation(n, idx, means, weights):
    p = make_prior_uniform(n)
    seg = binary_segmentation(p, idx)
    np.testing.assert_allclose(seg.means(p), means)
    np.testing.assert_allclose(seg.weights, weights)
    assert verify_consistency(p, seg)[0]


def test_binary_segmentation_split_atom():
    p = make_prior_uniform(4)
    seg = binary_segmentation(p, 2, split=0.5)
    np.testing.assert_allclose(seg.weights, [0.375, 0.625])
    assert seg.means(p)[1] == pytest.approx((0.5 * 0.25 * 0.375 + 0.25 * (0.625 + 0.875)) / 0.625)
    assert verify_consistency(p, seg)[0]


@pytest.mark.parametrize("n, idx, split", [(1, 1, 1.0), (3, 0, 1.0), (3, 4, 1.0), (3, 1, 0.0), (3, 3, 1.0), (3, 2, 1.5)])
def test_binary_segmentation_errors(n, idx, split):
    with pytest.raises(ValidationError):
        binary_segmentation(make_prior_uniform(n), idx, split)


def test_verify_consistency_examples():
    assert verify_consistency(make_prior_uniform(3), perfect_segmentation(make_prior_uniform(3)))[0]
    p2 = make_prior_uniform(2)
    ok, resid = verify_consistency(p2, Segmentation([1.0], [[0.6, 0.4]]))
    assert not ok and resid == pytest.approx(0.1)
    with pytest.raises(ValidationError):
        verify_consistency(make_prior_uniform(3), Segmentation([1.0], [[0.6, 0.4]]))


def test_verify_mpc_examples():
    p = make_prior_uniform(2)
    assert verify_mpc(p.grid, p.weights, p)
    assert verify_mpc([p.mean], [1.0], p)
    assert not verify_mpc([0.1, 0.9], [0.5, 0.5], p)
    with pytest.raises(ValidationError):
        verify_mpc([1.5], [1.0], p)


def test_verify_mpc_rejects_mean_shift():
    p = make_prior_uniform(4)
    assert not verify_mpc([0.5 + 1e-6], [1.0], p)


def test_posterior_mean_distribution_examples():
    p = make_prior_uniform(2)
    pts, m = posterior_mean_distribution(perfect_segmentation(p), p)
    np.testing.assert_allclose(pts, [0.25, 0.75])
    np.testing.assert_allclose(m, [0.5, 0.5])
    pts, m = posterior_mean_distribution(pooled_segmentation(p), p)
    np.testing.assert_allclose(pts, [0.5])
    np.testing.assert_allclose(m, [1.0])


def test_posterior_mean_distribution_merges_equal_means():
    p = make_prior_uniform(4)
    seg = segmentation_from_partition(p, [[0, 3], [1, 2]])
    pts, m = posterior_mean_distribution(seg, p)
    np.testing.assert_allclose(pts, [0.5])
    np.testing.assert_allclose(m, [1.0])


def test_hinge_moment_matches_integrated_cdf():
    p = make_prior_uniform(5)
    xs = np.linspace(0, 1, 101)
    # integral of the step CDF from 0 to x, by fine Riemann sum
    fine = np.linspace(0, 1, 200001)
    cdf = p.cdf(fine)
    integ = np.concatenate([[0.0], np.cumsum(cdf[:-1] * np.diff(fine))])
    np.testing.assert_allclose(hinge_moment(p.grid, p.weights, xs), np.interp(xs, fine, integ), atol=1e-5)


def test_segmentation_validation():
    with pytest.raises(ValidationError):
        Segmentation([0.5, 0.4], [[1, 0], [0, 1]])
    with pytest.raises(ValidationError):
        Segmentation([1.0], [[0.7, 0.4]])
    with pytest.raises(ValidationError):
        Segmentation([0.5, 0.5], [[1, 0]])
    with pytest.raises(ValidationError):
        segmentation_from_partition(make_prior_uniform(3), [[0, 1]])


def test_segmentation_dict_round_trip():
    p = make_prior_uniform(5)
    seg = binary_segmentation(p, 3, 0.25)
    back = Segmentation.from_dict(seg.to_dict())
    np.testing.assert_array_equal(back.weights, seg.weights)
    np.testing.assert_array_equal(back.posteriors, seg.posteriors)
    with pytest.raises(ValidationError):
        Segmentation.from_dict({"submarkets": [{"weight": 1.0, "posterior": [1.0], "x": 0}]})


def test_surplus_split():
    p = make_prior_uniform(3)
    np.testing.assert_allclose(SurplusSplit.constant(0.4).on(p), [0.4] * 3)
    tab = SurplusSplit.table([0.1, 0.2, 0.3])
    np.testing.assert_allclose(tab.prices(p), (1 - np.array([0.1, 0.2, 0.3])) * p.grid)
    with pytest.raises(ValidationError):
        SurplusSplit.table([0.1, 0.2]).on(p)
    with pytest.raises(ValidationError):
        SurplusSplit.constant(1.2)
    with pytest.raises(AssumptionError):
        SurplusSplit.constant(0.0).check_nontrivial(p)
    with pytest.raises(AssumptionError):
        SurplusSplit.table([0.0, 0.0, 0.0]).check_nontrivial(p)
    SurplusSplit.table([0.0, 0.0, 0.2]).check_nontrivial(p)


def test_feasibility_residual():
    p = make_prior_uniform(4)
    seg = binary_segmentation(p, 2)
    assert feasibility_residual(seg, [0.0, 2.0], 1.0) == pytest.approx(0.0)
    with pytest.raises(ValidationError):
        feasibility_residual(seg, [1.0], 1.0)


# -- properties ---------------------------------------------------------------------


@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_random_segmentations_are_consistent_contractions(n, s):
    rng = np.random.default_rng(s)
    p = make_prior_uniform(n) if s % 2 else Prior(np.sort(rng.choice(np.linspace(0, 1, 41), n, replace=False)),
                                                  rng.dirichlet(np.ones(n)))
    seg = random_segmentation(rng, p)
    assert verify_consistency(p, seg)[0]
    pts, m = posterior_mean_distribution(seg, p)
    assert verify_mpc(pts, m, p)
    assert abs(float(np.sum(pts * m)) - p.mean) <= 1e-12


@given(st.integers(2, 12), st.data())
def test_mpc_chain_pooled_binary_perfect(n, data):
    p = make_prior_uniform(n)
    idx = data.draw(st.integers(1, n - 1))
    chain = [pooled_segmentation(p), binary_segmentation(p, idx), perfect_segmentation(p)]
    dists = [posterior_mean_distribution(s, p) for s in chain]
    # each is a contraction of the next: check via a prior built on the finer distribution
    for (pa, ma), (pb, mb) in zip(dists, dists[1:]):
        assert verify_mpc(pa, ma, Prior(pb, mb))
