import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from glmd.errors import ArgumentError
from glmd.metrics import (
    Z_95,
    TrialArchive,
    auc,
    coordinatewise_rmse,
    coverage,
    empirical_se,
    min_median_max,
    relative_report,
    wald_variances,
)


def _archive(estimates, variances=None, converged=None, method="one_step"):
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    if converged is None:
        converged = np.ones(estimates.shape[0], dtype=bool)
    return TrialArchive(method, estimates, variances, converged)


def test_archive_validation():
    with pytest.raises(ArgumentError):
        _archive(np.zeros((3, 2)), converged=[True, False])
    with pytest.raises(ArgumentError):
        _archive(np.zeros((3, 2)), variances=np.ones((3, 1)))
    with pytest.raises(ArgumentError):
        _archive(np.zeros((3, 2)), variances=np.zeros((3, 2)))


def test_converged_only_and_fraction():
    archive = _archive([[1.0], [2.0], [3.0], [4.0]], converged=[True, False, True, False])
    assert archive.nonconverged_fraction == 0.5
    kept = archive.converged_only()
    assert_array_equal(kept.estimates, [[1.0], [3.0]])
    assert _archive([[1.0]], converged=[False]).converged_only() is None


def test_rmse_examples():
    assert_array_equal(coordinatewise_rmse(_archive(np.tile([1.0, 2.0], (5, 1))), [1.0, 2.0]), [0.0, 0.0])
    assert coordinatewise_rmse(_archive([[0.0], [2.0]]), [1.0])[0] == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(ArgumentError):
        coordinatewise_rmse(_archive([[0.0], [2.0]]), [1.0, 2.0])


def test_rmse_matches_double_loop(rng):
    estimates = rng.standard_normal((50, 3))
    beta0 = rng.standard_normal(3)
    oracle = []
    for j in range(3):
        total = 0.0
        for t in range(50):
            total += (estimates[t, j] - beta0[j]) ** 2
        oracle.append((total / 50) ** 0.5)
    assert_allclose(coordinatewise_rmse(_archive(estimates), beta0), oracle, rtol=1e-14)


def test_rmse_is_trial_order_invariant(rng):
    estimates = rng.standard_normal((30, 2))
    beta0 = np.zeros(2)
    shuffled = estimates[rng.permutation(30)]
    assert_allclose(coordinatewise_rmse(_archive(estimates), beta0), coordinatewise_rmse(_archive(shuffled), beta0), rtol=1e-14)


def test_coverage_extremes():
    estimates = np.array([[0.5, -0.5], [1.5, 2.0]])
    assert_array_equal(coverage(_archive(estimates, np.full((2, 2), 1e12)), [0.0, 0.0]), [1.0, 1.0])
    assert_array_equal(coverage(_archive(estimates, np.full((2, 2), 1e-30)), [0.0, 0.0]), [0.0, 0.0])
    with pytest.raises(ArgumentError):
        coverage(_archive(estimates), [0.0, 0.0])


def test_coverage_of_gaussian_toy_is_nominal():
    rng = np.random.default_rng(2024)
    sigma = 0.3
    beta0 = np.array([1.0, -2.0])
    estimates = beta0 + sigma * rng.standard_normal((10_000, 2))
    cov = coverage(_archive(estimates, np.full_like(estimates, sigma**2)), beta0)
    assert np.all(np.abs(cov - 0.95) <= 0.02)
    assert Z_95 == 1.96


def test_empirical_se_examples(rng):
    assert_array_equal(empirical_se(np.tile([3.0, 4.0], (6, 1))), [0.0, 0.0])
    assert empirical_se(np.array([[0.0], [2.0]]))[0] == pytest.approx(np.sqrt(2.0), rel=1e-15)
    values = rng.standard_normal((100, 4))
    mean = values.sum(axis=0) / 100
    oracle = np.sqrt(((values - mean) ** 2).sum(axis=0) / 99)
    assert_allclose(empirical_se(values), oracle, rtol=1e-13)
    with pytest.raises(ArgumentError):
        empirical_se(np.ones((1, 3)))


def test_rmse_splits_into_bias_and_spread(rng):
    estimates = 0.3 + 0.1 * rng.standard_normal((50, 3))
    beta0 = np.array([0.25, 0.3, 0.35])
    archive = _archive(estimates)
    bias = estimates.mean(axis=0) - beta0
    se = empirical_se(estimates)
    trials = archive.trials
    assert_allclose(coordinatewise_rmse(archive, beta0) ** 2, bias**2 + (trials - 1) / trials * se**2, rtol=1e-12)


@pytest.mark.parametrize("transform", [np.exp, lambda s: 3.0 * s + 1.0, lambda s: s**3])
def test_auc_ignores_monotone_rescoring(rng, transform):
    scores = np.concatenate([rng.standard_normal(30), np.repeat([-0.5, 0.5], 5)])
    labels = (rng.random(40) < 0.5).astype(float)
    labels[0], labels[1] = 0.0, 1.0
    assert auc(transform(scores), labels) == auc(scores, labels)


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(ArgumentError):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(ArgumentError):
        auc([0.1, 0.2], [0, 2])


def test_auc_matches_pairwise_oracle(rng):
    scores = np.round(rng.standard_normal(40), 1)
    labels = (rng.random(40) < 0.4).astype(float)
    labels[0], labels[1] = 0.0, 1.0
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    assert auc(scores, labels) == pytest.approx(wins / (pos.size * neg.size), rel=1e-15)


def test_wald_variances_are_inverse_diagonal():
    fisher = np.array([[4.0, 1.0], [1.0, 2.0]])
    assert_allclose(wald_variances(fisher), np.diag(np.linalg.inv(fisher)), rtol=1e-13)


def test_relative_report_against_itself_and_doubled():
    beta0 = np.array([0.5, -0.5])
    estimates = beta0 + np.array([[0.1, -0.2], [-0.1, 0.2], [0.05, 0.0]])
    variances = np.full((3, 2), 0.01)
    base = _archive(estimates, variances, method="global")
    rows = relative_report(_archive(estimates, variances), base, beta0)
    assert [r.coord for r in rows] == [0, 1]
    for row in rows:
        assert row.re == pytest.approx(1.0)
        assert row.rc == pytest.approx(1.0)
        assert not row.baseline_rmse_zero

    doubled = _archive(beta0 + 2 * (estimates - beta0))
    for row in relative_report(doubled, base, beta0):
        assert row.re == pytest.approx(2.0, rel=1e-14)
        assert row.cpci is None
        assert row.rc is None


def test_relative_report_flags_zero_baseline():
    beta0 = np.array([1.0])
    base = _archive([[1.0], [1.0]], method="global")
    rows = relative_report(_archive([[0.5], [1.5]]), base, beta0)
    assert rows[0].re is None
    assert rows[0].baseline_rmse_zero
    assert rows[0].rmse == pytest.approx(0.5)


def test_min_median_max():
    assert min_median_max([3.0, None, 1.0, 2.0]) == (1.0, 2.0, 3.0)
    assert min_median_max([None]) == (None, None, None)
