"""Summary statistics and the Gaussian approximation built on them."""

import numpy as np
import pytest

from imis_shopt.linalg_stats import FLOOD_LOG_LIK
from imis_shopt.simulators import RickerParams, ricker_simulate_batch
from imis_shopt.synthetic_likelihood import (
    N_SUMMARY,
    SUBSET_SIZE,
    SUMMARY_LABELS,
    SyntheticLikelihoodSpec,
    make_subset_criteria,
    summary_stats,
    synthetic_loglik,
    synthetic_loglik_from_summaries,
)


def test_summary_labels_cover_all_statistics():
    assert len(SUMMARY_LABELS) == N_SUMMARY == 11
    assert SUBSET_SIZE == 7


def test_summary_stats_hand_checked_vector():
    y = np.array([0.0, 0.0, 2.0, 2.0])
    # median 1, mean 1, mean above one 2, nothing reaches the larger cuts
    expected = np.array([1.0, 1.0, 2.0, 0.0, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0])
    assert np.array_equal(summary_stats(y), expected)


def test_summary_stats_all_zeros():
    s = summary_stats(np.zeros(10))
    assert np.array_equal(
        s, np.array([0.0, 0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    )


def test_summary_stats_tail_counts_and_sums():
    y = np.array([1.0, 50.0, 150.0, 350.0, 900.0])
    s = dict(zip(SUMMARY_LABELS, summary_stats(y)))
    assert s["sum_above_10"] == 50.0 + 150.0 + 350.0 + 900.0
    assert s["n_above_100"] == 3.0
    assert s["n_above_300"] == 2.0
    assert s["n_above_500"] == 1.0
    assert s["sum_above_800"] == 900.0
    assert s["max"] == 900.0


def test_summary_stats_permutation_invariant():
    rng = np.random.default_rng(0)
    y = rng.poisson(30.0, size=50).astype(float)
    base = summary_stats(y)
    for _ in range(5):
        assert np.array_equal(summary_stats(rng.permutation(y)), base)


def test_zero_quadratic_form_leaves_only_the_normalizer():
    rng = np.random.default_rng(1)
    sims = rng.normal(5.0, 2.0, size=(30, N_SUMMARY))
    observed = sims.mean(axis=0)
    spec = SyntheticLikelihoodSpec(n_replicates=30, ridge=0.0)
    value = synthetic_loglik_from_summaries(sims, observed, spec)
    # observing the replicate mean zeroes the quadratic form exactly,
    # leaving minus half the log determinant; the column selection is
    # repeated here so the covariance matches bit for bit
    sub = sims[:, list(spec.subset)]
    centered = sub - sub.mean(axis=0)
    cov = centered.T @ centered / (sub.shape[0] - 1)
    chol = np.linalg.cholesky(cov)
    assert value == -float(np.sum(np.log(np.diag(chol))))


def test_synthetic_loglik_small_matrix_oracle():
    # a two-index subset with three replicates is small enough to do by hand
    rng = np.random.default_rng(4)
    sims = rng.normal(size=(3, N_SUMMARY))
    sims[:, 0] = [0.0, 1.0, 0.0]
    sims[:, 1] = [0.0, 0.0, 2.0]
    observed = rng.normal(size=N_SUMMARY)
    observed[0] = observed[1] = 1.0
    spec = SyntheticLikelihoodSpec(n_replicates=3, subset=(0, 1), ridge=0.0)
    pair = sims[:, :2]
    mu = pair.mean(axis=0)
    cov = np.cov(pair.T, ddof=1)
    diff = np.array([1.0, 1.0]) - mu
    expected = -0.5 * diff @ np.linalg.solve(cov, diff) - 0.5 * np.log(
        np.linalg.det(cov)
    )
    value = synthetic_loglik_from_summaries(sims, observed, spec)
    assert value == pytest.approx(expected, abs=1e-12)


def test_subset_projection_matches_manual_computation():
    rng = np.random.default_rng(2)
    sims = rng.normal(size=(25, N_SUMMARY)) @ np.diag(np.arange(1.0, 12.0))
    observed = rng.normal(size=N_SUMMARY)
    subset = (0, 2, 3, 5, 7, 8, 10)
    spec = SyntheticLikelihoodSpec(n_replicates=25, subset=subset, ridge=1e-6)
    idx = np.array(subset)
    sub = sims[:, idx]
    mu = sub.mean(axis=0)
    centered = sub - mu
    cov = centered.T @ centered / 24.0
    cov += 1e-6 * np.mean(np.diag(cov)) * np.eye(7)
    diff = observed[idx] - mu
    expected = -0.5 * diff @ np.linalg.solve(cov, diff) - 0.5 * np.linalg.slogdet(
        cov
    )[1]
    value = synthetic_loglik_from_summaries(sims, observed, spec)
    assert value == pytest.approx(expected, rel=1e-12)


def test_singular_covariance_floods_without_ridge():
    sims = np.zeros((10, N_SUMMARY))
    observed = np.ones(N_SUMMARY)
    spec = SyntheticLikelihoodSpec(n_replicates=10, ridge=0.0)
    assert synthetic_loglik_from_summaries(sims, observed, spec) == FLOOD_LOG_LIK


def test_ridge_rescues_singular_covariance():
    rng = np.random.default_rng(3)
    sims = rng.normal(size=(10, N_SUMMARY))
    sims[:, 4] = 7.0
    observed = sims.mean(axis=0)
    spec = SyntheticLikelihoodSpec(n_replicates=10, ridge=1e-6)
    assert np.isfinite(synthetic_loglik_from_summaries(sims, observed, spec))


def test_replicate_count_and_shape_validation():
    spec = SyntheticLikelihoodSpec(n_replicates=10)
    with pytest.raises(ValueError):
        synthetic_loglik_from_summaries(
            np.zeros((9, N_SUMMARY)), np.zeros(N_SUMMARY), spec
        )
    with pytest.raises(ValueError):
        synthetic_loglik_from_summaries(
            np.zeros((10, 5)), np.zeros(N_SUMMARY), spec
        )


def test_synthetic_loglik_floods_when_replicates_leave_domain():
    spec = SyntheticLikelihoodSpec(n_replicates=5)

    def simulator(theta, n, rng):
        counts = np.ones((n, 8))
        ok = np.ones(n, dtype=bool)
        ok[0] = False
        return counts, ok

    value = synthetic_loglik(
        np.zeros(4), np.ones(N_SUMMARY), spec, simulator, np.random.default_rng(0)
    )
    assert value == FLOOD_LOG_LIK


def test_synthetic_loglik_discriminates_ricker_growth_rates():
    """The full 11-statistic approximation should separate far-apart regimes."""
    truth = RickerParams(log_r=0.5, phi=4.0, sigma2_p=0.01, log_theta_tilde=1.0)
    rng = np.random.default_rng(42)
    counts, _, ok = ricker_simulate_batch(truth, 1, rng)
    assert ok[0]
    observed = summary_stats(counts[0])
    spec = SyntheticLikelihoodSpec(n_replicates=30)

    def simulator_at(log_r):
        def simulator(theta, n, rng_inner):
            params = RickerParams(
                log_r=log_r, phi=4.0, sigma2_p=0.01, log_theta_tilde=1.0
            )
            c, _, okay = ricker_simulate_batch(params, n, rng_inner)
            return c, okay

        return simulator

    wins = 0
    for trial in range(100):
        rng_true = np.random.default_rng(1000 + trial)
        rng_far = np.random.default_rng(5000 + trial)
        at_truth = synthetic_loglik(
            np.zeros(4), observed, spec, simulator_at(0.5), rng_true
        )
        far_away = synthetic_loglik(
            np.zeros(4), observed, spec, simulator_at(2.5), rng_far
        )
        wins += int(at_truth > far_away)
    assert wins >= 95


def test_make_subset_criteria_properties():
    rng = np.random.default_rng(7)
    specs = make_subset_criteria(12, rng, n_replicates=30, ridge=1e-6)
    assert len(specs) == 12
    seen = set()
    for spec in specs:
        assert len(spec.subset) == SUBSET_SIZE
        assert spec.subset == tuple(sorted(spec.subset))
        assert all(0 <= i < N_SUMMARY for i in spec.subset)
        assert spec.n_replicates == 30
        seen.add(spec.subset)
    assert len(seen) == 12


def test_make_subset_criteria_deterministic_and_bounded():
    a = make_subset_criteria(5, np.random.default_rng(8))
    b = make_subset_criteria(5, np.random.default_rng(8))
    assert [s.subset for s in a] == [s.subset for s in b]
    with pytest.raises(ValueError):
        make_subset_criteria(331, np.random.default_rng(8))


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticLikelihoodSpec(n_replicates=1)
    with pytest.raises(ValueError):
        SyntheticLikelihoodSpec(subset=(0, 0, 1, 2, 3, 4, 5))
    with pytest.raises(ValueError):
        SyntheticLikelihoodSpec(subset=(0, 1, 2, 3, 4, 5, 11))
    with pytest.raises(ValueError):
        SyntheticLikelihoodSpec(ridge=-1e-9)
