"""Gaussian synthetic likelihood built from replicate summary statistics.

The observed series is reduced to a fixed battery of summaries; replicate
simulations at a candidate parameter provide the mean and covariance of the
same battery, and the synthetic log likelihood is the resulting Gaussian
log density up to the constant term.  Subsets of the battery double as
cheap optimization criteria for the shotgun stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg_stats import FLOOD_LOG_LIK

N_SUMMARY = 11
SUBSET_SIZE = 7

SUMMARY_LABELS = (
    "median",
    "mean",
    "mean_above_1",
    "sum_above_10",
    "n_zeros",
    "quantile_75",
    "max",
    "n_above_100",
    "n_above_300",
    "n_above_500",
    "sum_above_800",
)


@dataclass
class SyntheticLikelihoodSpec:
    """Replicate count, summary subset, and ridge for one criterion."""

    n_replicates: int = 30
    subset: tuple = tuple(range(N_SUMMARY))
    ridge: float = 1e-6

    def __post_init__(self):
        self.subset = tuple(int(i) for i in self.subset)
        if self.n_replicates < 2:
            raise ValueError("need at least 2 replicates for a covariance")
        if len(set(self.subset)) != len(self.subset):
            raise ValueError("subset indices must be distinct")
        if any(i < 0 or i >= N_SUMMARY for i in self.subset):
            raise ValueError("subset indices must lie in [0, %d)" % N_SUMMARY)
        if self.ridge < 0.0:
            raise ValueError("ridge must be non-negative")


def summary_stats_batch(counts: np.ndarray) -> np.ndarray:
    """Summary battery for a batch of count series.

    Parameters
    ----------
    counts : ndarray, shape (m, T)

    Returns
    -------
    ndarray, shape (m, N_SUMMARY)
        Columns ordered as ``SUMMARY_LABELS``.  Ratio statistics over an
        empty selection are zero.
    """
    y = np.atleast_2d(np.asarray(counts, dtype=float))
    m = y.shape[0]
    out = np.empty((m, N_SUMMARY))
    out[:, 0] = np.median(y, axis=1)
    out[:, 1] = np.mean(y, axis=1)
    above1 = y > 1.0
    n_above1 = np.sum(above1, axis=1)
    sum_above1 = np.sum(y * above1, axis=1)
    with np.errstate(invalid="ignore"):
        out[:, 2] = np.where(n_above1 > 0, sum_above1 / np.maximum(n_above1, 1), 0.0)
    out[:, 3] = np.sum(y * (y > 10.0), axis=1)
    out[:, 4] = np.sum(y == 0.0, axis=1)
    out[:, 5] = np.quantile(y, 0.75, axis=1)
    out[:, 6] = np.max(y, axis=1)
    out[:, 7] = np.sum(y > 100.0, axis=1)
    out[:, 8] = np.sum(y > 300.0, axis=1)
    out[:, 9] = np.sum(y > 500.0, axis=1)
    out[:, 10] = np.sum(y * (y > 800.0), axis=1)
    return out


def summary_stats(counts: np.ndarray) -> np.ndarray:
    """Summary battery of a single count series, shape (N_SUMMARY,)."""
    return summary_stats_batch(np.asarray(counts)[None, :])[0]


def synthetic_loglik_from_summaries(
    theta_summaries: np.ndarray,
    observed_summary: np.ndarray,
    spec: SyntheticLikelihoodSpec,
) -> float:
    """Gaussian synthetic log likelihood from precomputed replicate summaries.

    Parameters
    ----------
    theta_summaries : ndarray, shape (n_replicates, N_SUMMARY)
        Summary battery of each replicate simulated at the candidate theta.
    observed_summary : ndarray, shape (N_SUMMARY,)
    spec : SyntheticLikelihoodSpec
        Chooses the subset, validates the replicate count, and sets the
        diagonal ridge (``ridge * mean(diag)`` added to the diagonal).

    Returns
    -------
    float
        ``-0.5 * d' Sigma^{-1} d - 0.5 * log|Sigma|`` on the subset, or the
        flood constant when the covariance stays singular after the ridge.
    """
    stats = np.asarray(theta_summaries, dtype=float)
    if stats.ndim != 2 or stats.shape[1] != N_SUMMARY:
        raise ValueError("theta_summaries must be (n_replicates, %d)" % N_SUMMARY)
    if stats.shape[0] != spec.n_replicates:
        raise ValueError(
            "expected %d replicates, got %d" % (spec.n_replicates, stats.shape[0])
        )
    obs = np.asarray(observed_summary, dtype=float)
    if obs.shape != (N_SUMMARY,):
        raise ValueError("observed_summary must have length %d" % N_SUMMARY)
    idx = list(spec.subset)
    sub = stats[:, idx]
    mu = np.mean(sub, axis=0)
    centered = sub - mu
    sigma = centered.T @ centered / (sub.shape[0] - 1)
    sigma += spec.ridge * np.mean(np.diag(sigma)) * np.eye(len(idx))
    diff = obs[idx] - mu
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        return FLOOD_LOG_LIK
    z = np.linalg.solve(chol, diff)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    value = -0.5 * float(z @ z) - 0.5 * log_det
    return value if np.isfinite(value) else FLOOD_LOG_LIK


def synthetic_loglik(
    theta: np.ndarray,
    observed_summary: np.ndarray,
    spec: SyntheticLikelihoodSpec,
    simulator: Callable[[np.ndarray, int, np.random.Generator], tuple],
    rng: np.random.Generator,
) -> float:
    """Simulate the replicates at ``theta`` and score them.

    ``simulator(theta, n, rng)`` must return ``(counts, ok)`` with counts
    shaped ``(n, T)``; any flagged replicate floods the whole evaluation.
    Determinism in theta is the caller's job: hand in a fresh generator
    derived from the particle's own stream key, never a shared one.
    """
    counts, ok = simulator(theta, spec.n_replicates, rng)
    if not np.all(ok):
        return FLOOD_LOG_LIK
    return synthetic_loglik_from_summaries(
        summary_stats_batch(counts), observed_summary, spec
    )


def make_subset_criteria(
    n_criteria: int,
    rng: np.random.Generator,
    n_replicates: int = 30,
    ridge: float = 1e-6,
) -> list:
    """Draw ``n_criteria`` distinct size-7 summary subsets as criterion specs.

    Subsets are sorted index tuples, distinct as sets, drawn without
    replacement from the full battery.
    """
    n_possible = 330  # C(11, 7)
    if n_criteria < 1 or n_criteria > n_possible:
        raise ValueError("n_criteria must be in [1, %d]" % n_possible)
    seen = set()
    specs = []
    while len(specs) < n_criteria:
        pick = tuple(sorted(rng.choice(N_SUMMARY, size=SUBSET_SIZE, replace=False).tolist()))
        if pick in seen:
            continue
        seen.add(pick)
        specs.append(
            SyntheticLikelihoodSpec(n_replicates=n_replicates, subset=pick, ridge=ridge)
        )
    return specs
