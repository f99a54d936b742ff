"""The incremental mixture importance sampler and its optimization stages.

One run is: draw an initial population from the prior, optionally seed
Gaussian mixture components at criterion optima found from the best initial
particles (the shotgun stage), then keep appending importance-stage
components at the current maximum-weight particle until the effective
uniformity criterion is met, and finally resample.

Everything random flows through named substreams keyed on the run seed, so
a run is bit-reproducible at any thread count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .estimators import FLOOD_OBJECTIVE, EstimatorResult
from .linalg_stats import (
    FLOOD_LOG_LIK,
    CovarianceMatrix,
    GaussianComponent,
    ProbeFailureError,
    log_sum_exp,
    mahalanobis_sq,
    make_covariance,
    mvn_logpdf,
    mvn_sample,
    normalize_log_weights,
    weighted_covariance,
)

VARIANTS = ("IMIS", "IMIS-Opt", "IMIS-ShOpt", "IMIS-ShOpt-SL", "IMIS-ShOpt-SIR")

# Substream labels: every consumer of randomness derives its generator from
# (run seed, label, indices...) so that no ordering or thread choice can
# shift anyone else's draws.
STREAM_PRIOR = 0
STREAM_SL_EVAL = 1
STREAM_CELL = 2
STREAM_CELL_HESS = 3
STREAM_COMPONENT = 4
STREAM_RESAMPLE = 5
STREAM_SUBSETS = 6
STREAM_DATA = 7
STREAM_TARGET = 8


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (seed, label, indices...) slot."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    )


class AllFloodError(RuntimeError):
    """Every particle of a stage flooded; the run cannot proceed."""


@dataclass
class RunConfig:
    """Counts and identity of one sampler run.

    ``q`` is the number of criteria per shotgun init; the IMIS-Opt variants
    ignore it (one criterion), plain IMIS has no optimization stage at all.
    """

    n0: int
    b: int
    d: int
    q: int
    j: int
    n_iter: int = 100
    variant: str = "IMIS-ShOpt"
    seed: int = 0
    threads: int = 1
    shotgun_methods: Optional[tuple] = None

    def __post_init__(self):
        for name in ("n0", "b", "d", "q", "j", "n_iter"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError("%s must be a positive integer" % name)
            setattr(self, name, int(value))
        if self.b < 2:
            raise ValueError("b must be at least 2 (component covariances need it)")
        if self.n0 < self.q * self.d:
            raise ValueError("need n0 >= q * d so each cell can exclude a candidate")
        if self.variant not in VARIANTS:
            raise ValueError("unknown variant %r" % (self.variant,))
        self.seed = int(self.seed)
        self.threads = max(1, int(self.threads))
        if self.shotgun_methods is not None:
            self.shotgun_methods = tuple(str(m) for m in self.shotgun_methods)


@dataclass
class ShotgunOutcome:
    """One optimizer cell's contribution: the fit and its mixture component."""

    result: EstimatorResult
    comp_mean: np.ndarray
    comp_cov: CovarianceMatrix
    context_value: Optional[float] = None
    d_index: int = -1
    q_index: int = -1


@dataclass
class ShotgunCell:
    """A labeled criterion: ``fit(theta_init, d_index) -> ShotgunOutcome``."""

    label: str
    fit: Callable[[np.ndarray, int], ShotgunOutcome]


@dataclass
class ParticleSystem:
    """All particles with their densities and the mixture bookkeeping.

    ``log_mix_sum`` caches, per particle, the log of the summed component
    densities; it is updated incrementally as components are appended and can
    be audited against a fresh recomputation.  ``candidate_mask`` marks which
    of the first ``n0`` prior-stage particles are still available as
    optimizer inits; appended particles never become candidates.
    """

    thetas: np.ndarray
    log_liks: np.ndarray
    log_priors: np.ndarray
    log_weights: np.ndarray
    log_mix_sum: np.ndarray
    candidate_mask: np.ndarray
    components: List[GaussianComponent] = field(default_factory=list)
    n0: int = 0
    b: int = 0
    sigma_pi: Optional[CovarianceMatrix] = None
    proposal_dims: np.ndarray = field(default_factory=lambda: np.arange(0))

    @property
    def n(self) -> int:
        return self.thetas.shape[0]


def initial_stage(model, config: RunConfig) -> ParticleSystem:
    """Draw the prior population and weight it by likelihood alone."""
    rng = substream(config.seed, STREAM_PRIOR)
    thetas = np.atleast_2d(model.prior_sample(rng, config.n0))
    log_priors = np.asarray(model.log_prior(thetas), dtype=float)
    log_liks = np.asarray(model.log_lik(thetas, np.arange(config.n0)), dtype=float)
    if np.max(log_liks) <= FLOOD_LOG_LIK:
        raise AllFloodError(
            "all %d initial particles flooded; check the data/model pairing"
            % config.n0
        )
    pd = np.asarray(model.proposal_dims, dtype=int)
    spread = np.cov(thetas[:, pd], rowvar=False, ddof=1)
    sigma_pi = make_covariance(np.atleast_2d(spread))
    return ParticleSystem(
        thetas=thetas,
        log_liks=log_liks,
        log_priors=log_priors,
        log_weights=normalize_log_weights(log_liks.copy()),
        log_mix_sum=np.full(config.n0, -np.inf),
        candidate_mask=np.ones(config.n0, dtype=bool),
        components=[],
        n0=config.n0,
        b=config.b,
        sigma_pi=sigma_pi,
        proposal_dims=pd,
    )


def mixture_log_weights(ps: ParticleSystem) -> None:
    """Recompute all particle weights under the current proposal mixture.

    The proposal density for particle i mixes the prior (weight N0/N) with
    the appended Gaussian components (weight B/N each); the weight is
    likelihood times prior over that mixture, normalized in log space.  With
    no components this reduces to likelihood-only weighting.
    """
    n = float(ps.n)
    prior_part = np.log(ps.n0 / n) + ps.log_priors
    if ps.components:
        mix_part = np.log(ps.b / n) + ps.log_mix_sum
        log_denom = np.logaddexp(prior_part, mix_part)
    else:
        log_denom = prior_part
    with np.errstate(invalid="ignore"):
        raw = ps.log_liks + ps.log_priors - log_denom
    raw[np.isneginf(ps.log_priors)] = -np.inf
    ps.log_weights = normalize_log_weights(raw)


def stopping_criterion(log_weights: np.ndarray, j: int):
    """Expected-unique-mass rule: sum(1 - (1 - w)^J) against J(1 - 1/e).

    Returns the boolean decision and the criterion value.  The per-particle
    term is computed as -expm1(J * log1p(-w)) so that weights near one are
    exact and weights near zero do not cancel.
    """
    w = np.exp(np.asarray(log_weights, dtype=float))
    with np.errstate(divide="ignore"):
        terms = -np.expm1(j * np.log1p(-np.minimum(w, 1.0)))
    crit = float(np.sum(terms))
    return crit >= j * (1.0 - np.exp(-1.0)), crit


def _append_component_batch(ps: ParticleSystem, model, config: RunConfig, comp: GaussianComponent):
    """Append one component and its B draws, keeping mixture sums incremental."""
    comp_index = len(ps.components)
    rng = substream(config.seed, STREAM_COMPONENT, comp_index)
    draws = mvn_sample(comp, config.b, rng)
    full = model.repopulate(draws, comp.context_value)
    start = ps.n
    new_priors = np.asarray(model.log_prior(full), dtype=float)
    new_liks = np.asarray(
        model.log_lik(full, np.arange(start, start + config.b)), dtype=float
    )

    # Existing particles gain one mixture term; new particles see everything.
    ps.log_mix_sum = np.logaddexp(
        ps.log_mix_sum, mvn_logpdf(ps.thetas[:, ps.proposal_dims], comp)
    )
    ps.components.append(comp)
    dens_new = np.stack([mvn_logpdf(draws, c) for c in ps.components])
    new_mix = log_sum_exp(dens_new, axis=0)

    ps.thetas = np.concatenate([ps.thetas, full])
    ps.log_liks = np.concatenate([ps.log_liks, new_liks])
    ps.log_priors = np.concatenate([ps.log_priors, new_priors])
    ps.log_mix_sum = np.concatenate([ps.log_mix_sum, np.atleast_1d(new_mix)])
    ps.log_weights = np.concatenate(
        [ps.log_weights, np.full(config.b, -np.inf)]
    )
    ps.candidate_mask = np.concatenate(
        [ps.candidate_mask, np.zeros(config.b, dtype=bool)]
    )


def _run_cells(cells, theta_init, d, threads):
    """Evaluate every cell, catching per-cell failures; order preserved."""

    def guarded(cell):
        try:
            return cell.fit(theta_init, d), None
        except (ProbeFailureError, np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
            return None, "%s: %s" % (type(exc).__name__, exc)

    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(guarded, cells))
    return [guarded(cell) for cell in cells]


def _outcome_usable(outcome: ShotgunOutcome) -> bool:
    if outcome is None:
        return False
    if not np.all(np.isfinite(outcome.result.theta_hat)):
        return False
    if outcome.comp_cov is None:
        return False
    return outcome.result.objective_value < FLOOD_OBJECTIVE


def shotgun_optimize(ps: ParticleSystem, model, config: RunConfig):
    """Seed mixture components at criterion optima from ranked prior inits.

    For each of D rounds the highest-weight remaining prior particle seeds
    every criterion cell; each usable cell optimum becomes a Gaussian
    component (mean at the optimum, covariance from the target curvature),
    excludes its floor(N0/(QD)) nearest remaining candidates, and appends B
    proposal draws.  Failed cells are skipped and logged, shrinking the
    component count rather than aborting.
    """
    cells = model.build_shotgun_cells(config)
    if not cells:
        raise ValueError("model built no shotgun cells for variant %s" % config.variant)
    n_excl = config.n0 // (len(cells) * config.d)
    outcomes: List[ShotgunOutcome] = []
    skipped = []
    for d in range(config.d):
        cand = np.flatnonzero(ps.candidate_mask)
        if cand.size == 0:
            skipped.append({"d": d, "cell": "*", "reason": "candidate pool exhausted"})
            break
        init_idx = int(cand[int(np.argmax(ps.log_weights[cand]))])
        theta_init = ps.thetas[init_idx].copy()
        ps.candidate_mask[init_idx] = False
        for q, (outcome, err) in enumerate(_run_cells(cells, theta_init, d, config.threads)):
            if err is not None or not _outcome_usable(outcome):
                skipped.append(
                    {
                        "d": d,
                        "cell": cells[q].label,
                        "reason": err or "non-finite or flooded optimum",
                    }
                )
                continue
            outcome.d_index = d
            outcome.q_index = q
            cand = np.flatnonzero(ps.candidate_mask)
            if cand.size and n_excl:
                dist = mahalanobis_sq(
                    ps.thetas[cand][:, ps.proposal_dims],
                    outcome.comp_mean,
                    outcome.comp_cov,
                )
                drop = np.argsort(dist, kind="stable")[:n_excl]
                ps.candidate_mask[cand[drop]] = False
            comp = GaussianComponent(
                np.asarray(outcome.comp_mean, dtype=float).copy(),
                outcome.comp_cov,
                provenance="optimizer-found",
                method=outcome.result.method,
                context_value=outcome.context_value,
            )
            _append_component_batch(ps, model, config, comp)
            outcomes.append(outcome)
    return outcomes, skipped


def importance_stage(ps: ParticleSystem, model, config: RunConfig) -> None:
    """Append one component at the current maximum-weight particle.

    The component covariance is the weighted scatter of the B particles
    closest to the center in weight-scaled prior-whitened distance, with
    scatter weights proportional to (importance weight + 1/N); uniform
    weights therefore reduce both steps to plain nearest-neighbor scatter.
    """
    pd = ps.proposal_dims
    k_idx = int(np.argmax(ps.log_weights))
    theta_k = ps.thetas[k_idx].copy()
    w = np.exp(ps.log_weights)
    n = ps.n
    w_p = w + 1.0 / n
    w_p = w_p / np.sum(w_p)
    dist = mahalanobis_sq(ps.thetas[:, pd], theta_k[pd], ps.sigma_pi)
    nearest = np.argsort(w_p * dist, kind="stable")[: config.b]
    scatter_w = w[nearest] + 1.0 / n
    scatter_w = scatter_w / np.sum(scatter_w)
    cov = weighted_covariance(ps.thetas[nearest][:, pd], scatter_w, theta_k[pd])
    context = None
    if getattr(model, "discrete_dims", ()):
        context = float(theta_k[model.discrete_dims[0]])
    comp = GaussianComponent(
        theta_k[pd].copy(),
        cov,
        provenance="importance-stage",
        context_value=context,
    )
    _append_component_batch(ps, model, config, comp)


def resample(ps: ParticleSystem, j: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial resampling of J parameter rows with replacement."""
    w = np.exp(ps.log_weights)
    idx = rng.choice(ps.n, size=int(j), replace=True, p=w / np.sum(w))
    return ps.thetas[idx].copy()


def audit_mixture_consistency(ps: ParticleSystem, max_check: int = 256) -> float:
    """Largest relative gap between cached and recomputed mixture log sums."""
    if not ps.components:
        return 0.0
    idx = np.linspace(0, ps.n - 1, min(max_check, ps.n)).astype(int)
    pts = ps.thetas[idx][:, ps.proposal_dims]
    dens = np.stack([mvn_logpdf(pts, c) for c in ps.components])
    fresh = log_sum_exp(dens, axis=0)
    cached = ps.log_mix_sum[idx]
    return float(np.max(np.abs(fresh - cached) / np.maximum(1.0, np.abs(fresh))))


@dataclass
class RunResult:
    resampled: np.ndarray
    particles: ParticleSystem
    report: dict
    outcomes: List[ShotgunOutcome]


def run(model, config: RunConfig) -> RunResult:
    """Execute one full sampler run and return draws plus diagnostics."""
    t_start = time.perf_counter()
    ps = initial_stage(model, config)
    if config.variant == "IMIS":
        outcomes, skipped = [], []
    else:
        outcomes, skipped = shotgun_optimize(ps, model, config)
    threshold = config.j * (1.0 - np.exp(-1.0))
    iterations = []
    stopped_by = "iteration-cap"
    for k in range(1, config.n_iter + 1):
        mixture_log_weights(ps)
        stop, crit = stopping_criterion(ps.log_weights, config.j)
        iterations.append(
            {
                "iteration": k,
                "n_particles": ps.n,
                "max_log_weight": float(np.max(ps.log_weights)),
                "criterion": crit,
            }
        )
        if stop:
            stopped_by = "criterion"
            break
        importance_stage(ps, model, config)
    mixture_log_weights(ps)
    resampled = resample(ps, config.j, substream(config.seed, STREAM_RESAMPLE))
    report = {
        "variant": config.variant,
        "seed": config.seed,
        "counts": {
            "n0": config.n0,
            "b": config.b,
            "d": config.d,
            "q": config.q,
            "j": config.j,
            "n_iter": config.n_iter,
        },
        "model": getattr(model, "name", "unknown"),
        "param_names": list(getattr(model, "param_names", ())),
        "n_particles": ps.n,
        "n_components": len(ps.components),
        "stopping_threshold": threshold,
        "stopped_by": stopped_by,
        "iterations": iterations,
        "skipped_cells": skipped,
        "modes": [
            {
                "method": oc.result.method,
                "d": oc.d_index,
                "q": oc.q_index,
                "theta_hat": oc.result.theta_hat.tolist(),
                "objective": oc.result.objective_value,
                "converged": bool(oc.result.converged),
                "context_value": oc.context_value,
            }
            for oc in outcomes
        ],
        "wall_time_s": time.perf_counter() - t_start,
    }
    return RunResult(resampled, ps, report, outcomes)
