"""Model definitions: priors, likelihoods, and the shotgun criteria they use.

Each model bundles everything the sampler needs behind one interface: prior
sampling and density, batched log likelihood, the target log posterior for
curvature evaluation, the proposal geometry (which coordinates the Gaussian
components live on), and a builder for the optimizer cells of the shotgun
stage.  Log likelihoods never return -inf; numerical failure floods to
``FLOOD_LOG_LIK`` while -inf is reserved for prior support violations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import stats
from scipy.special import gammaln, xlogy

from .estimators import (
    EstimatorResult,
    OdeFitProblem,
    default_bandwidth,
    gp_outer_fit,
    make_basis,
    maximize_logpdf,
    nls_fit,
    two_stage_fit,
)
from .imis_core import (
    STREAM_CELL,
    STREAM_CELL_HESS,
    STREAM_SL_EVAL,
    STREAM_SUBSETS,
    STREAM_TARGET,
    ShotgunCell,
    ShotgunOutcome,
    substream,
)
from .linalg_stats import FLOOD_LOG_LIK, make_covariance
from .ode_engine import (
    FHN_STEP,
    SIR_STEP,
    fhn_default_grid,
    fhn_rhs,
    fhn_rhs_state_jac,
    sir_rhs,
    sir_rhs_state_jac,
    solve_rk4_batch,
)
from .simulators import (
    SIR_N_POP,
    ObservationSet,
    RickerParams,
    generate_fhn_data,
    generate_sir_data,
    ricker_simulate,
    ricker_simulate_batch,
)
from .synthetic_likelihood import (
    N_SUMMARY,
    SyntheticLikelihoodSpec,
    make_subset_criteria,
    summary_stats,
    synthetic_loglik,
)

MODEL_NAMES = ("fhn1", "fhn2", "sir", "ricker")

FHN_PARAM_NAMES = ("a", "b", "c", "sigma2_V", "sigma2_R", "V0", "R0")
FHN_TRUTH = np.array([0.2, 0.2, 3.0, 0.0025, 0.0025, -1.0, 1.0])

SIR_PARAM_NAMES = ("alpha", "beta", "I0")
SIR_I0_PRIOR = (SIR_N_POP, 5.0 / SIR_N_POP)

RICKER_PARAM_NAMES = ("log_r", "phi", "sigma2_p", "log_theta_tilde")
RICKER_TRUTH = np.array([0.5, 4.0, 0.01, 1.0])

# Parameter vectors used when a dataset is generated rather than loaded.
DEFAULT_GENERATION_THETA = {
    "fhn1": FHN_TRUTH.copy(),
    "fhn2": FHN_TRUTH.copy(),
    "sir": np.array([0.09, 0.0006, 4.0]),
    "ricker": RICKER_TRUTH.copy(),
}


@dataclass
class ModelSpec:
    """Everything the sampler needs to know about one inference problem."""

    name: str
    param_names: tuple
    proposal_dims: tuple
    discrete_dims: tuple
    data: ObservationSet
    prior_sample: Callable[[np.random.Generator, int], np.ndarray]
    log_prior: Callable[[np.ndarray], np.ndarray]
    log_lik: Callable[[np.ndarray, Optional[np.ndarray]], np.ndarray]
    target_logpdf: Callable[[np.ndarray], float]
    build_shotgun_cells: Callable
    repopulate: Callable[[np.ndarray, Optional[float]], np.ndarray]
    prior_scale: Optional[np.ndarray] = None

    @property
    def n_params(self) -> int:
        return len(self.param_names)


def _normal_sd(spread: float, spread_mode: str) -> float:
    if spread_mode == "sd":
        return float(spread)
    if spread_mode == "var":
        return float(np.sqrt(spread))
    raise ValueError("normal_spread must be 'sd' or 'var', got %r" % (spread_mode,))


def _copy_draws(draws: np.ndarray, context_value: Optional[float]) -> np.ndarray:
    return np.array(draws, dtype=float, copy=True)


# ---------------------------------------------------------------------------
# FitzHugh-Nagumo


def _fhn_embed(thetas: np.ndarray, free_idx: tuple) -> np.ndarray:
    th = np.atleast_2d(np.asarray(thetas, dtype=float))
    full = np.tile(FHN_TRUTH, (th.shape[0], 1))
    full[:, free_idx] = th
    return full


def _fhn_loglik(full: np.ndarray, data: ObservationSet) -> np.ndarray:
    """Gaussian log likelihood of both observed states, flooded on trouble."""
    with np.errstate(all="ignore"):
        bad = (full[:, 3] <= 0.0) | (full[:, 4] <= 0.0) | (np.abs(full[:, 2]) < 1e-8)
        params = full[:, 0:3].copy()
        params[bad, 2] = 1.0
        states, ok = solve_rk4_batch(
            fhn_rhs, full[:, 5:7], params, data.times, FHN_STEP
        )
        ok &= ~bad
        resid = states - data.values[None, :, :]
        sse = np.sum(resid * resid, axis=1)
        n_obs = data.times.shape[0]
        s2 = full[:, 3:5]
        ll = -0.5 * np.sum(n_obs * np.log(2.0 * np.pi * s2) + sse / s2, axis=1)
    return np.where(ok & np.isfinite(ll), ll, FLOOD_LOG_LIK)


def _cap_component_cov(cov, scale, factor=2.0):
    """Bound a proposal covariance to a few prior widths per direction.

    Curvature taken away from a stationary point can be arbitrarily flat, and
    inverting it produces spreads thousands of prior widths across; every
    draw from such a component lands outside the prior support and the
    component is wasted.  Clipping the prior-whitened eigenvalues keeps those
    directions wide but usable.  Covariances already inside the bound pass
    through untouched.
    """
    if cov is None:
        return None
    scale = np.asarray(scale, dtype=float)
    white = cov.entries / np.outer(scale, scale)
    vals, vecs = np.linalg.eigh(0.5 * (white + white.T))
    if float(np.max(vals)) <= factor**2:
        return cov
    clipped = np.clip(vals, None, factor**2)
    white = (vecs * clipped) @ vecs.T
    entries = white * np.outer(scale, scale)
    return make_covariance(0.5 * (entries + entries.T))


def _make_fhn_cells(model, problem, variant, config):
    data = model.data
    basis_cache = {}
    full_dim = model.n_params == 7
    # In the seven-parameter problem each criterion identifies a subset of
    # coordinates: least squares never sees the noise variances, and the
    # smoothing criteria depend only on the rate constants.  The rest stay
    # at their init values instead of drifting on flat directions.
    free_for = {
        "NLS": (0, 1, 2, 5, 6) if full_dim else None,
        "TwoStage": (0, 1, 2) if full_dim else None,
        "GP": (0, 1, 2) if full_dim else None,
    }

    def get_basis():
        if "basis" not in basis_cache:
            basis_cache["basis"] = make_basis(data.times)
        return basis_cache["basis"]

    def make_fit(method):
        def fit(theta_init, d):
            if method == "NLS":
                res = nls_fit(
                    problem, data, theta_init, model.target_logpdf,
                    free_idx=free_for["NLS"],
                )
            elif method == "TwoStage":
                # Half the generic bandwidth: the sharp relaxation fronts
                # need a tight window or the derivative estimates (and with
                # them the rate constants) bias low.
                res = two_stage_fit(
                    problem, data, theta_init, model.target_logpdf,
                    bandwidth=0.5 * default_bandwidth(data.times),
                    free_idx=free_for["TwoStage"],
                )
            elif method == "GP":
                res = gp_outer_fit(
                    problem, data, theta_init, model.target_logpdf,
                    basis=get_basis(), free_idx=free_for["GP"],
                )
            else:
                raise ValueError("unknown shotgun method %r" % (method,))
            cov = _cap_component_cov(res.inv_neg_hessian, model.prior_scale)
            return ShotgunOutcome(res, res.theta_hat.copy(), cov)

        return fit

    if variant == "IMIS-Opt":
        methods = ("NLS",)
    else:
        methods = getattr(config, "shotgun_methods", None) or ("NLS", "TwoStage", "GP")
    return [ShotgunCell(m, make_fit(m)) for m in methods]


def _make_fhn_spec(
    name: str,
    data: ObservationSet,
    priors: dict,
) -> ModelSpec:
    spread_mode = priors.get("normal_spread", "sd")
    c_loc, c_spread = priors.get("fhn_c", (14.0, 2.0))
    c_sd = _normal_sd(c_spread, spread_mode)
    ab_sd = _normal_sd(0.4, spread_mode)
    x0_sd = _normal_sd(0.5, spread_mode)
    ig_shape, ig_scale = 3.0, 3.0

    ig_sd = ig_scale / ((ig_shape - 1.0) * np.sqrt(ig_shape - 2.0))

    if name == "fhn1":
        free_idx = (2,)
        param_names = ("c",)
        prior_scale = np.array([c_sd])

        def prior_sample(rng, n):
            return rng.normal(c_loc, c_sd, size=(n, 1))

        def log_prior(thetas):
            th = np.atleast_2d(np.asarray(thetas, dtype=float))
            return stats.norm.logpdf(th[:, 0], loc=c_loc, scale=c_sd)

    else:
        free_idx = tuple(range(7))
        param_names = FHN_PARAM_NAMES
        prior_scale = np.array([ab_sd, ab_sd, c_sd, ig_sd, ig_sd, x0_sd, x0_sd])

        def prior_sample(rng, n):
            return np.column_stack(
                [
                    rng.normal(0.0, ab_sd, n),
                    rng.normal(0.0, ab_sd, n),
                    rng.normal(c_loc, c_sd, n),
                    ig_scale / rng.gamma(ig_shape, 1.0, n),
                    ig_scale / rng.gamma(ig_shape, 1.0, n),
                    rng.normal(-1.0, x0_sd, n),
                    rng.normal(1.0, x0_sd, n),
                ]
            )

        def log_prior(thetas):
            th = np.atleast_2d(np.asarray(thetas, dtype=float))
            out = stats.norm.logpdf(th[:, 0], 0.0, ab_sd)
            out = out + stats.norm.logpdf(th[:, 1], 0.0, ab_sd)
            out = out + stats.norm.logpdf(th[:, 2], c_loc, c_sd)
            out = out + stats.invgamma.logpdf(th[:, 3], ig_shape, scale=ig_scale)
            out = out + stats.invgamma.logpdf(th[:, 4], ig_shape, scale=ig_scale)
            out = out + stats.norm.logpdf(th[:, 5], -1.0, x0_sd)
            out = out + stats.norm.logpdf(th[:, 6], 1.0, x0_sd)
            return out

    def log_lik(thetas, particle_indices=None):
        return _fhn_loglik(_fhn_embed(thetas, free_idx), data)

    def target_logpdf(theta):
        th = np.atleast_2d(np.asarray(theta, dtype=float))
        lp = float(log_prior(th)[0])
        if not np.isfinite(lp):
            return -np.inf
        return float(log_lik(th)[0]) + lp

    def theta_to_ode(theta_free):
        full = _fhn_embed(theta_free, free_idx)[0]
        return full[0:3], full[5:7]

    problem = OdeFitProblem(
        rhs=fhn_rhs,
        rhs_state_jac=fhn_rhs_state_jac,
        theta_to_ode=theta_to_ode,
        t_grid=data.times,
        step=FHN_STEP,
        n_states=2,
        obs_state_idx=(0, 1),
    )

    model = ModelSpec(
        name=name,
        param_names=param_names,
        proposal_dims=tuple(range(len(param_names))),
        discrete_dims=(),
        data=data,
        prior_sample=prior_sample,
        log_prior=log_prior,
        log_lik=log_lik,
        target_logpdf=target_logpdf,
        build_shotgun_cells=None,
        repopulate=_copy_draws,
        prior_scale=prior_scale,
    )
    model.build_shotgun_cells = lambda config: _make_fhn_cells(
        model, problem, config.variant, config
    )
    return model


# ---------------------------------------------------------------------------
# SIR with a latent integer introduction size


def _binom_logpmf(k, n, p):
    """Vectorized binomial log pmf with the 0 log 0 = 0 convention."""
    k = np.asarray(k, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (
            gammaln(n + 1.0)
            - gammaln(k + 1.0)
            - gammaln(n - k + 1.0)
            + xlogy(k, p)
            + xlogy(n - k, 1.0 - p)
        )
    return out


def _sir_loglik(thetas: np.ndarray, data: ObservationSet, n_pop: int) -> np.ndarray:
    th = np.atleast_2d(np.asarray(thetas, dtype=float))
    n = th.shape[0]
    i0 = np.round(th[:, 2])
    bad = (np.abs(th[:, 2] - i0) > 1e-6) | (i0 < 0) | (i0 > n_pop)
    i0_safe = np.clip(i0, 0.0, float(n_pop))
    x0 = np.column_stack([n_pop - i0_safe, i0_safe, np.zeros(n)])
    states, ok = solve_rk4_batch(
        sir_rhs,
        x0,
        th[:, 0:2],
        data.times,
        SIR_STEP,
        state_lower=-1e-6,
        state_upper=n_pop + 1e-6,
    )
    ok &= ~bad
    deaths = data.values[:, 0]
    p_dead = np.clip(states[:, :, 2] / n_pop, 0.0, 1.0)
    ll = np.sum(_binom_logpmf(deaths[None, :], n_pop, p_dead), axis=1)
    inf_mask = np.isfinite(data.values[:, 1])
    if np.any(inf_mask):
        x_inf = data.values[inf_mask, 1]
        p_inf = np.clip(states[:, inf_mask, 1] / n_pop, 0.0, 1.0)
        ll = ll + np.sum(_binom_logpmf(x_inf[None, :], n_pop, p_inf), axis=1)
    return np.where(ok & np.isfinite(ll), ll, FLOOD_LOG_LIK)


def _sir_conditional_fit(data, n_pop, i0_value, theta_init, maxiter=150):
    """Least-squares fit of (alpha, beta) holding the introduction size fixed.

    The search objective integrates at five times the reporting step: the
    epidemic curves are smooth enough that the optimum moves by less than
    the component widths, and the curvature (and all importance weights)
    still use the exact step.  Cuts each cell's cost roughly fivefold.
    """
    x0 = np.array([n_pop - float(i0_value), float(i0_value), 0.0])
    problem = OdeFitProblem(
        rhs=sir_rhs,
        rhs_state_jac=sir_rhs_state_jac,
        theta_to_ode=lambda ab: (np.asarray(ab, dtype=float), x0),
        t_grid=data.times,
        step=5.0 * SIR_STEP,
        n_states=3,
        obs_state_idx=(2, 1),
        state_lower=-1e-6,
        state_upper=n_pop + 1e-6,
    )

    def conditional_target(ab):
        if ab[0] < 0.0 or ab[1] < 0.0:
            return -np.inf
        ll = float(
            _sir_loglik(np.array([[ab[0], ab[1], float(i0_value)]]), data, n_pop)[0]
        )
        return ll - float(ab[0]) - float(ab[1])

    res = nls_fit(
        problem,
        data,
        np.asarray(theta_init, dtype=float)[:2],
        conditional_target,
        method_label="ConditionalNLS",
        maxiter=maxiter,
    )
    return res


def _sir_outcome_from_fit(res: EstimatorResult, i0_value, theta_init) -> ShotgunOutcome:
    theta_full = np.append(res.theta_hat, float(i0_value))
    result = EstimatorResult(
        theta_full,
        res.inv_neg_hessian,
        res.objective_value,
        res.method,
        res.converged,
        np.asarray(theta_init, dtype=float).copy(),
    )
    return ShotgunOutcome(
        result, res.theta_hat.copy(), res.inv_neg_hessian, float(i0_value)
    )


def _make_sir_cells(model, config, n_pop):
    data = model.data
    if config.variant in ("IMIS-ShOpt", "IMIS-ShOpt-SIR"):
        def make_fit(q):
            def fit(theta_init, d):
                res = _sir_conditional_fit(data, n_pop, q, theta_init)
                return _sir_outcome_from_fit(res, q, theta_init)

            return fit

        return [
            ShotgunCell("ConditionalNLS[I0=%d]" % q, make_fit(q))
            for q in range(1, config.q + 1)
        ]

    def fit_best(theta_init, d):
        # A single optimizer on the target: pick the introduction size with
        # the best conditional posterior at the init, then fit that one.
        ab = np.asarray(theta_init, dtype=float)[:2]
        sizes = np.arange(1.0, config.q + 1.0)
        cand = np.column_stack([np.tile(ab, (config.q, 1)), sizes])
        post = _sir_loglik(cand, data, n_pop) - ab[0] - ab[1]
        q_star = int(sizes[np.argmax(post)])
        res = _sir_conditional_fit(data, n_pop, q_star, theta_init)
        return _sir_outcome_from_fit(res, q_star, theta_init)

    return [ShotgunCell("ConditionalNLS[argmax]", fit_best)]


def _make_sir_spec(data: ObservationSet, priors: dict) -> ModelSpec:
    n_pop = int(data.meta.get("n_pop", SIR_N_POP))
    i0_n, i0_p = SIR_I0_PRIOR

    def prior_sample(rng, n):
        return np.column_stack(
            [
                rng.gamma(1.0, 1.0, n),
                rng.gamma(1.0, 1.0, n),
                rng.binomial(i0_n, i0_p, n).astype(float),
            ]
        )

    def log_prior(thetas):
        th = np.atleast_2d(np.asarray(thetas, dtype=float))
        with np.errstate(invalid="ignore"):
            out = np.where(th[:, 0] >= 0.0, -th[:, 0], -np.inf)
            out = out + np.where(th[:, 1] >= 0.0, -th[:, 1], -np.inf)
        i0 = np.round(th[:, 2])
        ok = (np.abs(th[:, 2] - i0) <= 1e-6) & (i0 >= 0) & (i0 <= i0_n)
        pmf = np.full(th.shape[0], -np.inf)
        if np.any(ok):
            pmf[ok] = stats.binom.logpmf(i0[ok], i0_n, i0_p)
        return out + pmf

    def log_lik(thetas, particle_indices=None):
        return _sir_loglik(thetas, data, n_pop)

    def target_logpdf(theta):
        th = np.atleast_2d(np.asarray(theta, dtype=float))
        lp = float(log_prior(th)[0])
        if not np.isfinite(lp):
            return -np.inf
        return float(log_lik(th)[0]) + lp

    def repopulate(draws, context_value):
        draws = np.atleast_2d(np.asarray(draws, dtype=float))
        if context_value is None:
            raise ValueError("SIR components must carry the conditioning I0")
        return np.column_stack(
            [draws, np.full(draws.shape[0], float(context_value))]
        )

    model = ModelSpec(
        name="sir",
        param_names=SIR_PARAM_NAMES,
        proposal_dims=(0, 1),
        discrete_dims=(2,),
        data=data,
        prior_sample=prior_sample,
        log_prior=log_prior,
        log_lik=log_lik,
        target_logpdf=target_logpdf,
        build_shotgun_cells=None,
        repopulate=repopulate,
    )
    model.build_shotgun_cells = lambda config: _make_sir_cells(model, config, n_pop)
    return model


# ---------------------------------------------------------------------------
# theta-Ricker under a synthetic likelihood


def _ricker_sl_eval(theta, observed_summary, spec, rng):
    th = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(th)) or th[1] <= 0.0 or th[2] < 0.0:
        return FLOOD_LOG_LIK

    def simulator(theta_inner, n, rng_inner):
        params = RickerParams(
            log_r=float(th[0]),
            phi=float(th[1]),
            sigma2_p=float(th[2]),
            log_theta_tilde=float(th[3]),
        )
        counts, _, ok = ricker_simulate_batch(params, n, rng_inner)
        return counts, ok

    return synthetic_loglik(th, observed_summary, spec, simulator, rng)


def _make_ricker_cells(model, config, run_seed, observed_summary, full_spec):
    subset_rng = substream(run_seed, STREAM_SUBSETS)
    subset_specs = make_subset_criteria(
        config.q,
        subset_rng,
        n_replicates=full_spec.n_replicates,
        ridge=full_spec.ridge,
    )

    def make_fit(q, sub_spec):
        def fit(theta_init, d):
            def criterion(th):
                return _ricker_sl_eval(
                    th, observed_summary, sub_spec, substream(run_seed, STREAM_CELL, d, q)
                )

            def target(th):
                return _ricker_sl_eval(
                    th,
                    observed_summary,
                    full_spec,
                    substream(run_seed, STREAM_CELL_HESS, d, q),
                )

            res = maximize_logpdf(criterion, theta_init, target, "SyntheticSubset")
            return ShotgunOutcome(res, res.theta_hat.copy(), res.inv_neg_hessian)

        return fit

    return [
        ShotgunCell("SyntheticSubset%s" % (spec.subset,), make_fit(q, spec))
        for q, spec in enumerate(subset_specs)
    ]


def _make_ricker_spec(data: ObservationSet, run_seed: int, sl_opts: dict) -> ModelSpec:
    observed_summary = summary_stats(data.values[:, 0])
    full_spec = SyntheticLikelihoodSpec(
        n_replicates=int(sl_opts.get("n_replicates", 30)),
        subset=tuple(range(N_SUMMARY)),
        ridge=float(sl_opts.get("ridge", 1e-6)),
    )

    def prior_sample(rng, n):
        return np.column_stack(
            [
                rng.normal(0.5, 1.0, n),
                rng.chisquare(4.0, n),
                0.05 / rng.gamma(2.0, 1.0, n),
                rng.normal(1.0, 1.0, n),
            ]
        )

    def log_prior(thetas):
        th = np.atleast_2d(np.asarray(thetas, dtype=float))
        out = stats.norm.logpdf(th[:, 0], 0.5, 1.0)
        out = out + stats.chi2.logpdf(th[:, 1], 4.0)
        out = out + stats.invgamma.logpdf(th[:, 2], 2.0, scale=0.05)
        out = out + stats.norm.logpdf(th[:, 3], 1.0, 1.0)
        return out

    def log_lik(thetas, particle_indices=None):
        th = np.atleast_2d(np.asarray(thetas, dtype=float))
        if particle_indices is None:
            raise ValueError("ricker log_lik needs particle indices for its streams")
        idx = np.asarray(particle_indices)
        out = np.empty(th.shape[0])
        for i in range(th.shape[0]):
            rng = substream(run_seed, STREAM_SL_EVAL, int(idx[i]))
            out[i] = _ricker_sl_eval(th[i], observed_summary, full_spec, rng)
        return out

    def target_logpdf(theta):
        th = np.atleast_2d(np.asarray(theta, dtype=float))
        lp = float(log_prior(th)[0])
        if not np.isfinite(lp):
            return -np.inf
        value = _ricker_sl_eval(
            th[0], observed_summary, full_spec, substream(run_seed, STREAM_TARGET)
        )
        return value + lp

    model = ModelSpec(
        name="ricker",
        param_names=RICKER_PARAM_NAMES,
        proposal_dims=tuple(range(4)),
        discrete_dims=(),
        data=data,
        prior_sample=prior_sample,
        log_prior=log_prior,
        log_lik=log_lik,
        target_logpdf=target_logpdf,
        build_shotgun_cells=None,
        repopulate=_copy_draws,
    )
    model.build_shotgun_cells = lambda config: _make_ricker_cells(
        model, config, run_seed, observed_summary, full_spec
    )
    return model


# ---------------------------------------------------------------------------
# Registry


def get_model(
    name: str,
    data: ObservationSet,
    run_seed: int = 0,
    priors: Optional[dict] = None,
    sl: Optional[dict] = None,
) -> ModelSpec:
    """Build the named model around a dataset.

    ``priors`` may override the normal-spread reading (``{"normal_spread":
    "sd"|"var"}``) and the location/spread of the FitzHugh-Nagumo c prior
    (``{"fhn_c": [loc, spread]}``).  ``sl`` carries the synthetic-likelihood
    options for the Ricker model (replicates, ridge).
    """
    priors = dict(priors or {})
    sl = dict(sl or {})
    if name == "fhn1" or name == "fhn2":
        return _make_fhn_spec(name, data, priors)
    if name == "sir":
        return _make_sir_spec(data, priors)
    if name == "ricker":
        return _make_ricker_spec(data, run_seed, sl)
    raise ValueError("unknown model %r; expected one of %s" % (name, (MODEL_NAMES,)))


def generate_dataset(name: str, theta, rng: np.random.Generator) -> ObservationSet:
    """Simulate a dataset for the named model at the given parameter vector."""
    theta = np.asarray(theta, dtype=float)
    if name in ("fhn1", "fhn2"):
        return generate_fhn_data(theta, rng)
    if name == "sir":
        return generate_sir_data(theta, rng)
    if name == "ricker":
        params = RickerParams(
            log_r=float(theta[0]),
            phi=float(theta[1]),
            sigma2_p=float(theta[2]),
            log_theta_tilde=float(theta[3]),
        )
        run = ricker_simulate(params, rng)
        if not run.domain_ok:
            raise ValueError("ricker simulation left the domain at theta")
        return run.observations
    raise ValueError("unknown model %r; expected one of %s" % (name, (MODEL_NAMES,)))
