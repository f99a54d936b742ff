"""Gradient-free ODE parameter estimators used as shotgun criteria.

Three criteria share one result type: trajectory-matching least squares,
two-stage derivative matching on smoothed states, and generalized profiling
with a spline inner problem.  Each returns the optimum of its own criterion,
but the reported curvature is always taken from the target log posterior
(or target synthetic likelihood) at that optimum, because the mixture
components built from these results must live on the target's scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import BSpline
from scipy.optimize import minimize

from .linalg_stats import CovarianceMatrix, ProbeFailureError, numeric_hessian
from .ode_engine import OdeProblem, solve_rk4
from .simulators import ObservationSet

FLOOD_OBJECTIVE = 1e12
NELDER_MEAD_MAXITER = 500
NELDER_MEAD_TOL = 1e-8

SPLINE_ORDER = 4  # cubic
QUAD_POINTS_PER_INTERVAL = 5
DEFAULT_LAMBDA = 100.0
GN_MAXITER = 200


class SmoothingError(RuntimeError):
    """Local polynomial fit stayed singular after widening the bandwidth."""


@dataclass
class EstimatorResult:
    """Outcome of one criterion optimization.

    ``inv_neg_hessian`` is the inverse negated Hessian of the target log
    density at ``theta_hat`` (not of the criterion), PD-repaired.
    """

    theta_hat: np.ndarray
    inv_neg_hessian: Optional[CovarianceMatrix]
    objective_value: float
    method: str
    converged: bool
    init: np.ndarray


@dataclass
class OdeFitProblem:
    """Model-family glue the estimators need: dynamics and data layout.

    ``theta_to_ode`` maps the free parameter vector to the right-hand side
    parameters and initial state (embedding any fixed coordinates), and
    ``obs_state_idx`` maps observation columns to state indices.  NaN cells
    in data are treated as unobserved.
    """

    rhs: Callable
    rhs_state_jac: Optional[Callable]
    theta_to_ode: Callable[[np.ndarray], tuple]
    t_grid: np.ndarray
    step: float
    n_states: int
    obs_state_idx: tuple
    state_lower: Optional[float] = None
    state_upper: Optional[float] = None


def _nm_minimize(fun, x0, maxiter=NELDER_MEAD_MAXITER):
    """Nelder-Mead with the package-wide iteration cap and tolerances."""
    result = minimize(
        fun,
        np.atleast_1d(np.asarray(x0, dtype=float)),
        method="Nelder-Mead",
        options={
            "maxiter": maxiter,
            "xatol": NELDER_MEAD_TOL,
            "fatol": NELDER_MEAD_TOL,
        },
    )
    return np.atleast_1d(result.x), float(result.fun), bool(result.success)


def _target_curvature(target_logpdf, theta_hat):
    return numeric_hessian(target_logpdf, theta_hat)


def _free_minimize(objective, theta_init, free_idx, maxiter):
    """Minimize over ``theta[free_idx]`` holding the other coordinates at the
    init; coordinates a criterion cannot identify would otherwise leave the
    simplex wandering on flat directions.  Returns the full-length optimum."""
    if free_idx is None:
        return _nm_minimize(objective, theta_init, maxiter)
    free = np.asarray(free_idx, dtype=int)
    base = theta_init.copy()

    def embed(sub):
        th = base.copy()
        th[free] = sub
        return th

    x_sub, fval, success = _nm_minimize(
        lambda sub: objective(embed(sub)), theta_init[free], maxiter
    )
    return embed(x_sub), fval, success


def _solve_trajectory(problem: OdeFitProblem, theta: np.ndarray):
    ode_params, x0 = problem.theta_to_ode(np.asarray(theta, dtype=float))
    ode = OdeProblem(
        problem.rhs,
        x0,
        problem.t_grid,
        problem.step,
        state_lower=problem.state_lower,
        state_upper=problem.state_upper,
    )
    return solve_rk4(ode, ode_params)


def nls_objective(problem: OdeFitProblem, data: ObservationSet, theta: np.ndarray) -> float:
    """Sum of squared trajectory residuals, flooded outside the domain."""
    try:
        traj = _solve_trajectory(problem, theta)
    except (ValueError, FloatingPointError):
        return FLOOD_OBJECTIVE
    if not traj.domain_ok:
        return FLOOD_OBJECTIVE
    sse = 0.0
    for col, s_idx in enumerate(problem.obs_state_idx):
        resid = data.values[:, col] - traj.states[:, s_idx]
        resid = resid[np.isfinite(data.values[:, col])]
        sse += float(np.sum(resid * resid))
    return sse if np.isfinite(sse) else FLOOD_OBJECTIVE


def nls_fit(
    problem: OdeFitProblem,
    data: ObservationSet,
    theta_init: np.ndarray,
    target_logpdf: Callable[[np.ndarray], float],
    method_label: str = "NLS",
    maxiter: int = NELDER_MEAD_MAXITER,
    free_idx=None,
) -> EstimatorResult:
    """Trajectory-matching nonlinear least squares via Nelder-Mead.

    Converges to the criterion optimum nearest the init; the returned
    curvature comes from ``target_logpdf`` at that optimum.  ``free_idx``
    restricts the search to the coordinates the squared-error criterion can
    identify (noise variances do not move it); the rest keep init values.
    """
    theta_init = np.atleast_1d(np.asarray(theta_init, dtype=float))
    x, fval, success = _free_minimize(
        lambda th: nls_objective(problem, data, th), theta_init, free_idx, maxiter
    )
    converged = success and fval < FLOOD_OBJECTIVE
    cov = _target_curvature(target_logpdf, x) if np.all(np.isfinite(x)) else None
    return EstimatorResult(x, cov, fval, method_label, converged, theta_init.copy())


def epanechnikov(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def default_bandwidth(times: np.ndarray) -> float:
    """Bandwidth rule: twice the mean grid spacing scaled by n^(1/5)."""
    times = np.asarray(times, dtype=float)
    n = times.shape[0]
    return 2.0 * float(np.mean(np.diff(times))) * n ** 0.2


def local_poly_smooth(
    times: np.ndarray,
    values: np.ndarray,
    nu: int = 2,
    bandwidth: Optional[float] = None,
):
    """Local polynomial smoother returning fitted values and first derivatives.

    A degree-``nu`` polynomial is fit by kernel-weighted least squares around
    each grid point (Epanechnikov weights).  A window too thin to determine
    the polynomial is widened by 1.5x up to four times before raising
    :class:`SmoothingError`.

    Parameters
    ----------
    times : ndarray, shape (n,)
    values : ndarray, shape (n,) or (n, S)
    nu : int
        Polynomial degree; 2 gives the derivative estimates downstream
        criteria expect.
    bandwidth : float, optional
        Kernel half-width; defaults to :func:`default_bandwidth`.

    Returns
    -------
    smooth, deriv : ndarray with the shape of ``values``
    """
    times = np.asarray(times, dtype=float)
    vals = np.asarray(values, dtype=float)
    single = vals.ndim == 1
    vals = vals[:, None] if single else vals
    if vals.shape[0] != times.shape[0]:
        raise ValueError("values must align with times")
    if nu < 1:
        raise ValueError("need degree >= 1 for a derivative")
    h0 = default_bandwidth(times) if bandwidth is None else float(bandwidth)
    if h0 <= 0.0:
        raise ValueError("bandwidth must be positive")
    smooth = np.empty_like(vals)
    deriv = np.empty_like(vals)
    for i, t0 in enumerate(times):
        h = h0
        for attempt in range(5):
            w = epanechnikov((times - t0) / h)
            active = w > 0.0
            if int(np.sum(active)) >= nu + 1:
                dt = times[active] - t0
                design = np.vander(dt, nu + 1, increasing=True)
                sqrt_w = np.sqrt(w[active])[:, None]
                coef, _, rank, _ = np.linalg.lstsq(
                    design * sqrt_w, vals[active] * sqrt_w, rcond=None
                )
                if rank == nu + 1:
                    smooth[i] = coef[0]
                    deriv[i] = coef[1]
                    break
            h *= 1.5
        else:
            raise SmoothingError(
                "singular local fit at t=%g after widening the bandwidth" % t0
            )
    return (smooth[:, 0], deriv[:, 0]) if single else (smooth, deriv)


def two_stage_fit(
    problem: OdeFitProblem,
    data: ObservationSet,
    theta_init: np.ndarray,
    target_logpdf: Callable[[np.ndarray], float],
    bandwidth: Optional[float] = None,
    maxiter: int = NELDER_MEAD_MAXITER,
    free_idx=None,
) -> EstimatorResult:
    """Two-stage derivative matching: smooth first, then fit the vector field.

    Stage one smooths every observed state and estimates its derivative by
    local polynomials; stage two minimizes the squared mismatch between those
    derivatives and the right-hand side evaluated at the smoothed states.
    No ODE solves happen anywhere in the objective, which is what lets this
    criterion hop across trajectory-matching valleys.

    All states must be observed (one data column per state).  ``free_idx``
    restricts the search to coordinates entering the right-hand side (initial
    states and noise variances do not); the rest keep init values.
    """
    if tuple(sorted(problem.obs_state_idx)) != tuple(range(problem.n_states)):
        raise ValueError("two-stage fitting requires every state observed")
    theta_init = np.atleast_1d(np.asarray(theta_init, dtype=float))
    smooth, deriv = local_poly_smooth(data.times, data.values, nu=2, bandwidth=bandwidth)
    # Reorder observation columns into state order once.
    order = np.argsort(np.asarray(problem.obs_state_idx))
    states_hat = smooth[:, order]
    deriv_hat = deriv[:, order]

    def objective(theta):
        ode_params, _ = problem.theta_to_ode(theta)
        with np.errstate(all="ignore"):
            f_hat = problem.rhs(states_hat, ode_params, 0.0)
            resid = deriv_hat - f_hat
            sse = float(np.sum(resid * resid))
        return sse if np.isfinite(sse) else FLOOD_OBJECTIVE

    x, fval, success = _free_minimize(objective, theta_init, free_idx, maxiter)
    converged = success and fval < FLOOD_OBJECTIVE
    cov = _target_curvature(target_logpdf, x) if np.all(np.isfinite(x)) else None
    return EstimatorResult(x, cov, fval, "TwoStage", converged, theta_init.copy())


@dataclass
class BasisSystem:
    """Cubic B-spline basis with cached design and quadrature matrices.

    Knots sit at every observation time; the quadrature grid applies
    composite Simpson weights on five points per inter-knot interval.
    """

    knots: np.ndarray
    order: int
    n_basis: int
    phi_data: np.ndarray
    phi_quad: np.ndarray
    dphi_quad: np.ndarray
    quad_t: np.ndarray
    quad_w: np.ndarray
    data_times: np.ndarray


def make_basis(times: np.ndarray, order: int = SPLINE_ORDER) -> BasisSystem:
    """Build the spline basis for a strictly increasing observation grid."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.shape[0] < 2 or np.any(np.diff(times) <= 0.0):
        raise ValueError("times must be strictly increasing with >= 2 points")
    k = order - 1
    full_knots = np.concatenate(
        [np.repeat(times[0], k), times, np.repeat(times[-1], k)]
    )
    n_basis = full_knots.shape[0] - order

    quad_t = []
    quad_w = []
    for a, b in zip(times[:-1], times[1:]):
        pts = np.linspace(a, b, QUAD_POINTS_PER_INTERVAL)
        h = (b - a) / (QUAD_POINTS_PER_INTERVAL - 1)
        quad_t.append(pts)
        quad_w.append(h / 3.0 * np.array([1.0, 4.0, 2.0, 4.0, 1.0]))
    quad_t = np.concatenate(quad_t)
    quad_w = np.concatenate(quad_w)

    phi_data = BSpline.design_matrix(times, full_knots, k).toarray()
    phi_quad = BSpline.design_matrix(quad_t, full_knots, k).toarray()
    dphi_quad = np.empty_like(phi_quad)
    eye = np.eye(n_basis)
    for j in range(n_basis):
        dphi_quad[:, j] = BSpline(full_knots, eye[j], k).derivative()(quad_t)
    return BasisSystem(
        full_knots,
        order,
        n_basis,
        phi_data,
        phi_quad,
        dphi_quad,
        quad_t,
        quad_w,
        times.copy(),
    )


def default_obs_weights(data: ObservationSet) -> np.ndarray:
    """Per-state weights: reciprocal sample variance of each data column."""
    var = np.nanvar(data.values, axis=0, ddof=1)
    if np.any(~np.isfinite(var)) or np.any(var <= 0.0):
        raise ValueError("cannot weight a constant or empty data column")
    return 1.0 / var


def _spline_on_quad(basis, coefs):
    """Spline states and derivatives on the quadrature grid, (n_q, S)."""
    return basis.phi_quad @ coefs, basis.dphi_quad @ coefs


def gp_inner(
    theta: np.ndarray,
    data: ObservationSet,
    problem: OdeFitProblem,
    basis: BasisSystem,
    lam: np.ndarray,
    obs_weights: np.ndarray,
    coefs_init: Optional[np.ndarray] = None,
    maxiter: int = GN_MAXITER,
):
    """Inner spline fit: data fidelity plus the ODE fidelity penalty.

    Minimizes, over the basis coefficients ``C`` (one column per state),

        sum_s w_s ||y_s - Phi C_s||^2
        + sum_s lam_s * integral (Phi' C_s - f_s(Phi C, theta))^2

    by damped Gauss-Newton from the plain basis projection of the data.

    Returns
    -------
    coefs : ndarray, shape (n_basis, S)
    value, data_term, penalty_term : float
    converged : bool
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (problem.n_states,))
    obs_weights = np.asarray(obs_weights, dtype=float)
    ode_params, _ = problem.theta_to_ode(theta)
    n_states = problem.n_states
    n_basis = basis.n_basis
    col_of_state = {s: c for c, s in enumerate(problem.obs_state_idx)}

    sqrt_w_phi = []
    sqrt_w_y = []
    for s in range(n_states):
        if s in col_of_state:
            y = data.values[:, col_of_state[s]]
            keep = np.isfinite(y)
            sw = np.sqrt(obs_weights[col_of_state[s]])
            sqrt_w_phi.append(sw * basis.phi_data[keep])
            sqrt_w_y.append(sw * y[keep])
        else:
            sqrt_w_phi.append(np.zeros((0, n_basis)))
            sqrt_w_y.append(np.zeros(0))

    if coefs_init is None:
        coefs = np.zeros((n_basis, n_states))
        for s in range(n_states):
            if sqrt_w_y[s].shape[0]:
                coefs[:, s] = np.linalg.lstsq(sqrt_w_phi[s], sqrt_w_y[s], rcond=None)[0]
    else:
        coefs = np.asarray(coefs_init, dtype=float).copy()

    sqrt_lam_w = np.sqrt(np.outer(basis.quad_w, lam))

    def penalty_residual(c):
        x_q, dx_q = _spline_on_quad(basis, c)
        with np.errstate(all="ignore"):
            f_q = problem.rhs(x_q, ode_params, 0.0)
        return sqrt_lam_w * (dx_q - f_q), x_q

    def split_terms(c):
        data_term = 0.0
        for s in range(n_states):
            r = sqrt_w_y[s] - sqrt_w_phi[s] @ c[:, s]
            data_term += float(r @ r)
        pen_res, _ = penalty_residual(c)
        penalty = float(np.sum(pen_res * pen_res))
        return data_term, penalty

    data_term, penalty = split_terms(coefs)
    value = data_term + penalty
    if not np.isfinite(value):
        return coefs, np.inf, np.inf, np.inf, False

    converged = False
    for _ in range(maxiter):
        pen_res, x_q = penalty_residual(coefs)
        with np.errstate(all="ignore"):
            jac_f = problem.rhs_state_jac(x_q, ode_params)
        if not (np.all(np.isfinite(pen_res)) and np.all(np.isfinite(jac_f))):
            return coefs, np.inf, np.inf, np.inf, False

        # Stacked residual: data rows per state, then quadrature rows per state.
        n_rows = sum(m.shape[0] for m in sqrt_w_phi) + basis.quad_t.shape[0] * n_states
        jac = np.zeros((n_rows, n_basis * n_states))
        res = np.zeros(n_rows)
        row = 0
        for s in range(n_states):
            m = sqrt_w_phi[s].shape[0]
            if m:
                jac[row : row + m, s * n_basis : (s + 1) * n_basis] = -sqrt_w_phi[s]
                res[row : row + m] = sqrt_w_y[s] - sqrt_w_phi[s] @ coefs[:, s]
                row += m
        n_q = basis.quad_t.shape[0]
        for s in range(n_states):
            res[row : row + n_q] = pen_res[:, s]
            for u in range(n_states):
                block = -jac_f[:, s, u][:, None] * basis.phi_quad
                if u == s:
                    block = block + basis.dphi_quad
                jac[row : row + n_q, u * n_basis : (u + 1) * n_basis] = (
                    sqrt_lam_w[:, s][:, None] * block
                )
            row += n_q

        delta = np.linalg.lstsq(jac, -res, rcond=None)[0]
        step = 1.0
        improved = False
        for _ in range(12):
            trial = coefs + step * delta.reshape(n_states, n_basis).T
            d_t, p_t = split_terms(trial)
            trial_value = d_t + p_t
            if np.isfinite(trial_value) and trial_value <= value:
                improved = trial_value < value - 1e-10 * (1.0 + abs(value))
                coefs = trial
                data_term, penalty, value = d_t, p_t, trial_value
                break
            step *= 0.5
        if not improved:
            converged = True
            break
    return coefs, value, data_term, penalty, converged


def gp_outer_fit(
    problem: OdeFitProblem,
    data: ObservationSet,
    theta_init: np.ndarray,
    target_logpdf: Callable[[np.ndarray], float],
    basis: Optional[BasisSystem] = None,
    lam: float = DEFAULT_LAMBDA,
    obs_weights: Optional[np.ndarray] = None,
    maxiter: int = NELDER_MEAD_MAXITER,
    free_idx=None,
) -> EstimatorResult:
    """Generalized profiling: optimize data fidelity of the profiled spline.

    For each candidate theta the inner problem re-fits the spline under the
    ODE penalty; the outer criterion is the weighted data misfit of that
    profiled spline, minimized by Nelder-Mead.  Since the spline profiles the
    states out, ``free_idx`` can drop initial-state and noise coordinates the
    criterion never reads.
    """
    if problem.rhs_state_jac is None:
        raise ValueError("generalized profiling needs rhs_state_jac")
    theta_init = np.atleast_1d(np.asarray(theta_init, dtype=float))
    if basis is None:
        basis = make_basis(data.times)
    if obs_weights is None:
        obs_weights = default_obs_weights(data)
    col_of_state = {s: c for c, s in enumerate(problem.obs_state_idx)}

    def objective(theta):
        try:
            coefs, value, data_term, _, _ = gp_inner(
                theta, data, problem, basis, lam, obs_weights
            )
        except (ValueError, np.linalg.LinAlgError):
            return FLOOD_OBJECTIVE
        if not np.isfinite(value):
            return FLOOD_OBJECTIVE
        outer = 0.0
        for s, c in col_of_state.items():
            y = data.values[:, c]
            keep = np.isfinite(y)
            r = y[keep] - (basis.phi_data @ coefs[:, s])[keep]
            outer += obs_weights[c] * float(r @ r)
        return outer if np.isfinite(outer) else FLOOD_OBJECTIVE

    x, fval, success = _free_minimize(objective, theta_init, free_idx, maxiter)
    converged = success and fval < FLOOD_OBJECTIVE
    cov = _target_curvature(target_logpdf, x) if np.all(np.isfinite(x)) else None
    return EstimatorResult(x, cov, fval, "GP", converged, theta_init.copy())


def maximize_logpdf(
    fun: Callable[[np.ndarray], float],
    theta_init: np.ndarray,
    target_logpdf: Callable[[np.ndarray], float],
    method_label: str,
    maxiter: int = NELDER_MEAD_MAXITER,
) -> EstimatorResult:
    """Nelder-Mead ascent of an arbitrary log density criterion.

    Used for criteria that are not least-squares shaped (synthetic
    likelihood subsets, conditional posteriors).  The objective value
    reported is the negated criterion at the optimum, matching the
    minimization convention of the other fitters.
    """
    theta_init = np.atleast_1d(np.asarray(theta_init, dtype=float))

    def objective(theta):
        value = fun(theta)
        return -value if np.isfinite(value) else FLOOD_OBJECTIVE

    x, fval, success = _nm_minimize(objective, theta_init, maxiter)
    converged = success and fval < FLOOD_OBJECTIVE
    cov = _target_curvature(target_logpdf, x) if np.all(np.isfinite(x)) else None
    return EstimatorResult(x, cov, fval, method_label, converged, theta_init.copy())
