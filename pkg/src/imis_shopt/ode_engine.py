"""Fixed-step RK4 integration plus the FitzHugh-Nagumo and SIR right-hand sides.

The solver is deliberately plain: a fixed step subdivided so that every output
grid point is hit exactly, with a per-trajectory domain flag instead of
exceptions.  Likelihood code downstream floods flagged trajectories, so the
solver never needs to guess what a blow-up should mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

FHN_STEP = 0.05
SIR_STEP = 0.1

# Interval and sampling density used for the FitzHugh-Nagumo experiments; a
# configuration default, not a property of the model.
FHN_T_END = 20.0
FHN_N_OBS = 41


def fhn_default_grid() -> np.ndarray:
    return np.linspace(0.0, FHN_T_END, FHN_N_OBS)


def fhn_rhs(state: np.ndarray, params: np.ndarray, t: float = 0.0) -> np.ndarray:
    """FitzHugh-Nagumo vector field.

    ``state`` holds (V, R) in the trailing axis, ``params`` holds (a, b, c).
    Both broadcast, so one call serves a batch of particles.
    """
    state = np.asarray(state, dtype=float)
    params = np.asarray(params, dtype=float)
    v = state[..., 0]
    r = state[..., 1]
    a = params[..., 0]
    b = params[..., 1]
    c = params[..., 2]
    if np.ndim(c) == 0 and c == 0.0:
        raise ValueError("fhn_rhs requires c != 0")
    dv = c * (v - v**3 / 3.0 + r)
    dr = -(v - a + b * r) / c
    return np.stack([dv, dr], axis=-1)


def fhn_rhs_state_jac(state: np.ndarray, params: np.ndarray) -> np.ndarray:
    """Jacobian of :func:`fhn_rhs` with respect to the state, shape (..., 2, 2)."""
    state = np.asarray(state, dtype=float)
    params = np.asarray(params, dtype=float)
    v = state[..., 0]
    b = params[..., 1]
    c = params[..., 2]
    out = np.empty(np.broadcast(v, c).shape + (2, 2))
    out[..., 0, 0] = c * (1.0 - v * v)
    out[..., 0, 1] = c
    out[..., 1, 0] = -1.0 / c
    out[..., 1, 1] = -b / c
    return out


def sir_rhs(state: np.ndarray, params: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Closed-population SIR vector field; state (S, I, R), params (alpha, beta)."""
    state = np.asarray(state, dtype=float)
    params = np.asarray(params, dtype=float)
    s = state[..., 0]
    i = state[..., 1]
    alpha = params[..., 0]
    beta = params[..., 1]
    new_inf = beta * s * i
    rec = alpha * i
    return np.stack([-new_inf, new_inf - rec, rec], axis=-1)


def sir_rhs_state_jac(state: np.ndarray, params: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    params = np.asarray(params, dtype=float)
    s = state[..., 0]
    i = state[..., 1]
    alpha = params[..., 0]
    beta = params[..., 1]
    zero = np.zeros(np.broadcast(s, alpha).shape)
    out = np.empty(zero.shape + (3, 3))
    out[..., 0, 0] = -beta * i
    out[..., 0, 1] = -beta * s
    out[..., 0, 2] = zero
    out[..., 1, 0] = beta * i
    out[..., 1, 1] = beta * s - alpha
    out[..., 1, 2] = zero
    out[..., 2, 0] = zero
    out[..., 2, 1] = alpha
    out[..., 2, 2] = zero
    return out


@dataclass
class OdeProblem:
    """A right-hand side with initial state, output grid, and step size.

    ``state_lower``/``state_upper`` optionally bound the admissible region;
    leaving it clears the trajectory's domain flag.
    """

    rhs: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    x0: np.ndarray
    t_grid: np.ndarray
    step: float
    state_lower: Optional[np.ndarray] = None
    state_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        if self.t_grid.ndim != 1 or self.t_grid.shape[0] < 2:
            raise ValueError("t_grid must hold at least two times")
        if np.any(np.diff(self.t_grid) <= 0.0):
            raise ValueError("t_grid must be strictly increasing")
        if not self.step > 0.0:
            raise ValueError("step must be positive")


@dataclass
class Trajectory:
    """Solution values on the output grid with a domain flag."""

    times: np.ndarray
    states: np.ndarray
    domain_ok: bool


def _substep_counts(t_grid: np.ndarray, step: float) -> np.ndarray:
    gaps = np.diff(t_grid)
    return np.maximum(1, np.ceil(gaps / step - 1e-12).astype(int))


def _within_bounds(y: np.ndarray, lower, upper) -> np.ndarray:
    """Row-wise admissibility of a (n, S) state block."""
    with np.errstate(invalid="ignore"):
        ok = np.all(np.isfinite(y), axis=-1)
        if lower is not None:
            ok &= np.all(y >= lower, axis=-1)
        if upper is not None:
            ok &= np.all(y <= upper, axis=-1)
    return ok


def solve_rk4(problem: OdeProblem, params: np.ndarray) -> Trajectory:
    """Integrate one parameter vector over the problem grid.

    Classic fourth-order Runge-Kutta with the step subdivided per grid gap so
    every output time is hit exactly.  On the first non-finite stage value or
    excursion outside the admissible region the solve stops early, the
    remaining rows repeat the last accepted state, and ``domain_ok`` is False.
    """
    params = np.asarray(params, dtype=float)
    t_grid = problem.t_grid
    n_t = t_grid.shape[0]
    states = np.empty((n_t, problem.x0.shape[0]))
    states[0] = problem.x0
    y = problem.x0.astype(float).copy()
    ok = bool(_within_bounds(y[None, :], problem.state_lower, problem.state_upper)[0])
    counts = _substep_counts(t_grid, problem.step)
    if ok:
        for j in range(n_t - 1):
            n_sub = counts[j]
            h = (t_grid[j + 1] - t_grid[j]) / n_sub
            t = t_grid[j]
            for _ in range(n_sub):
                with np.errstate(all="ignore"):
                    k1 = problem.rhs(y, params, t)
                    k2 = problem.rhs(y + 0.5 * h * k1, params, t + 0.5 * h)
                    k3 = problem.rhs(y + 0.5 * h * k2, params, t + 0.5 * h)
                    k4 = problem.rhs(y + h * k3, params, t + h)
                    y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                stage_ok = np.all(np.isfinite(k1)) and np.all(np.isfinite(k2))
                stage_ok = stage_ok and np.all(np.isfinite(k3)) and np.all(np.isfinite(k4))
                if not stage_ok or not _within_bounds(
                    y_new[None, :], problem.state_lower, problem.state_upper
                )[0]:
                    ok = False
                    break
                y = y_new
                t += h
            if not ok:
                break
            states[j + 1] = y
        else:
            return Trajectory(t_grid.copy(), states, True)
        states[j + 1 :] = y
        return Trajectory(t_grid.copy(), states, False)
    states[:] = y
    return Trajectory(t_grid.copy(), states, False)


def solve_rk4_batch(
    rhs: Callable,
    x0: np.ndarray,
    params: np.ndarray,
    t_grid: np.ndarray,
    step: float,
    state_lower=None,
    state_upper=None,
):
    """Vectorized twin of :func:`solve_rk4` over rows of ``params``.

    Parameters
    ----------
    rhs : callable
        Broadcasting right-hand side.
    x0 : ndarray, shape (n, S)
        Per-row initial states.
    params : ndarray, shape (n, P)
    t_grid : ndarray, shape (T,)
    step : float
    state_lower, state_upper : optional per-state bounds.

    Returns
    -------
    states : ndarray, shape (n, T, S)
        For rows whose flag is cleared the values from the first bad substep
        onward repeat the last accepted state.
    domain_ok : ndarray of bool, shape (n,)

    Rows are integrated in lockstep; flagged rows are frozen at their last
    accepted state so the remaining rows keep exact step sequencing.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    params = np.atleast_2d(np.asarray(params, dtype=float))
    t_grid = np.asarray(t_grid, dtype=float)
    n, n_states = x0.shape
    n_t = t_grid.shape[0]
    states = np.empty((n, n_t, n_states))
    y = x0.copy()
    ok = _within_bounds(y, state_lower, state_upper)
    states[:, 0] = y
    counts = _substep_counts(t_grid, step)
    for j in range(n_t - 1):
        n_sub = counts[j]
        h = (t_grid[j + 1] - t_grid[j]) / n_sub
        t = t_grid[j]
        for _ in range(n_sub):
            with np.errstate(all="ignore"):
                k1 = rhs(y, params, t)
                k2 = rhs(y + 0.5 * h * k1, params, t + 0.5 * h)
                k3 = rhs(y + 0.5 * h * k2, params, t + 0.5 * h)
                k4 = rhs(y + h * k3, params, t + h)
                y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                stage_ok = (
                    np.all(np.isfinite(k1), axis=-1)
                    & np.all(np.isfinite(k2), axis=-1)
                    & np.all(np.isfinite(k3), axis=-1)
                    & np.all(np.isfinite(k4), axis=-1)
                )
                step_ok = stage_ok & _within_bounds(y_new, state_lower, state_upper)
            y = np.where((ok & step_ok)[:, None], y_new, y)
            ok &= step_ok
            t += h
        states[:, j + 1] = y
    return states, ok


def oscillation_pairs(values: np.ndarray) -> int:
    """Number of full sign-change pairs in a sampled signal.

    Zeros are ignored; two consecutive sign flips make one oscillation.
    """
    v = np.asarray(values, dtype=float)
    signs = np.sign(v)
    signs = signs[signs != 0.0]
    if signs.size < 2:
        return 0
    flips = int(np.sum(signs[1:] != signs[:-1]))
    return flips // 2
