"""Data generators: the theta-Ricker population model and noisy ODE observations.

All generators take an explicit ``numpy.random.Generator`` so reproducibility
is the caller's contract, and all of them report domain trouble with flags
instead of exceptions (the likelihood layer floods flagged simulations).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .ode_engine import (
    SIR_STEP,
    FHN_STEP,
    fhn_default_grid,
    fhn_rhs,
    sir_rhs,
    solve_rk4_batch,
)

# Latent population values beyond this are treated as a blow-up.
RICKER_OVERFLOW = 1e12

SIR_N_POP = 261
SIR_N_DAYS = 136


def sir_default_grid() -> np.ndarray:
    return np.arange(float(SIR_N_DAYS))


@dataclass
class RickerParams:
    """Parameters of the theta-Ricker map with Poisson observations.

    The growth rate and shape parameter are carried on the log scale, which
    is also the scale the sampler explores.
    """

    log_r: float
    phi: float
    sigma2_p: float
    log_theta_tilde: float
    carrying_capacity: float = 100.0
    n_init: float = 3.0
    n_steps: int = 50

    def __post_init__(self):
        if not self.phi > 0.0:
            raise ValueError("phi must be positive")
        if self.sigma2_p < 0.0:
            raise ValueError("sigma2_p must be non-negative")
        if not self.carrying_capacity > 0.0:
            raise ValueError("carrying capacity must be positive")
        if not self.n_init > 0.0:
            raise ValueError("initial population must be positive")
        if self.n_steps < 1:
            raise ValueError("need at least one step")


@dataclass
class ObservationSet:
    """Observed values on a time grid, one column per observed quantity."""

    times: np.ndarray
    values: np.ndarray
    columns: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.times.shape[0]:
            raise ValueError("values must have one row per time")
        if len(self.columns) != self.values.shape[1]:
            raise ValueError("need one column label per value column")
        self.columns = tuple(self.columns)


class RickerRun(NamedTuple):
    observations: ObservationSet
    latent_path: np.ndarray
    domain_ok: bool


def ricker_simulate_batch(params: RickerParams, n_reps: int, rng: np.random.Generator):
    """Simulate ``n_reps`` independent count series under one parameter set.

    Returns
    -------
    counts : ndarray, shape (n_reps, n_steps)
    latent : ndarray, shape (n_reps, n_steps)
    ok : ndarray of bool, shape (n_reps,)
        False where the latent path blew past ``RICKER_OVERFLOW`` or went
        non-finite; counts for such rows are zero-filled.
    """
    r = np.exp(params.log_r)
    theta_tilde = np.exp(params.log_theta_tilde)
    kcap = params.carrying_capacity
    sd = np.sqrt(params.sigma2_p)
    t_len = params.n_steps
    n = np.full(n_reps, float(params.n_init))
    ok = np.ones(n_reps, dtype=bool)
    latent = np.zeros((n_reps, t_len))
    counts = np.zeros((n_reps, t_len), dtype=np.int64)
    for t in range(t_len):
        eps = rng.normal(0.0, sd, size=n_reps) if sd > 0.0 else 0.0
        with np.errstate(all="ignore"):
            n = n * np.exp(r * (1.0 - (n / kcap) ** theta_tilde) + eps)
            ok &= np.isfinite(n) & (n < RICKER_OVERFLOW)
        # Park flagged rows at the carrying capacity so the remaining rows
        # keep clean arithmetic; their counts are discarded anyway.
        n = np.where(ok, n, kcap)
        latent[:, t] = np.where(ok, n, 0.0)
        counts[:, t] = rng.poisson(np.where(ok, params.phi * n, 0.0))
    counts[~ok] = 0
    return counts, latent, ok


def ricker_simulate(params: RickerParams, rng: np.random.Generator) -> RickerRun:
    """One theta-Ricker realization: latent path and Poisson counts.

    The map multiplies the population by a log-normal growth factor each
    step, so the latent path stays positive; a path exceeding
    ``RICKER_OVERFLOW`` flags the run instead of raising.
    """
    counts, latent, ok = ricker_simulate_batch(params, 1, rng)
    times = np.arange(1.0, params.n_steps + 1.0)
    obs = ObservationSet(
        times,
        counts[0][:, None].astype(float),
        ("count",),
        meta={"model": "ricker"},
    )
    return RickerRun(obs, latent[0], bool(ok[0]))


def generate_fhn_data(
    theta: np.ndarray,
    rng: np.random.Generator,
    grid: Optional[np.ndarray] = None,
) -> ObservationSet:
    """Noisy FitzHugh-Nagumo observations of both states.

    ``theta`` holds (a, b, c, sigma2_V, sigma2_R, V0, R0); both state
    trajectories get independent centered Gaussian noise.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (7,):
        raise ValueError("theta must hold (a, b, c, sigma2_V, sigma2_R, V0, R0)")
    if theta[3] < 0.0 or theta[4] < 0.0:
        raise ValueError("noise variances must be non-negative")
    t_grid = fhn_default_grid() if grid is None else np.asarray(grid, dtype=float)
    states, ok = solve_rk4_batch(
        fhn_rhs, theta[None, 5:7], theta[None, 0:3], t_grid, FHN_STEP
    )
    if not ok[0]:
        raise ValueError("FitzHugh-Nagumo trajectory left the domain at theta")
    clean = states[0]
    noise = rng.normal(0.0, 1.0, size=clean.shape) * np.sqrt(theta[3:5])
    return ObservationSet(
        t_grid,
        clean + noise,
        ("V", "R"),
        meta={"model": "fhn", "theta": theta.tolist()},
    )


def generate_sir_data(
    theta: np.ndarray,
    rng: np.random.Generator,
    n_pop: int = SIR_N_POP,
    grid: Optional[np.ndarray] = None,
) -> ObservationSet:
    """Binomial SIR observations: cumulative deaths plus two late infected counts.

    ``theta`` holds (alpha, beta, I0).  Every grid time contributes one
    binomial death count with success probability R(t)/N; the final two times
    also contribute binomial infected counts with probability I(t)/N, stored
    in a second column that is NaN elsewhere.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (3,):
        raise ValueError("theta must hold (alpha, beta, I0)")
    alpha, beta, i0 = theta
    if alpha < 0.0 or beta < 0.0:
        raise ValueError("alpha and beta must be non-negative")
    i0_int = int(round(i0))
    if abs(i0 - i0_int) > 1e-9 or not 0 <= i0_int <= n_pop:
        raise ValueError("I0 must be an integer in [0, N]")
    t_grid = sir_default_grid() if grid is None else np.asarray(grid, dtype=float)
    x0 = np.array([[n_pop - i0_int, i0_int, 0.0]])
    states, ok = solve_rk4_batch(
        sir_rhs,
        x0,
        np.array([[alpha, beta]]),
        t_grid,
        SIR_STEP,
        state_lower=-1e-6,
        state_upper=n_pop + 1e-6,
    )
    if not ok[0]:
        raise ValueError("SIR trajectory left the admissible region at theta")
    p_dead = np.clip(states[0, :, 2] / n_pop, 0.0, 1.0)
    p_inf = np.clip(states[0, :, 1] / n_pop, 0.0, 1.0)
    deaths = rng.binomial(n_pop, p_dead).astype(float)
    infected = np.full(t_grid.shape[0], np.nan)
    infected[-2:] = rng.binomial(n_pop, p_inf[-2:]).astype(float)
    values = np.column_stack([deaths, infected])
    return ObservationSet(
        t_grid,
        values,
        ("deaths", "infected"),
        meta={"model": "sir", "theta": theta.tolist(), "n_pop": n_pop},
    )


def write_observations_csv(path, obs: ObservationSet) -> None:
    """Serialize an observation set; floats keep 17 significant digits."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("time",) + obs.columns)
        for i in range(obs.times.shape[0]):
            row = ["%.17g" % obs.times[i]]
            for v in obs.values[i]:
                row.append("" if np.isnan(v) else "%.17g" % v)
            writer.writerow(row)


def read_observations_csv(path) -> ObservationSet:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if not header or header[0] != "time":
            raise ValueError("expected a header row starting with 'time'")
        rows = [[float(cell) if cell != "" else np.nan for cell in row] for row in reader]
    data = np.asarray(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError("ragged or empty observation table")
    return ObservationSet(data[:, 0], data[:, 1:], tuple(header[1:]))
