"""Priors, likelihoods, and registry behavior for the four models."""

import numpy as np
import pytest
from scipy import stats

from imis_shopt.imis_core import STREAM_DATA, substream
from imis_shopt.linalg_stats import FLOOD_LOG_LIK
from imis_shopt.models import (
    DEFAULT_GENERATION_THETA,
    FHN_TRUTH,
    RICKER_TRUTH,
    _binom_logpmf,
    generate_dataset,
    get_model,
)
from imis_shopt.ode_engine import FHN_STEP, fhn_default_grid, fhn_rhs, solve_rk4_batch
from imis_shopt.simulators import SIR_N_DAYS, SIR_N_POP, ObservationSet


@pytest.fixture(scope="module")
def fhn_data():
    return generate_dataset("fhn1", FHN_TRUTH, substream(0, STREAM_DATA))


@pytest.fixture(scope="module")
def sir_data():
    return generate_dataset(
        "sir", DEFAULT_GENERATION_THETA["sir"], substream(0, STREAM_DATA)
    )


@pytest.fixture(scope="module")
def ricker_data():
    return generate_dataset("ricker", RICKER_TRUTH, substream(0, STREAM_DATA))


def exact_fhn_observations():
    """Noise-free data equal to the solver output at the true parameters."""
    times = fhn_default_grid()
    states, ok = solve_rk4_batch(
        fhn_rhs, FHN_TRUTH[None, 5:7], FHN_TRUTH[None, 0:3], times, FHN_STEP
    )
    assert ok[0]
    return ObservationSet(times, states[0], ("V", "R"))


def test_fhn_loglik_zero_residual_closed_form():
    data = exact_fhn_observations()
    model = get_model("fhn1", data)
    # both residual sums vanish, leaving only the normalizing constants
    expected = -data.times.shape[0] * np.log(2.0 * np.pi * 0.0025)
    assert model.log_lik(np.array([[3.0]]))[0] == pytest.approx(expected, abs=1e-8)


def test_fhn1_and_fhn2_likelihoods_agree_at_shared_points(fhn_data):
    m1 = get_model("fhn1", fhn_data)
    m2 = get_model("fhn2", fhn_data)
    for c in (2.0, 3.0, 11.0):
        full = FHN_TRUTH.copy()
        full[2] = c
        assert m1.log_lik(np.array([[c]]))[0] == pytest.approx(
            m2.log_lik(full[None, :])[0], rel=1e-12
        )


def test_fhn_likelihood_profile_has_separated_maxima(fhn_data):
    model = get_model("fhn1", fhn_data)
    grid = np.arange(0.5, 20.0, 0.05)
    lls = model.log_lik(grid[:, None])
    assert np.all(lls > FLOOD_LOG_LIK)
    interior = (lls[1:-1] > lls[:-2]) & (lls[1:-1] > lls[2:])
    peaks = grid[1:-1][interior]
    assert np.any(np.abs(peaks - 3.0) < 0.5)
    assert np.any(np.abs(peaks - 12.05) < 1.0)
    assert abs(grid[np.argmax(lls)] - 3.0) < 0.5


def test_fhn_flood_cases(fhn_data):
    m1 = get_model("fhn1", fhn_data)
    assert m1.log_lik(np.array([[0.0]]))[0] == FLOOD_LOG_LIK
    m2 = get_model("fhn2", fhn_data)
    bad = FHN_TRUTH.copy()
    bad[3] = -1.0
    assert m2.log_lik(bad[None, :])[0] == FLOOD_LOG_LIK


def test_fhn1_prior_is_the_stated_normal(fhn_data):
    model = get_model("fhn1", fhn_data)
    at_mean = model.log_prior(np.array([[14.0]]))[0]
    assert at_mean == pytest.approx(-np.log(2.0 * np.sqrt(2.0 * np.pi)), abs=1e-12)
    at_12 = model.log_prior(np.array([[12.0]]))[0]
    assert at_mean - at_12 == pytest.approx(0.5, abs=1e-12)


def test_fhn1_prior_override(fhn_data):
    model = get_model("fhn1", fhn_data, priors={"fhn_c": (10.0, 1.0)})
    assert model.log_prior(np.array([[10.0]]))[0] == pytest.approx(
        -0.5 * np.log(2.0 * np.pi), abs=1e-12
    )
    with pytest.raises(ValueError):
        get_model("fhn1", fhn_data, priors={"normal_spread": "bogus"})


def test_fhn2_prior_matches_hand_formulas(fhn_data):
    model = get_model("fhn2", fhn_data)
    rng = np.random.default_rng(5)
    thetas = model.prior_sample(rng, 50)

    def normal_term(x, loc, sd):
        return -0.5 * ((x - loc) / sd) ** 2 - np.log(sd * np.sqrt(2.0 * np.pi))

    def invgamma_term(x):
        return 3.0 * np.log(3.0) - np.log(2.0) - 4.0 * np.log(x) - 3.0 / x

    expected = (
        normal_term(thetas[:, 0], 0.0, 0.4)
        + normal_term(thetas[:, 1], 0.0, 0.4)
        + normal_term(thetas[:, 2], 14.0, 2.0)
        + invgamma_term(thetas[:, 3])
        + invgamma_term(thetas[:, 4])
        + normal_term(thetas[:, 5], -1.0, 0.5)
        + normal_term(thetas[:, 6], 1.0, 0.5)
    )
    assert np.allclose(model.log_prior(thetas), expected, atol=1e-10)


def test_prior_draws_have_finite_prior_density(fhn_data, sir_data, ricker_data):
    for name, data in (("fhn2", fhn_data), ("sir", sir_data), ("ricker", ricker_data)):
        model = get_model(name, data)
        draws = model.prior_sample(np.random.default_rng(11), 2000)
        assert np.all(np.isfinite(model.log_prior(draws)))


def test_prior_sampling_is_deterministic(fhn_data):
    model = get_model("fhn2", fhn_data)
    a = model.prior_sample(np.random.default_rng(3), 100)
    b = model.prior_sample(np.random.default_rng(3), 100)
    assert np.array_equal(a, b)


def test_target_logpdf_is_prior_plus_likelihood(fhn_data):
    model = get_model("fhn2", fhn_data)
    theta = FHN_TRUTH.copy()
    theta[3] = theta[4] = 0.2
    expected = model.log_lik(theta[None, :])[0] + model.log_prior(theta[None, :])[0]
    assert model.target_logpdf(theta) == pytest.approx(expected, rel=1e-12)
    outside = theta.copy()
    outside[3] = -0.5
    assert model.target_logpdf(outside) == -np.inf


def test_binomial_logpmf_against_scipy():
    k = np.array([0.0, 1.0, 5.0, 131.0, 261.0])
    for p in (0.0, 1e-9, 0.3, 1.0):
        mine = _binom_logpmf(k, 261, p)
        ref = stats.binom.logpmf(k.astype(int), 261, p)
        assert np.allclose(mine, ref, atol=1e-10)


def test_sir_zero_epidemic_has_zero_loglik():
    times = np.arange(1.0, SIR_N_DAYS + 1.0)
    values = np.full((SIR_N_DAYS, 2), np.nan)
    values[:, 0] = 0.0
    data = ObservationSet(times, values, ("dead", "infected"))
    model = get_model("sir", data)
    assert model.log_lik(np.array([[0.0, 0.0, 4.0]]))[0] == 0.0


def test_sir_floods_non_integer_and_out_of_range_i0(sir_data):
    model = get_model("sir", sir_data)
    lls = model.log_lik(
        np.array(
            [
                [0.09, 0.0006, 4.5],
                [0.09, 0.0006, -1.0],
                [0.09, 0.0006, SIR_N_POP + 1.0],
            ]
        )
    )
    assert np.all(lls == FLOOD_LOG_LIK)


def test_sir_loglik_finite_and_smooth_near_generation_values(sir_data):
    model = get_model("sir", sir_data)
    alphas = np.linspace(0.05, 0.15, 5)
    betas = np.linspace(3e-4, 9e-4, 5)
    grid = np.array([[a, b, 4.0] for a in alphas for b in betas])
    lls = model.log_lik(grid)
    assert np.all(lls > FLOOD_LOG_LIK)
    base = model.log_lik(np.array([[0.09, 0.0006, 4.0]]))[0]
    nudged = model.log_lik(np.array([[0.09 + 1e-7, 0.0006, 4.0]]))[0]
    assert abs(nudged - base) < 1e-2


def test_sir_prior_structure(sir_data):
    model = get_model("sir", sir_data)
    draws = model.prior_sample(np.random.default_rng(17), 100_000)
    assert abs(draws[:, 2].mean() - 5.0) < 0.1
    assert np.all(draws[:, 2] == np.round(draws[:, 2]))
    # exponential rate terms plus the binomial pmf, checked by hand
    theta = np.array([[0.3, 0.7, 5.0]])
    expected = -0.3 - 0.7 + stats.binom.logpmf(5, SIR_N_POP, 5.0 / SIR_N_POP)
    assert model.log_prior(theta)[0] == pytest.approx(expected, abs=1e-10)
    assert model.log_prior(np.array([[-0.1, 0.7, 5.0]]))[0] == -np.inf


def test_sir_repopulate_attaches_conditioning_value(sir_data):
    model = get_model("sir", sir_data)
    draws = np.array([[0.1, 0.2], [0.3, 0.4]])
    out = model.repopulate(draws, 6.0)
    assert out.shape == (2, 3)
    assert np.all(out[:, 2] == 6.0)
    with pytest.raises(ValueError):
        model.repopulate(draws, None)


def test_fhn_repopulate_copies(fhn_data):
    model = get_model("fhn2", fhn_data)
    draws = np.ones((3, 7))
    out = model.repopulate(draws, None)
    out[0, 0] = 99.0
    assert draws[0, 0] == 1.0


def test_ricker_loglik_requires_and_uses_particle_indices(ricker_data):
    model = get_model("ricker", ricker_data, run_seed=4)
    theta = RICKER_TRUTH[None, :]
    with pytest.raises(ValueError):
        model.log_lik(theta)
    same = model.log_lik(theta, particle_indices=[7])
    again = model.log_lik(theta, particle_indices=[7])
    other = model.log_lik(theta, particle_indices=[8])
    assert same[0] == again[0]
    assert same[0] != other[0]


def test_ricker_prior_matches_hand_formulas(ricker_data):
    model = get_model("ricker", ricker_data)
    rng = np.random.default_rng(23)
    th = model.prior_sample(rng, 40)
    # N(0.5,1), chi-square with 4 dof, inverse gamma (shape 2, scale 0.05),
    # and N(1,1), each written out by hand
    expected = (
        -0.5 * (th[:, 0] - 0.5) ** 2 - 0.5 * np.log(2.0 * np.pi)
        + np.log(th[:, 1]) - 0.5 * th[:, 1] - np.log(4.0)
        + 2.0 * np.log(0.05) - 3.0 * np.log(th[:, 2]) - 0.05 / th[:, 2]
        - 0.5 * (th[:, 3] - 1.0) ** 2 - 0.5 * np.log(2.0 * np.pi)
    )
    assert np.allclose(model.log_prior(th), expected, atol=1e-10)


def test_model_geometry_declarations(fhn_data, sir_data, ricker_data):
    assert get_model("fhn2", fhn_data).proposal_dims == tuple(range(7))
    sir = get_model("sir", sir_data)
    assert sir.proposal_dims == (0, 1)
    assert sir.discrete_dims == (2,)
    assert get_model("ricker", ricker_data).discrete_dims == ()


def test_registry_rejects_unknown_names(fhn_data):
    with pytest.raises(ValueError):
        get_model("lorenz", fhn_data)
    with pytest.raises(ValueError):
        generate_dataset("lorenz", np.ones(3), np.random.default_rng(0))


def test_generate_dataset_deterministic():
    for name in ("fhn2", "sir", "ricker"):
        theta = DEFAULT_GENERATION_THETA[name]
        a = generate_dataset(name, theta, np.random.default_rng(9))
        b = generate_dataset(name, theta, np.random.default_rng(9))
        assert np.array_equal(a.values, b.values, equal_nan=True)
        assert np.array_equal(a.times, b.times)
