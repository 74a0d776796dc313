import numpy as np
import pytest

from condgpc.grids import Field, build_grid
from condgpc.inference import (
    Posterior,
    UObservations,
    gelman_rubin,
    map_estimate,
    relative_error,
    sample_posterior,
)
from condgpc.quadrature import total_degree_indices
from condgpc.surrogate import PointSurrogate


def _linear_point_surrogate(dim, n_obs, seed=0):
    """PointSurrogate realizing u(xi) = b + A^T xi with random coefficients."""
    rng = np.random.default_rng(seed)
    indices = total_degree_indices(dim, 1)
    coefficients = np.zeros((len(indices), n_obs))
    coefficients[0] = rng.uniform(1.0, 2.0, n_obs)  # b
    coefficients[1:] = 0.4 * rng.standard_normal((dim, n_obs))  # A rows
    points = rng.uniform(0.0, 1.0, (n_obs, 1))
    return PointSurrogate(indices=indices, coefficients=coefficients, points=points)


def _conjugate_posterior(dim=5, n_obs=8, noise=0.05, prior_scale=1.0, seed=0):
    surrogate = _linear_point_surrogate(dim, n_obs, seed=seed)
    b, A = surrogate.linear_part()
    rng = np.random.default_rng(seed + 100)
    xi_star = rng.standard_normal(dim)
    y = b + xi_star @ A
    obs = UObservations(surrogate.points, y, noise=noise)
    posterior = Posterior(surrogate, obs, prior_scale=prior_scale)
    # closed-form Gaussian posterior for the linear model
    H = A @ A.T / noise**2 + np.eye(dim) / prior_scale
    cov = np.linalg.inv(H)
    mean = cov @ (A @ (y - b)) / noise**2
    return posterior, mean, cov


def test_uobservations_validation():
    locations = np.array([[0.1], [0.5]])
    UObservations(locations, np.array([1.0, 2.0]), noise=0.1)
    with pytest.raises(ValueError):
        UObservations(np.array([[0.1], [0.1]]), np.array([1.0, 2.0]), noise=0.1)
    with pytest.raises(ValueError):
        UObservations(locations, np.array([1.0, np.nan]), noise=0.1)
    with pytest.raises(ValueError):
        UObservations(locations, np.array([1.0, 2.0]), noise=0.0)


def test_log_density_matches_hand_formula():
    posterior, _, _ = _conjugate_posterior(dim=3, n_obs=4)
    surrogate = posterior.point_surrogate
    obs = posterior.observations
    b, A = surrogate.linear_part()
    rng = np.random.default_rng(1)
    for _ in range(5):
        xi = rng.standard_normal(3)
        misfit = obs.values - (b + xi @ A)
        expected = -np.sum(misfit**2) / (2 * obs.noise**2) - np.sum(xi**2) / (
            2 * posterior.prior_scale
        )
        assert posterior.log_density(xi) == pytest.approx(expected, rel=1e-12)


def test_regularization_weight():
    posterior, _, _ = _conjugate_posterior(noise=0.2, prior_scale=4.0)
    assert posterior.regularization == pytest.approx(0.2**2 / 4.0, rel=1e-15)


def test_gaussian_approximation_matches_ridge_closed_form():
    posterior, mean, cov = _conjugate_posterior(dim=4, n_obs=6)
    m, S = posterior.gaussian_approximation()
    assert np.allclose(m, mean, atol=1e-10)
    assert np.allclose(S, cov, atol=1e-10)


def test_prior_only_posterior():
    surrogate = _linear_point_surrogate(3, 2)
    posterior = Posterior(surrogate, observations=None, prior_scale=2.0)
    xi = np.array([0.5, -1.0, 2.0])
    assert posterior.log_density(xi) == pytest.approx(-np.sum(xi**2) / 4.0, rel=1e-12)
    assert posterior.regularization == 0.0


def test_gelman_rubin_duplicated_chain_is_one():
    rng = np.random.default_rng(2)
    chain = rng.standard_normal((1, 500, 3))
    stacked = np.concatenate([chain, chain], axis=0)
    assert np.allclose(gelman_rubin(stacked), 1.0, atol=1e-12)


def test_gelman_rubin_flags_disjoint_chains():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((1, 400, 2))
    b = rng.standard_normal((1, 400, 2)) + 5.0
    r = gelman_rubin(np.concatenate([a, b], axis=0))
    assert np.all(r > 1.5)


def _batch_se(samples, n_batches=20):
    # batch-means standard error accounting for autocorrelation
    n = samples.shape[0] // n_batches * n_batches
    batches = samples[:n].reshape(n_batches, -1, samples.shape[1]).mean(axis=1)
    return batches.std(axis=0, ddof=1) / np.sqrt(n_batches)


@pytest.mark.parametrize("proposal", ["de-mc", "adaptive-rw"])
def test_sampler_recovers_conjugate_posterior(proposal):
    posterior, mean, cov = _conjugate_posterior(dim=4, n_obs=6, noise=0.1)
    samples = sample_posterior(
        posterior, n_chains=8, n_iterations=6000, seed=11, proposal=proposal
    )
    flat = samples.flattened()
    se = _batch_se(flat)
    assert np.all(np.abs(flat.mean(axis=0) - mean) <= 3 * se + 1e-4)
    emp_cov = np.cov(flat.T)
    assert np.abs(emp_cov - cov).max() <= 0.25 * np.abs(np.diag(cov)).max()
    assert np.all(samples.r_hat < 1.05)


def test_sampler_bitwise_deterministic():
    posterior, _, _ = _conjugate_posterior()
    a = sample_posterior(posterior, n_chains=4, n_iterations=400, seed=21)
    b = sample_posterior(posterior, n_chains=4, n_iterations=400, seed=21)
    c = sample_posterior(posterior, n_chains=4, n_iterations=400, seed=22)
    assert np.array_equal(a.chains, b.chains)
    assert np.array_equal(a.log_posteriors, b.log_posteriors)
    assert not np.array_equal(a.chains, c.chains)


class _RejectEverything:
    """Posterior stub whose density is finite only at the prior mean."""

    dim = 3
    prior_mean = np.zeros(3)
    prior_scale = 1.0

    def log_density_batch(self, Xi):
        Xi = np.atleast_2d(Xi)
        at_origin = np.all(Xi == 0.0, axis=1)
        return np.where(at_origin, 0.0, -np.inf)

    def gaussian_approximation(self):
        return np.zeros(3), np.eye(3)


@pytest.mark.filterwarnings("ignore:invalid value encountered")
def test_stall_abort_reports_diagnostics():
    posterior = _RejectEverything()
    with pytest.raises(RuntimeError, match="stalled"):
        sample_posterior(
            posterior, n_chains=4, n_iterations=3000, seed=5, init="prior"
        )


def test_sampler_rejects_bad_settings():
    posterior, _, _ = _conjugate_posterior()
    with pytest.raises(ValueError):
        sample_posterior(posterior, n_chains=2, n_iterations=100, proposal="de-mc")
    with pytest.raises(ValueError):
        sample_posterior(posterior, n_chains=4, n_iterations=100, burn_in=100)
    with pytest.raises(ValueError):
        sample_posterior(posterior, n_chains=4, n_iterations=100, proposal="gibbs")
    with pytest.raises(ValueError):
        sample_posterior(posterior, n_chains=4, n_iterations=100, init="mode")


def test_map_estimate_reaches_conjugate_mean():
    posterior, mean, _ = _conjugate_posterior(dim=3, n_obs=6, noise=0.05)
    samples = sample_posterior(posterior, n_chains=6, n_iterations=4000, seed=7)
    xi_map = map_estimate(samples, posterior)
    # the Gaussian posterior's mode is its mean; polish should land close
    assert np.abs(xi_map - mean).max() <= 1e-6
    assert posterior.log_density(xi_map) >= samples.map_log_posterior - 1e-12


def test_map_estimate_polish_only_improves():
    posterior, _, _ = _conjugate_posterior(dim=4)
    samples = sample_posterior(posterior, n_chains=6, n_iterations=1000, seed=9)
    raw = map_estimate(samples, posterior, polish=False)
    polished = map_estimate(samples, posterior, polish=True)
    assert posterior.log_density(polished) >= posterior.log_density(raw)


def test_samples_to_csv(tmp_path):
    posterior, _, _ = _conjugate_posterior(dim=2)
    samples = sample_posterior(posterior, n_chains=3, n_iterations=50, burn_in=10, seed=1)
    samples.to_csv(tmp_path / "chains.csv")
    header = (tmp_path / "chains.csv").read_text().splitlines()[0]
    assert header == "iteration,chain,xi1,xi2,log_posterior"
    data = np.loadtxt(tmp_path / "chains.csv", delimiter=",", skiprows=1)
    assert data.shape == (3 * 40, 5)


def test_relative_error_fields():
    g = build_grid(((0.0, 1.0),), (5,))
    ref = Field(g, np.array([1.0, 2.0, 4.0, 2.0, 1.0]))
    est = Field(g, np.array([1.1, 2.0, 3.0, 2.0, 1.0]))
    err, linf, l2 = relative_error(ref, est)
    expected = np.abs(est.values - ref.values) / ref.values
    assert np.allclose(err.values, expected)
    assert linf == pytest.approx(0.25)
    w = g.weights / g.weights.sum()
    assert l2 == pytest.approx(np.sqrt(np.sum(w * expected**2)))


def test_relative_error_validation():
    g = build_grid(((0.0, 1.0),), (5,))
    other = build_grid(((0.0, 1.0),), (9,))
    with pytest.raises(ValueError):
        relative_error(Field(g, np.ones(5)), Field(other, np.ones(9)))
    with pytest.raises(ValueError):
        relative_error(Field(g, np.zeros(5)), Field(g, np.ones(5)))
