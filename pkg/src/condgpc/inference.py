"""Posterior over the reduced coordinates, MCMC sampling, and MAP extraction.

The posterior combines a Gaussian likelihood on state observations, evaluated
through the surrogate restricted to the observation points, with a standard
normal prior on xi (scaled by theta):

    log p(xi | data) = -sum_j (u_hat_j - u_tilde_j(xi))^2 / (2 sigma^2)
                       - ||xi - xi0||^2 / (2 theta)       (+ const, taken 0)

Sampling uses differential-evolution proposals across a population of chains
(or an adaptive random walk), with chains initialized from a Gaussian
approximation built from the surrogate's linear part.  That initialization
matters: with observation noise around 1e-3 the posterior is a thin ellipsoid,
and a population started from the prior can take essentially forever to find
it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import Field
from .surrogate import PointSurrogate, PolynomialChaosSurrogate


@dataclass(frozen=True)
class UObservations:
    """State measurements: locations, values, and the likelihood noise scale."""

    locations: np.ndarray
    values: np.ndarray
    noise: float = 1e-3

    def __post_init__(self):
        locations = np.atleast_2d(np.asarray(self.locations, dtype=float))
        values = np.asarray(self.values, dtype=float).ravel()
        if locations.shape[0] != values.shape[0]:
            raise ValueError("one value per location required")
        if values.shape[0] < 1:
            raise ValueError("at least one observation required")
        if len({tuple(row) for row in locations}) != locations.shape[0]:
            raise ValueError("observation locations must be distinct")
        if not (np.isfinite(self.noise) and self.noise > 0):
            raise ValueError("noise must be a positive number")
        if not (np.all(np.isfinite(locations)) and np.all(np.isfinite(values))):
            raise ValueError("observations must be finite")
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)


class Posterior:
    """Log-posterior of the reduced coordinates given state observations.

    The surrogate's coefficient fields are interpolated to the observation
    locations once, so each density evaluation is a small polynomial
    evaluation.  With observations=None the posterior is the prior alone.
    """

    def __init__(
        self,
        surrogate: PolynomialChaosSurrogate | PointSurrogate,
        observations: UObservations | None = None,
        prior_mean: np.ndarray | None = None,
        prior_scale: float = 1.0,
    ):
        if not (np.isfinite(prior_scale) and prior_scale > 0):
            raise ValueError("prior_scale must be positive")
        self.observations = observations
        self.prior_scale = float(prior_scale)
        if observations is not None:
            if isinstance(surrogate, PointSurrogate):
                self.point_surrogate = surrogate
            else:
                self.point_surrogate = surrogate.at_points(observations.locations)
            if self.point_surrogate.coefficients.shape[1] != len(observations):
                raise ValueError("surrogate points do not match the observations")
            self.dim = self.point_surrogate.dim
        else:
            self.point_surrogate = None
            if isinstance(surrogate, PointSurrogate):
                self.dim = surrogate.dim
            else:
                self.dim = surrogate.indices_.shape[1]
        if prior_mean is None:
            prior_mean = np.zeros(self.dim)
        prior_mean = np.asarray(prior_mean, dtype=float).ravel()
        if prior_mean.shape != (self.dim,):
            raise ValueError(f"prior_mean must have length {self.dim}")
        self.prior_mean = prior_mean

    @property
    def regularization(self) -> float:
        """The equivalent Tikhonov weight noise^2 / prior_scale."""
        if self.observations is None:
            return 0.0
        return self.observations.noise**2 / self.prior_scale

    def log_density(self, xi: np.ndarray) -> float:
        return float(self.log_density_batch(np.atleast_2d(xi))[0])

    def log_density_batch(self, Xi: np.ndarray) -> np.ndarray:
        Xi = np.atleast_2d(np.asarray(Xi, dtype=float))
        if Xi.shape[1] != self.dim:
            raise ValueError(f"expected xi of dimension {self.dim}, got {Xi.shape[1]}")
        out = -np.sum((Xi - self.prior_mean) ** 2, axis=1) / (2 * self.prior_scale)
        if self.observations is not None:
            resid = self.point_surrogate.batch(Xi) - self.observations.values[None, :]
            out = out - np.sum(resid**2, axis=1) / (2 * self.observations.noise**2)
        return out

    def gaussian_approximation(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the posterior with the surrogate linearized.

        Exact when the surrogate is affine in xi; otherwise a Laplace-style
        approximation good enough to start chains from.
        """
        if self.observations is None:
            return self.prior_mean.copy(), self.prior_scale * np.eye(self.dim)
        b, A = self.point_surrogate.linear_part()
        s2 = self.observations.noise**2
        H = A @ A.T / s2 + np.eye(self.dim) / self.prior_scale
        rhs = A @ (self.observations.values - b) / s2 + self.prior_mean / self.prior_scale
        mean = np.linalg.solve(H, rhs)
        cov = np.linalg.inv(H)
        return mean, (cov + cov.T) / 2


@dataclass
class PosteriorSamples:
    """Post-burn-in chains with diagnostics.

    chains has shape (n_chains, n_retained, dim); log_posteriors matches its
    first two axes.  map_sample is the best retained sample, so its log
    posterior bounds every retained value from above.
    """

    chains: np.ndarray
    log_posteriors: np.ndarray
    burn_in: int
    acceptance_rates: np.ndarray
    r_hat: np.ndarray = field(init=False)
    map_sample: np.ndarray = field(init=False)
    map_log_posterior: float = field(init=False)

    def __post_init__(self):
        self.chains = np.asarray(self.chains, dtype=float)
        self.log_posteriors = np.asarray(self.log_posteriors, dtype=float)
        if self.chains.ndim != 3 or self.log_posteriors.shape != self.chains.shape[:2]:
            raise ValueError("chains must be (n_chains, n_retained, dim) with matching logs")
        if self.chains.shape[0] >= 2 and self.chains.shape[1] >= 2:
            self.r_hat = gelman_rubin(self.chains)
        else:
            self.r_hat = np.full(self.chains.shape[2], np.nan)
        flat = np.unravel_index(np.argmax(self.log_posteriors), self.log_posteriors.shape)
        self.map_sample = self.chains[flat].copy()
        self.map_log_posterior = float(self.log_posteriors[flat])

    @property
    def n_chains(self) -> int:
        return self.chains.shape[0]

    @property
    def dim(self) -> int:
        return self.chains.shape[2]

    def flattened(self) -> np.ndarray:
        return self.chains.reshape(-1, self.dim)

    def to_csv(self, path) -> None:
        """One row per retained sample: iteration, chain, xi components, log posterior."""
        n_kept = self.chains.shape[1]
        with open(path, "w") as fh:
            cols = ",".join(f"xi{j + 1}" for j in range(self.dim))
            fh.write(f"iteration,chain,{cols},log_posterior\n")
            for c in range(self.n_chains):
                for t in range(n_kept):
                    xi = ",".join(f"{v:.17g}" for v in self.chains[c, t])
                    fh.write(f"{self.burn_in + t},{c},{xi},{self.log_posteriors[c, t]:.17g}\n")


def gelman_rubin(chains: np.ndarray) -> np.ndarray:
    """Between/within-chain variance ratio per coordinate.

    Computed as sqrt((W + B_n) / W) with W the mean within-chain variance and
    B_n the variance of the chain means, so duplicated chains give exactly 1.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 3:
        raise ValueError("chains must have shape (n_chains, n_samples, dim)")
    if chains.shape[0] < 2:
        raise ValueError("at least two chains are required")
    if chains.shape[1] < 2:
        raise ValueError("at least two samples per chain are required")
    within = chains.var(axis=1, ddof=1).mean(axis=0)
    between = chains.mean(axis=1).var(axis=0, ddof=1)
    within = np.where(within == 0, np.where(between == 0, 1.0, np.finfo(float).tiny), within)
    return np.sqrt((within + between) / within)


# Aborting after this many generations without a single accepted proposal:
# the sampler is stuck and more iterations cannot help.
STALL_LIMIT = 1000


def _distinct_pairs(rng, n_chains: int) -> tuple[np.ndarray, np.ndarray]:
    """For each chain c, two distinct partner indices, both != c."""
    c = np.arange(n_chains)
    r1 = rng.integers(0, n_chains - 1, n_chains)
    r1 = r1 + (r1 >= c)
    r2 = rng.integers(0, n_chains - 2, n_chains)
    lo = np.minimum(c, r1)
    hi = np.maximum(c, r1)
    r2 = r2 + (r2 >= lo)
    r2 = r2 + (r2 >= hi)
    return r1, r2


def sample_posterior(
    posterior: Posterior,
    n_chains: int = 4,
    n_iterations: int = 20000,
    burn_in: int | None = None,
    seed=None,
    proposal: str = "de-mc",
    init: str = "laplace",
) -> PosteriorSamples:
    """Run synchronous multi-chain MCMC on the posterior.

    proposal "de-mc": xi' = xi_c + gamma (xi_a - xi_b) + e with gamma =
    2.38/sqrt(2d), switching to gamma = 1 for 10% of proposals (mode jumps),
    e ~ N(0, (1e-6)^2 I).  Partners a, b are distinct chains read from the
    previous generation, so results are independent of scheduling.

    proposal "adaptive-rw": Gaussian random walk whose covariance is the
    scaled empirical covariance of the pooled chain history, adapted from
    burn_in/2 onward; before that it uses the Gaussian approximation.

    init "laplace" draws starting points from the linearized-posterior
    Gaussian inflated 2x in standard deviation; "prior" draws from the prior.

    Deterministic for a fixed seed.  Raises RuntimeError if every proposal is
    rejected for 1000 consecutive generations.
    """
    if burn_in is None:
        burn_in = n_iterations // 2
    if not 0 <= burn_in < n_iterations:
        raise ValueError("burn_in must be in [0, n_iterations)")
    if proposal not in ("de-mc", "adaptive-rw"):
        raise ValueError(f"unknown proposal {proposal!r}")
    if proposal == "de-mc" and n_chains < 3:
        raise ValueError("de-mc proposals need at least 3 chains")
    if n_chains < 1:
        raise ValueError("n_chains must be positive")
    d = posterior.dim
    rng = np.random.default_rng(seed)

    if init == "laplace":
        mean0, cov0 = posterior.gaussian_approximation()
        chol0 = np.linalg.cholesky(4 * cov0 + 1e-12 * np.eye(d))
        state = mean0[None, :] + rng.standard_normal((n_chains, d)) @ chol0.T
    elif init == "prior":
        state = posterior.prior_mean[None, :] + np.sqrt(
            posterior.prior_scale
        ) * rng.standard_normal((n_chains, d))
    else:
        raise ValueError(f"unknown init {init!r}")
    logp = posterior.log_density_batch(state)

    n_kept = n_iterations - burn_in
    kept = np.empty((n_chains, n_kept, d))
    kept_logp = np.empty((n_chains, n_kept))
    accepted = np.zeros(n_chains, dtype=int)
    stall = 0
    gamma0 = 2.38 / np.sqrt(2 * d)

    if proposal == "adaptive-rw":
        _, cov_walk = posterior.gaussian_approximation()
        chol_walk = np.linalg.cholesky(
            (2.38**2 / d) * cov_walk + 1e-12 * np.eye(d)
        )
        adapt_from = burn_in // 2
        history = np.empty((n_chains, n_iterations, d))

    for t in range(n_iterations):
        if proposal == "de-mc":
            r1, r2 = _distinct_pairs(rng, n_chains)
            gamma = np.where(rng.random(n_chains) < 0.1, 1.0, gamma0)[:, None]
            prop = state + gamma * (state[r1] - state[r2])
            prop = prop + 1e-6 * rng.standard_normal((n_chains, d))
        else:
            prop = state + rng.standard_normal((n_chains, d)) @ chol_walk.T
        prop_logp = posterior.log_density_batch(prop)
        accept = np.log(rng.random(n_chains)) < prop_logp - logp
        state = np.where(accept[:, None], prop, state)
        logp = np.where(accept, prop_logp, logp)
        accepted += accept

        if accept.any():
            stall = 0
        else:
            stall += 1
            if stall >= STALL_LIMIT:
                raise RuntimeError(
                    f"sampler stalled: no proposal accepted for {STALL_LIMIT} consecutive "
                    f"generations (iteration {t}, best log-posterior {logp.max():.6g}, "
                    f"acceptance so far {accepted.sum() / ((t + 1) * n_chains):.4f})"
                )

        if proposal == "adaptive-rw":
            history[:, t] = state
            enough = (t + 1) * n_chains >= d + 2
            if t >= adapt_from and enough and (t - adapt_from) % 100 == 0:
                pool = history[:, : t + 1].reshape(-1, d)
                cov_emp = np.cov(pool.T).reshape(d, d)
                chol_walk = np.linalg.cholesky(
                    (2.38**2 / d) * cov_emp + 1e-12 * np.eye(d)
                )
        if t >= burn_in:
            kept[:, t - burn_in] = state
            kept_logp[:, t - burn_in] = logp

    return PosteriorSamples(
        chains=kept,
        log_posteriors=kept_logp,
        burn_in=burn_in,
        acceptance_rates=accepted / n_iterations,
    )


def _golden_max(f, lo: float, hi: float, tol: float = 1e-12) -> tuple[float, float]:
    """Golden-section search for the maximum of f on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    e = a + invphi * (b - a)
    fc, fe = f(c), f(e)
    while b - a > tol:
        if fc >= fe:
            b, e, fe = e, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + invphi * (b - a)
            fe = f(e)
    return (c, fc) if fc >= fe else (e, fe)


def map_estimate(
    samples: PosteriorSamples,
    posterior: Posterior,
    polish: bool = True,
    window: float = 2.0,
    max_rounds: int = 200,
) -> np.ndarray:
    """Best retained sample, optionally refined by coordinate ascent.

    Polishing runs golden-section line searches along one coordinate at a
    time (window of +-2 around the current point, re-centered every round)
    until a full round improves the log posterior by less than 1e-10.  The
    result is never worse than the best retained sample.
    """
    xi = samples.map_sample.copy()
    if not polish:
        return xi
    current = posterior.log_density(xi)
    for _ in range(max_rounds):
        improved = False
        for j in range(posterior.dim):
            def along(v, j=j):
                z = xi.copy()
                z[j] = v
                return posterior.log_density(z)

            best_v, best_f = _golden_max(along, xi[j] - window, xi[j] + window)
            if best_f > current + 1e-10:
                xi[j] = best_v
                current = best_f
                improved = True
        if not improved:
            break
    return xi


def relative_error(kappa_ref: Field, kappa_est: Field) -> tuple[Field, float, float]:
    """Pointwise relative error field with its max and RMS summaries.

    The second summary is the root mean square of the relative error over the
    domain (quadrature-weighted), the first is the maximum.
    """
    if kappa_ref.grid != kappa_est.grid:
        raise ValueError("fields must share a grid")
    if np.any(kappa_ref.values <= 0):
        raise ValueError("reference field must be positive")
    eps = np.abs(kappa_est.values - kappa_ref.values) / kappa_ref.values
    err = Field(kappa_ref.grid, eps)
    linf = float(eps.max())
    l2 = float(np.sqrt(np.sum(kappa_ref.grid.weights * eps**2) / kappa_ref.grid.measure))
    return err, linf, l2
