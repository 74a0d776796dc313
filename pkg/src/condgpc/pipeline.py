"""Configuration-driven end-to-end estimation runs with deterministic seeding.

A run draws a synthetic reference conductivity from the truncated expansion,
reads sparse observations of it, conditions the expansion, builds the
surrogate, places state measurements, samples the posterior, polishes the MAP
point, and reports the reconstruction error.  Every stage writes its artifacts
into the output directory, and the whole run is a pure function of the
configuration: the master seed fans out to per-stage seeds, so re-running a
config reproduces report.json byte for byte (wall-clock timings go to a
separate timings.json for that reason).
"""

from __future__ import annotations

import dataclasses
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conditioning import ConditionalKL
from .grids import Field, build_grid, write_observations
from .inference import (
    Posterior,
    UObservations,
    map_estimate,
    relative_error,
    sample_posterior,
)
from .kernels import SeparableExponential, SquaredExponential
from .kl import KarhunenLoeve, lognormal_moments
from .placement import baseline_locations, find_critical_points, select_locations
from .quadrature import gauss_hermite, smolyak_gauss_hermite
from .solvers import BoundaryConditions, solve_diffusion
from .surrogate import PolynomialChaosSurrogate

_KERNELS = {
    "squared-exponential": SquaredExponential,
    "separable-exponential": SeparableExponential,
}


class PipelineError(RuntimeError):
    """A pipeline stage failed; carries the stage name for CLI reporting."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class SamplerConfig:
    chains: int = 4
    iterations: int = 20000
    burn_in: int | None = None
    proposal: str = "de-mc"
    init: str = "laplace"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ExperimentConfig:
    """Complete description of one estimation experiment.

    kappa_obs_strategy: "random", "uniform", or "critical" (extrema of the
    reference field, capped at kappa_obs_critical and filled with random
    locations, mirroring the expert-knowledge arm).
    u_obs_strategy: "variance", "random", or "uniform".
    """

    problem: str = "custom"
    extents: tuple = ((0.0, 1.0),)
    grid_counts: tuple = (257,)
    kernel: str = "squared-exponential"
    kernel_length: tuple | float = 0.05
    mean_kappa: float = 5.0
    std_kappa: float = 2.5
    n_modes: int | None = 25
    energy: float | None = None
    kappa_obs_strategy: str = "random"
    kappa_obs_count: int = 20
    kappa_obs_critical: int = 0
    u_obs_strategy: str = "variance"
    u_obs_count: int = 6
    u_min_separation: float = 0.0
    degree: int = 3
    rule: str = "auto"
    boundary: dict = field(
        default_factory=lambda: {"left": 0.0, "right": 2.0, "bottom_flux": 0.0, "top_flux": 0.0}
    )
    noise: float = 1e-3
    add_observation_noise: bool = False
    prior_scale: float = 1.0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    seed: int = 0
    sampler_seed: int | None = None
    save_chains: bool = False

    def __post_init__(self):
        if isinstance(self.sampler, dict):
            self.sampler = SamplerConfig(**self.sampler)
        self.extents = tuple(tuple(float(v) for v in e) for e in self.extents)
        self.grid_counts = tuple(int(n) for n in self.grid_counts)
        if isinstance(self.kernel_length, (list, tuple)):
            self.kernel_length = tuple(float(v) for v in self.kernel_length)
        else:
            self.kernel_length = float(self.kernel_length)
        if self.problem not in ("1d", "2d-smooth", "2d-rough", "custom"):
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.kernel not in _KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if (self.n_modes is None) == (self.energy is None):
            raise ValueError("exactly one of n_modes and energy must be set")
        for name in ("kappa_obs_count", "u_obs_count", "degree"):
            if getattr(self, name) < (0 if name == "degree" else 1):
                raise ValueError(f"{name} must be positive")
        if self.kappa_obs_strategy not in ("random", "uniform", "critical"):
            raise ValueError(f"unknown kappa_obs_strategy {self.kappa_obs_strategy!r}")
        if self.u_obs_strategy not in ("variance", "random", "uniform"):
            raise ValueError(f"unknown u_obs_strategy {self.u_obs_strategy!r}")
        if self.rule not in ("auto", "tensor", "smolyak"):
            raise ValueError(f"unknown rule {self.rule!r}")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["extents"] = [list(e) for e in self.extents]
        out["grid_counts"] = list(self.grid_counts)
        if isinstance(self.kernel_length, tuple):
            out["kernel_length"] = list(self.kernel_length)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def build_kernel(self):
        return _KERNELS[self.kernel](length=self.kernel_length)

    def build_grid(self):
        return build_grid(self.extents, self.grid_counts)

    def build_boundary(self) -> BoundaryConditions:
        return BoundaryConditions(**self.boundary)

    def stage_seeds(self) -> dict:
        """Fan the master seed out to per-stage generators.

        Spawn order is fixed: reference, kappa-obs, u-obs, noise, sampler.
        sampler_seed overrides only the sampler stream, leaving the reference
        and observation sets untouched.
        """
        children = np.random.SeedSequence(self.seed).spawn(5)
        seeds = dict(zip(("reference", "kappa_obs", "u_obs", "noise", "sampler"), children))
        if self.sampler_seed is not None:
            seeds["sampler"] = np.random.SeedSequence(self.sampler_seed)
        return seeds


def presets() -> dict[str, ExperimentConfig]:
    """Named experiment configurations with documented seeds.

    The 1d presets share the [0,1] setup (squared-exponential kernel,
    L=0.05, 257 nodes, 25 modes, 20 conductivity observations, 6 state
    measurements) and differ in how conductivity observations are placed:
    case1 random, case2 uniform, case3 at reference extrema (15 critical + 5
    random).  The 2d-smooth presets use the separable exponential kernel
    (lengths 240 and 100) on [0,240]x[0,60] with an 80x20 grid, 25 modes, 20
    conductivity observations (case1 random; case2 9 critical + 11 random),
    and 10 state measurements.  The 2d-rough presets use the
    squared-exponential kernel (L=0.1) on [0,2]x[0,1] with a 128x64 grid, 210
    modes, 205 conductivity observations (case1 random; case2 50 critical +
    155 random), and 10 state measurements.  Variance-guided state placement
    keeps a minimum pairwise separation of one tenth of the longest domain
    extent in every preset: the sampler needs weakly correlated state
    measurements, and clustered picks starve whole subdomains of data.
    1d-demo is a scaled-down smoke configuration.  Master seeds are fixed per
    preset and listed below.
    """
    one_d = dict(
        problem="1d",
        extents=((0.0, 1.0),),
        grid_counts=(257,),
        kernel="squared-exponential",
        kernel_length=0.05,
        n_modes=25,
        kappa_obs_count=20,
        u_obs_count=6,
        u_min_separation=0.1,
        boundary={"left": 0.0, "right": 2.0, "bottom_flux": 0.0, "top_flux": 0.0},
        sampler=SamplerConfig(chains=12, iterations=20000),
    )
    two_d_smooth = dict(
        problem="2d-smooth",
        extents=((0.0, 240.0), (0.0, 60.0)),
        grid_counts=(80, 20),
        kernel="separable-exponential",
        kernel_length=(240.0, 100.0),
        n_modes=25,
        kappa_obs_count=20,
        u_obs_count=10,
        u_min_separation=24.0,
        boundary={"left": 50.0, "right": 25.0, "bottom_flux": 0.0, "top_flux": 0.0},
        sampler=SamplerConfig(chains=12, iterations=20000),
    )
    two_d_rough = dict(
        problem="2d-rough",
        extents=((0.0, 2.0), (0.0, 1.0)),
        grid_counts=(128, 64),
        kernel="squared-exponential",
        kernel_length=0.1,
        n_modes=210,
        kappa_obs_count=205,
        u_obs_count=10,
        u_min_separation=0.2,
        boundary={"left": 2.0, "right": 0.0, "bottom_flux": 0.0, "top_flux": 0.0},
        sampler=SamplerConfig(chains=12, iterations=20000),
    )
    return {
        "1d-case1": ExperimentConfig(**one_d, kappa_obs_strategy="random", seed=101),
        "1d-case2": ExperimentConfig(**one_d, kappa_obs_strategy="uniform", seed=102),
        "1d-case3": ExperimentConfig(
            **one_d, kappa_obs_strategy="critical", kappa_obs_critical=15, seed=103
        ),
        "2d-smooth-case1": ExperimentConfig(
            **two_d_smooth, kappa_obs_strategy="random", seed=201
        ),
        "2d-smooth-case2": ExperimentConfig(
            **two_d_smooth, kappa_obs_strategy="critical", kappa_obs_critical=9, seed=202
        ),
        "2d-rough-case1": ExperimentConfig(
            **two_d_rough, kappa_obs_strategy="random", seed=301
        ),
        "2d-rough-case2": ExperimentConfig(
            **two_d_rough, kappa_obs_strategy="critical", kappa_obs_critical=50, seed=302
        ),
        "1d-demo": ExperimentConfig(
            problem="1d",
            extents=((0.0, 1.0),),
            grid_counts=(65,),
            kernel="squared-exponential",
            kernel_length=0.2,
            n_modes=8,
            kappa_obs_count=5,
            u_obs_count=3,
            u_min_separation=0.1,
            boundary={"left": 0.0, "right": 2.0, "bottom_flux": 0.0, "top_flux": 0.0},
            sampler=SamplerConfig(chains=8, iterations=4000),
            seed=7,
        ),
    }


def build_expansion(config: ExperimentConfig) -> KarhunenLoeve:
    """Fit the truncated expansion of the log-conductivity on the config grid."""
    mu_g, sigma_g = lognormal_moments(config.mean_kappa, config.std_kappa)
    return KarhunenLoeve(
        kernel=config.build_kernel(),
        sigma=sigma_g,
        mean=mu_g,
        n_terms=config.n_modes,
        energy=config.energy,
    ).fit(config.build_grid())


def draw_reference(config: ExperimentConfig, kl: KarhunenLoeve, seed):
    """Draw the synthetic truth: coefficients, conductivity, and state fields."""
    rng = np.random.default_rng(seed)
    xi_true = rng.standard_normal(kl.n_terms_)
    log_ref = kl.sample(xi_true)
    kappa_ref = Field(kl.grid_, np.exp(log_ref.values))
    u_ref = solve_diffusion(kappa_ref, config.build_boundary())
    return xi_true, kappa_ref, u_ref


def _inflection_indices(values: np.ndarray) -> list[int]:
    # 1D sign changes of the second difference; keeps the node nearer the crossing
    d2 = np.diff(values, 2)
    out = []
    for i in np.nonzero(d2[:-1] * d2[1:] < 0)[0]:
        out.append(int(i + 1 if abs(d2[i]) <= abs(d2[i + 1]) else i + 2))
    return out


def kappa_observation_indices(
    config: ExperimentConfig, kappa_ref: Field, seed
) -> np.ndarray:
    """Flat grid indices of the conductivity observations for one run."""
    grid = kappa_ref.grid
    rng = np.random.default_rng(seed)
    n_m = config.kappa_obs_count
    if config.kappa_obs_strategy == "random":
        return np.sort(rng.choice(grid.n_points, size=n_m, replace=False))
    if config.kappa_obs_strategy == "uniform":
        return baseline_locations(grid, n_m, "uniform")
    return _critical_kappa_indices(kappa_ref, config.kappa_obs_critical, n_m, rng)


def _critical_kappa_indices(kappa: Field, limit: int, total: int, rng) -> np.ndarray:
    """Critical points of the reference field (capped at limit) plus random fill.

    Candidates are local maxima, minima (and 2D saddles), ranked by absolute
    deviation from the field mean, followed by 1D inflection points; the
    remaining observations are drawn uniformly from the rest of the grid.
    """
    grid = kappa.grid
    shift = kappa.values.min()
    highs = find_critical_points(Field(grid, kappa.values - shift))
    lows = find_critical_points(Field(grid, kappa.values.max() - kappa.values))
    mean_val = kappa.values.mean()
    extrema = sorted(
        {idx for _, idx in highs + lows},
        key=lambda idx: (-abs(kappa.values[idx] - mean_val), idx),
    )
    ranked = list(extrema)
    if grid.ndim == 1:
        ranked += [i for i in _inflection_indices(kappa.values) if i not in set(extrema)]
    chosen = list(ranked[: min(limit, total)])
    if len(chosen) < total:
        pool = np.setdiff1d(np.arange(grid.n_points), np.array(chosen, dtype=int))
        fill = rng.choice(pool, size=total - len(chosen), replace=False)
        chosen.extend(int(i) for i in np.sort(fill))
    return np.array(sorted(chosen[:total]), dtype=int)


def quadrature_for(config: ExperimentConfig, dim: int):
    """The quadrature rule the config requests, or None for the default."""
    if config.rule == "tensor":
        return gauss_hermite(dim, config.degree + 1)
    if config.rule == "smolyak":
        return smolyak_gauss_hermite(dim, config.degree + 1)
    return None


def run_pipeline(config: ExperimentConfig, out_dir) -> dict:
    """Execute the full estimation pipeline, writing artifacts and report.json.

    Returns the report dictionary (which also carries per-stage timings; the
    timings are persisted separately so report.json stays byte-reproducible).
    Raises PipelineError naming the failed stage; artifacts produced before
    the failure remain on disk.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    seeds = config.stage_seeds()
    report: dict = {"config": config.to_dict(), "stages": [], "artifacts": {}}
    timings: dict[str, float] = {}

    def stage(name):
        report["stages"].append(name)

        class _Timer:
            def __enter__(self):
                self.start = time.perf_counter()
                return self

            def __exit__(self, exc_type, exc, tb):
                timings[name] = time.perf_counter() - self.start
                if exc is not None and not isinstance(exc, PipelineError):
                    raise PipelineError(name, exc) from exc
                return False

        return _Timer()

    with stage("kl"):
        kl = build_expansion(config)
        grid = kl.grid_
        bc = config.build_boundary()
        kl.save_spectrum(out / "spectrum.csv")
        report["n_modes"] = kl.n_terms_
        report["energy_fraction"] = kl.energy_
        report["artifacts"]["spectrum"] = "spectrum.csv"

    with stage("reference"):
        xi_true, kappa_ref, u_ref = draw_reference(config, kl, seeds["reference"])
        kappa_ref.to_csv(out / "reference_kappa.csv")
        u_ref.to_csv(out / "reference_u.csv")
        np.savetxt(out / "xi_true.csv", xi_true[None, :], delimiter=",", fmt="%.17g")
        report["artifacts"]["reference_kappa"] = "reference_kappa.csv"
        report["artifacts"]["reference_u"] = "reference_u.csv"

    with stage("kappa-observations"):
        kobs_idx = kappa_observation_indices(config, kappa_ref, seeds["kappa_obs"])
        kobs_points = grid.points[kobs_idx]
        kobs_values = kappa_ref.values[kobs_idx]
        write_observations(out / "kappa_observations.csv", kobs_points, kobs_values)
        report["artifacts"]["kappa_observations"] = "kappa_observations.csv"

    with stage("condition"):
        conditional = ConditionalKL(base=kl).fit(kobs_points, np.log(kobs_values))
        report["n_kappa_obs_kept"] = int(len(conditional.kept_))
        report["n_kappa_obs_dropped"] = int(len(conditional.dropped_))
        report["reduced_dimension"] = int(conditional.n_components_)
        conditional.mean_field_.to_csv(out / "conditional_mean_log.csv")
        conditional.variance().to_csv(out / "conditional_variance_log.csv")
        report["artifacts"]["conditional_mean_log"] = "conditional_mean_log.csv"
        report["artifacts"]["conditional_variance_log"] = "conditional_variance_log.csv"

    with stage("surrogate"):
        rule = quadrature_for(config, conditional.n_components_)
        surrogate = PolynomialChaosSurrogate(degree=config.degree, rule=rule).fit(
            conditional, lambda kappa: solve_diffusion(kappa, bc).values
        )
        surrogate.save(out / "surrogate")
        surrogate.variance().to_csv(out / "u_variance.csv")
        report["n_collocation_solves"] = surrogate.n_solves_
        report["artifacts"]["surrogate"] = "surrogate"
        report["artifacts"]["u_variance"] = "u_variance.csv"

    with stage("place"):
        n_k = config.u_obs_count
        if config.u_obs_strategy == "variance":
            placement = select_locations(
                surrogate.variance(), n_k, min_separation=config.u_min_separation
            )
            placement.to_csv(out / "u_locations.csv")
            uobs_idx = placement.indices
        else:
            rng_uobs = np.random.default_rng(seeds["u_obs"])
            uobs_idx = baseline_locations(
                grid, n_k, config.u_obs_strategy,
                seed=rng_uobs if config.u_obs_strategy == "random" else None,
            )
            np.savetxt(
                out / "u_locations.csv",
                np.column_stack([grid.points[uobs_idx]]),
                delimiter=",",
                fmt="%.17g",
                header=",".join(f"x{j + 1}" for j in range(grid.ndim)),
                comments="",
            )
        report["n_u_obs"] = int(len(uobs_idx))
        report["artifacts"]["u_locations"] = "u_locations.csv"

    with stage("u-observations"):
        u_values = u_ref.values[uobs_idx].copy()
        if config.add_observation_noise:
            rng_noise = np.random.default_rng(seeds["noise"])
            u_values = u_values + config.noise * rng_noise.standard_normal(len(u_values))
        u_obs = UObservations(grid.points[uobs_idx], u_values, noise=config.noise)
        write_observations(out / "u_observations.csv", u_obs.locations, u_obs.values)
        report["artifacts"]["u_observations"] = "u_observations.csv"

    with stage("mcmc"):
        posterior = Posterior(surrogate, u_obs, prior_scale=config.prior_scale)
        rng_sampler = np.random.default_rng(seeds["sampler"])
        samples = sample_posterior(
            posterior,
            n_chains=config.sampler.chains,
            n_iterations=config.sampler.iterations,
            burn_in=config.sampler.burn_in,
            seed=rng_sampler,
            proposal=config.sampler.proposal,
            init=config.sampler.init,
        )
        if config.save_chains:
            samples.to_csv(out / "chains.csv")
            report["artifacts"]["chains"] = "chains.csv"
        report["r_hat"] = [float(v) for v in samples.r_hat]
        report["acceptance_rates"] = [float(v) for v in samples.acceptance_rates]
        low, high = 0.1, 0.6
        rates = samples.acceptance_rates
        if np.any((rates < low) | (rates > high)):
            warnings.warn(
                f"acceptance rates outside [{low}, {high}]: "
                + ", ".join(f"{r:.3f}" for r in rates)
            )

    with stage("map"):
        xi_map = map_estimate(samples, posterior, polish=True)
        report["map_log_posterior"] = float(posterior.log_density(xi_map))
        np.savetxt(out / "xi_map.csv", xi_map[None, :], delimiter=",", fmt="%.17g")
        report["artifacts"]["xi_map"] = "xi_map.csv"

    with stage("reconstruct"):
        _, kappa_map = conditional.sample(xi_map)
        kappa_map.to_csv(out / "kappa_estimate.csv")
        obs_match = np.abs(kappa_map.values[kobs_idx] - kobs_values) / np.abs(kobs_values)
        report["kappa_obs_max_relative_mismatch"] = float(obs_match.max())
        report["artifacts"]["kappa_estimate"] = "kappa_estimate.csv"

    with stage("error"):
        err_field, linf, l2 = relative_error(kappa_ref, kappa_map)
        err_field.to_csv(out / "error.csv")
        report["error_linf"] = linf
        report["error_l2"] = l2
        report["artifacts"]["error"] = "error.csv"

    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True))
    report["timings"] = timings
    return report


def compare_strategies(
    config: ExperimentConfig,
    strategies: list[str],
    seeds: list[int],
    out_dir,
    n_workers: int = 1,
) -> dict:
    """Run the pipeline per (strategy, seed) and tabulate errors.

    The reference field and conductivity observations depend only on the
    master seed, so all strategies within one seed share them.  Writes
    comparison.csv with per-seed rows plus a median row per strategy, and
    returns the table as a dictionary.  n_workers > 1 runs pipelines
    concurrently; each run owns its output directory.
    """
    if not strategies:
        raise ValueError("need at least one strategy")
    if len(seeds) < 1:
        raise ValueError("need at least one seed")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [
        (strat, int(seed), dataclasses.replace(config, u_obs_strategy=strat, seed=int(seed)))
        for seed in seeds
        for strat in strategies
    ]
    if n_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            reports = list(
                pool.map(
                    lambda job: run_pipeline(job[2], out / f"seed{job[1]}-{job[0]}"), jobs
                )
            )
    else:
        reports = [run_pipeline(cfg, out / f"seed{seed}-{strat}") for strat, seed, cfg in jobs]
    rows = []
    results: dict[str, dict[int, tuple[float, float]]] = {s: {} for s in strategies}
    for (strat, seed, _), report in zip(jobs, reports):
        results[strat][seed] = (report["error_linf"], report["error_l2"])
        rows.append((strat, seed, report["error_linf"], report["error_l2"]))
    medians = {
        strat: (
            float(np.median([v[0] for v in per_seed.values()])),
            float(np.median([v[1] for v in per_seed.values()])),
        )
        for strat, per_seed in results.items()
    }
    with open(out / "comparison.csv", "w") as fh:
        fh.write("strategy,seed,error_linf,error_l2\n")
        for strat, seed, linf, l2 in rows:
            fh.write(f"{strat},{seed},{linf:.17g},{l2:.17g}\n")
        for strat, (linf, l2) in medians.items():
            fh.write(f"{strat},median,{linf:.17g},{l2:.17g}\n")
    return {"per_seed": results, "medians": medians}
