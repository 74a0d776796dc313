"""Command-line front end exposing each pipeline stage on persisted artifacts.

Every artifact-writing subcommand works against an output directory: it reads
whatever earlier-stage files are already there (config.json,
kappa_observations.csv, surrogate/, u_locations.csv, ...) and computes only
what is missing, so single stages can be rerun for debugging without
repeating the expensive ones.  `run` executes the whole pipeline, `compare`
sweeps placement strategies over seeds.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from functools import cached_property
from pathlib import Path

import numpy as np

from .conditioning import ConditionalKL
from .grids import Field, read_observations, write_observations
from .inference import (
    Posterior,
    UObservations,
    map_estimate,
    relative_error,
    sample_posterior,
)
from .pipeline import (
    ExperimentConfig,
    PipelineError,
    build_expansion,
    compare_strategies,
    draw_reference,
    kappa_observation_indices,
    presets,
    quadrature_for,
    run_pipeline,
)
from .placement import baseline_locations, select_locations
from .solvers import solve_diffusion
from .surrogate import PolynomialChaosSurrogate


class _Workspace:
    """Lazily materializes pipeline artifacts in one output directory.

    Each property loads the persisted artifact when present and otherwise
    computes and persists it, so CLI stages compose in any order.
    """

    def __init__(self, config: ExperimentConfig, out: Path):
        self.config = config
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.seeds = config.stage_seeds()
        if not (self.out / "config.json").exists():
            config.save(self.out / "config.json")

    @cached_property
    def expansion(self):
        return build_expansion(self.config)

    @cached_property
    def grid(self):
        return self.expansion.grid_

    @cached_property
    def reference(self) -> tuple[Field, Field]:
        kpath = self.out / "reference_kappa.csv"
        upath = self.out / "reference_u.csv"
        if kpath.exists() and upath.exists():
            return Field.from_csv(kpath, self.grid), Field.from_csv(upath, self.grid)
        xi_true, kappa_ref, u_ref = draw_reference(
            self.config, self.expansion, self.seeds["reference"]
        )
        kappa_ref.to_csv(kpath)
        u_ref.to_csv(upath)
        np.savetxt(self.out / "xi_true.csv", xi_true[None, :], delimiter=",", fmt="%.17g")
        return kappa_ref, u_ref

    @cached_property
    def kappa_observations(self) -> tuple[np.ndarray, np.ndarray]:
        path = self.out / "kappa_observations.csv"
        if path.exists():
            return read_observations(path, ndim=self.grid.ndim)
        kappa_ref, _ = self.reference
        idx = kappa_observation_indices(self.config, kappa_ref, self.seeds["kappa_obs"])
        points, values = self.grid.points[idx], kappa_ref.values[idx]
        write_observations(path, points, values)
        return points, values

    @cached_property
    def conditional(self) -> ConditionalKL:
        points, values = self.kappa_observations
        conditional = ConditionalKL(base=self.expansion).fit(points, np.log(values))
        conditional.mean_field_.to_csv(self.out / "conditional_mean_log.csv")
        conditional.variance().to_csv(self.out / "conditional_variance_log.csv")
        return conditional

    @cached_property
    def surrogate(self) -> PolynomialChaosSurrogate:
        sdir = self.out / "surrogate"
        if (sdir / "meta.json").exists():
            return PolynomialChaosSurrogate.load(sdir, conditional=self.conditional)
        conditional = self.conditional
        rule = quadrature_for(self.config, conditional.n_components_)
        bc = self.config.build_boundary()
        model = PolynomialChaosSurrogate(degree=self.config.degree, rule=rule).fit(
            conditional, lambda kappa: solve_diffusion(kappa, bc).values
        )
        model.save(sdir)
        model.variance().to_csv(self.out / "u_variance.csv")
        return model

    def place(self, strategy: str, persist: bool = True) -> np.ndarray:
        """Select state-measurement indices; persists u_locations.csv."""
        path = self.out / "u_locations.csv"
        if strategy == "variance":
            result = select_locations(
                self.surrogate.variance(),
                self.config.u_obs_count,
                min_separation=self.config.u_min_separation,
            )
            if persist:
                result.to_csv(path)
            return result.indices
        rng = np.random.default_rng(self.seeds["u_obs"])
        idx = baseline_locations(
            self.grid,
            self.config.u_obs_count,
            strategy,
            seed=rng if strategy == "random" else None,
        )
        if persist:
            header = ",".join(f"x{j + 1}" for j in range(self.grid.ndim))
            np.savetxt(
                path, self.grid.points[idx], delimiter=",", fmt="%.17g",
                header=header, comments="",
            )
        return idx

    def u_observations(self, strategy: str) -> UObservations:
        path = self.out / "u_observations.csv"
        if path.exists():
            locations, values = read_observations(path, ndim=self.grid.ndim)
            return UObservations(locations, values, noise=self.config.noise)
        loc_path = self.out / "u_locations.csv"
        if loc_path.exists():
            locations = _read_placement_locations(loc_path, self.grid.ndim)
            idx, _ = self.grid.nearest_index(locations)
        else:
            idx = self.place(strategy)
        _, u_ref = self.reference
        values = u_ref.values[idx].copy()
        if self.config.add_observation_noise:
            rng = np.random.default_rng(self.seeds["noise"])
            values = values + self.config.noise * rng.standard_normal(len(values))
        obs = UObservations(self.grid.points[idx], values, noise=self.config.noise)
        write_observations(path, obs.locations, obs.values)
        return obs


def _read_placement_locations(path, ndim: int) -> np.ndarray:
    # u_locations.csv may carry score/provenance columns; keep the coordinates
    data = np.genfromtxt(path, delimiter=",", skip_header=1, usecols=tuple(range(ndim)))
    return np.atleast_2d(data) if ndim > 1 else np.atleast_2d(data).reshape(-1, 1)


def _resolve_config(args) -> ExperimentConfig:
    if getattr(args, "preset", None):
        catalog = presets()
        if args.preset not in catalog:
            raise ValueError(
                f"unknown preset {args.preset!r}; available: {', '.join(sorted(catalog))}"
            )
        config = catalog[args.preset]
    elif getattr(args, "config", None):
        config = ExperimentConfig.load(args.config)
    elif getattr(args, "out", None) and (Path(args.out) / "config.json").exists():
        config = ExperimentConfig.load(Path(args.out) / "config.json")
    else:
        raise ValueError("provide --preset, --config, or an --out dir with config.json")
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _cmd_kl(args) -> int:
    ws = _Workspace(_resolve_config(args), args.out)
    kl = ws.expansion
    kl.save_spectrum(ws.out / "spectrum.csv")
    print(f"retained {kl.n_terms_} modes capturing {kl.energy_:.4f} of the field energy")
    print(f"wrote {ws.out / 'spectrum.csv'}")
    return 0


def _cmd_condition(args) -> int:
    ws = _Workspace(_resolve_config(args), args.out)
    conditional = ws.conditional
    print(
        f"conditioned on {len(conditional.kept_)} observations "
        f"({len(conditional.dropped_)} dropped as redundant); "
        f"reduced dimension {conditional.n_components_}"
    )
    return 0


def _cmd_surrogate(args) -> int:
    ws = _Workspace(_resolve_config(args), args.out)
    model = ws.surrogate
    print(
        f"surrogate: dimension {model.indices_.shape[1]}, degree {model.degree}, "
        f"{model.indices_.shape[0]} terms, {model.n_solves_} collocation solves"
    )
    return 0


def _cmd_place(args) -> int:
    config = _resolve_config(args)
    strategy = args.strategy or config.u_obs_strategy
    ws = _Workspace(config, args.out)
    idx = ws.place(strategy)
    print(f"placed {len(idx)} measurement locations ({strategy}):")
    for point in ws.grid.points[idx]:
        print("  " + ", ".join(f"{v:.6g}" for v in np.atleast_1d(point)))
    return 0


def _cmd_infer(args) -> int:
    config = _resolve_config(args)
    strategy = args.strategy or config.u_obs_strategy
    ws = _Workspace(config, args.out)
    obs = ws.u_observations(strategy)
    posterior = Posterior(ws.surrogate, obs, prior_scale=config.prior_scale)
    samples = sample_posterior(
        posterior,
        n_chains=config.sampler.chains,
        n_iterations=config.sampler.iterations,
        burn_in=config.sampler.burn_in,
        seed=np.random.default_rng(ws.seeds["sampler"]),
        proposal=config.sampler.proposal,
        init=config.sampler.init,
    )
    if config.save_chains:
        samples.to_csv(ws.out / "chains.csv")
    xi_map = map_estimate(samples, posterior)
    np.savetxt(ws.out / "xi_map.csv", xi_map[None, :], delimiter=",", fmt="%.17g")
    _, kappa_map = ws.conditional.sample(xi_map)
    kappa_map.to_csv(ws.out / "kappa_estimate.csv")
    print(f"acceptance rates: {', '.join(f'{r:.3f}' for r in samples.acceptance_rates)}")
    print(f"max R-hat: {np.nanmax(samples.r_hat):.4f}")
    print(f"MAP log-posterior: {posterior.log_density(xi_map):.6g}")
    ref_path = ws.out / "reference_kappa.csv"
    if ref_path.exists():
        kappa_ref = Field.from_csv(ref_path, ws.grid)
        err_field, linf, l2 = relative_error(kappa_ref, kappa_map)
        err_field.to_csv(ws.out / "error.csv")
        print(f"relative error: Linf {linf:.4%}, weighted L2 {l2:.4%}")
    else:
        print("no reference_kappa.csv; skipping the error report")
    return 0


def _cmd_run(args) -> int:
    config = _resolve_config(args)
    report = run_pipeline(config, args.out)
    print(f"modes {report['n_modes']}, reduced dimension {report['reduced_dimension']}")
    print(f"collocation solves: {report['n_collocation_solves']}")
    print(f"max R-hat: {max(report['r_hat']):.4f}")
    print(f"relative error: Linf {report['error_linf']:.4%}, L2 {report['error_l2']:.4%}")
    print(f"report: {Path(args.out) / 'report.json'}")
    return 0


def _cmd_compare(args) -> int:
    config = _resolve_config(args)
    strategies = [s.strip() for s in args.strategy.split(",") if s.strip()]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [config.seed]
    table = compare_strategies(
        config, strategies, seeds, args.out, n_workers=args.threads
    )
    print(f"{'strategy':<12} {'median Linf':>12} {'median L2':>12}")
    for strategy, (linf, l2) in table["medians"].items():
        print(f"{strategy:<12} {linf:>12.4%} {l2:>12.4%}")
    print(f"table: {Path(args.out) / 'comparison.csv'}")
    return 0


def _cmd_presets(args) -> int:
    catalog = presets()
    if args.preset:
        if args.preset not in catalog:
            raise SystemExit(
                f"unknown preset {args.preset!r}; available: {', '.join(sorted(catalog))}"
            )
        print(json.dumps(catalog[args.preset].to_dict(), indent=2, sort_keys=True))
        return 0
    print(f"{'name':<18} {'problem':<10} {'grid':<10} {'modes':>5} {'k-obs':>5} {'u-obs':>5} {'seed':>5}")
    for name, config in catalog.items():
        grid = "x".join(str(n) for n in config.grid_counts)
        modes = config.n_modes if config.n_modes is not None else f"e{config.energy}"
        print(
            f"{name:<18} {config.problem:<10} {grid:<10} {modes:>5} "
            f"{config.kappa_obs_count:>5} {config.u_obs_count:>5} {config.seed:>5}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condgpc",
        description="Estimate a space-dependent diffusion coefficient from sparse "
        "measurements via conditioned expansions and surrogate-accelerated MCMC.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--preset", help="named preset (see `condgpc presets`)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("kl", help="fit the expansion and write its spectrum")
    common(p)
    p.set_defaults(fn=_cmd_kl)

    p = sub.add_parser("condition", help="condition the expansion on conductivity observations")
    common(p)
    p.set_defaults(fn=_cmd_condition)

    p = sub.add_parser("surrogate", help="build and save the collocation surrogate")
    common(p)
    p.set_defaults(fn=_cmd_surrogate)

    p = sub.add_parser("place", help="select state-measurement locations")
    common(p)
    p.add_argument("--strategy", help="variance | random | uniform (default: config)")
    p.set_defaults(fn=_cmd_place)

    p = sub.add_parser("infer", help="sample the posterior and reconstruct the coefficient")
    common(p)
    p.add_argument("--strategy", help="placement strategy when locations are not persisted")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("run", help="run the full pipeline")
    common(p)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("compare", help="sweep placement strategies over seeds")
    common(p)
    p.add_argument(
        "--strategy",
        default="variance,random,uniform",
        help="comma-separated strategies (default: variance,random,uniform)",
    )
    p.add_argument("--seeds", help="comma-separated master seeds (default: config seed)")
    p.add_argument(
        "--threads", type=int, default=1,
        help="concurrent pipeline runs (each owns its output directory)",
    )
    p.set_defaults(fn=_cmd_compare)

    p = sub.add_parser("presets", help="list presets or print one as JSON")
    p.add_argument("--preset", help="print this preset's full config")
    p.set_defaults(fn=_cmd_presets)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PipelineError as exc:
        print(f"error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"error in stage '{args.command}': {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
