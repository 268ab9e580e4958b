"""Command-line experiment runner.

Subcommands: train, coverage, heatmap, entropy, validate-config. A run is
fully described by a JSON config (or a named preset) plus repeatable
``--set dotted.key=value`` overrides; every seed directory receives the
resolved config back, so results are reproducible from their outputs alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import reporting
from .config import ConfigError, RunConfig, apply_overrides, config_from_dict, load_config, preset_dict
from .mixture import MoEPolicy
from .training import METRICS_COLUMNS, run


def _resolve_config(args) -> RunConfig:
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise ConfigError("<cli>", "pass either --config or --preset, not both")
    if getattr(args, "preset", None):
        doc = preset_dict(args.preset)
    elif getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("<file>", f"not valid JSON: {exc}") from exc
    else:
        raise ConfigError("<cli>", "one of --config or --preset is required")
    doc = apply_overrides(doc, args.set or [])
    cfg = config_from_dict(doc)
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    return cfg


def _context_grid(lo, hi, counts):
    """Uniform grid of cell centers over a 1-D or 2-D context box."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape[0] == 1:
        nx = counts[0]
        xs = lo[0] + (hi[0] - lo[0]) * (np.arange(nx) + 0.5) / nx
        return xs[:, None], xs, None
    if lo.shape[0] == 2:
        nx, ny = counts
        xs = lo[0] + (hi[0] - lo[0]) * (np.arange(nx) + 0.5) / nx
        ys = lo[1] + (hi[1] - lo[1]) * (np.arange(ny) + 0.5) / ny
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()]), xs, ys
    raise ConfigError("env", f"grid reports support 1-D or 2-D contexts, got d_c={lo.shape[0]}")


def _parse_grid(spec: str, d_c: int) -> tuple[int, ...]:
    parts = spec.lower().split("x")
    try:
        counts = tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError("grid", f"cannot parse grid spec {spec!r}") from exc
    if any(c < 1 for c in counts):
        raise ConfigError("grid", "grid counts must be >= 1")
    if len(counts) == 1:
        counts = counts * d_c
    if len(counts) != d_c:
        raise ConfigError("grid", f"grid spec {spec!r} does not match d_c={d_c}")
    return counts


def _context_box_for(args, model_d_c: int):
    if getattr(args, "box", None):
        vals = [float(v) for v in args.box.split(",")]
        if len(vals) != 2 * model_d_c:
            raise ConfigError("box", f"--box needs {2 * model_d_c} comma-separated numbers")
        lo = np.array(vals[0::2])
        hi = np.array(vals[1::2])
        return lo, hi, None
    cfg = _resolve_config(args)
    env = cfg.make_env()
    if env.d_c != model_d_c:
        raise ConfigError("env", f"env context dimension {env.d_c} does not match model ({model_d_c})")
    return env.context_lo, env.context_hi, env


def _load_model(path) -> tuple[MoEPolicy, dict]:
    try:
        return MoEPolicy.load(path)
    except FileNotFoundError:
        raise ConfigError("model", f"model file not found: {path}")
    except (KeyError, ValueError) as exc:
        raise ConfigError("model", f"cannot load model: {exc}")


# ------------------------------------------------------------------- commands


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out_root = Path(cfg.output_dir)
    seed_dirs = []
    for seed in cfg.seeds:
        seed_dir = out_root / f"seed_{seed}"
        if seed_dir.exists() and not args.force:
            raise ConfigError(
                "output_dir", f"{seed_dir} already exists; pass --force to overwrite"
            )
        seed_dirs.append(seed_dir)
    env = cfg.make_env()
    for seed, seed_dir in zip(cfg.seeds, seed_dirs):
        seed_dir.mkdir(parents=True, exist_ok=True)
        hp = dataclasses.replace(cfg.hyperparams, seed=seed)
        result = run(hp, env, ablation_zero_aux=cfg.ablation_zero_aux)
        result.policy.save(seed_dir / "model.json", hp.alpha, hp.beta)
        reporting.write_metrics_csv(seed_dir / "metrics.csv", result.metrics, METRICS_COLUMNS)
        with open(seed_dir / "run_config.resolved.json", "w", encoding="utf-8") as fh:
            json.dump(cfg.to_dict(seed=seed), fh, indent=2)
            fh.write("\n")
        if not args.no_plots:
            reporting.plot_metrics(seed_dir / "metrics.png", result.metrics)
        print(f"seed {seed}: {result.policy.n_components} components, "
              f"{result.env_samples} env samples -> {seed_dir}")
    return 0


def cmd_coverage(args) -> int:
    policy, _ = _load_model(args.model)
    lo, hi, _ = _context_box_for(args, policy.d_c)
    counts = _parse_grid(args.grid, policy.d_c)
    grid, xs, ys = _context_grid(lo, hi, counts)
    log_density = policy.marginal_context_log_density_batch(grid)
    log_gating = policy.log_gating_batch(grid)
    argmax = np.argmax(log_gating, axis=1)
    gating = np.exp(log_gating)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent_terms = np.where(gating > 0.0, gating * np.log(gating), 0.0)
    gating_entropy = -np.sum(ent_terms, axis=1)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    header = [f"c{i}" for i in range(policy.d_c)] + [
        "marginal_context_log_density", "gating_argmax", "gating_entropy",
    ]
    rows = (
        list(grid[i]) + [log_density[i], int(argmax[i]), gating_entropy[i]]
        for i in range(grid.shape[0])
    )
    reporting.write_csv(out / "coverage.csv", header, rows)
    if not args.no_plots:
        reporting.plot_coverage(out / "coverage.png", xs, ys, log_density, argmax)
    print(f"coverage over {grid.shape[0]} grid points -> {out / 'coverage.csv'}")
    return 0


def cmd_heatmap(args) -> int:
    policy, _ = _load_model(args.model)
    lo, hi, env = _context_box_for(args, policy.d_c)
    if env is None:
        raise ConfigError("<cli>", "heatmap needs --config or --preset for the success predicate")
    counts = _parse_grid(args.cells, policy.d_c)
    grid, xs, ys = _context_grid(lo, hi, counts)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    n = args.samples_per_cell
    fractions = np.empty(grid.shape[0])
    means = [e.mean_at(grid) for e in policy.experts]
    log_gating = policy.log_gating_batch(grid)
    for i, c in enumerate(grid):
        successes = np.array([env.success(means[o][i], c) for o in range(policy.n_components)])
        os = rng.choice(policy.n_components, size=n, p=np.exp(log_gating[i]))
        fractions[i] = float(np.mean(successes[os]))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    header = [f"c{i}" for i in range(policy.d_c)] + ["success_fraction"]
    reporting.write_csv(out / "heatmap.csv", header,
                        (list(grid[i]) + [fractions[i]] for i in range(grid.shape[0])))
    if not args.no_plots:
        reporting.plot_heatmap(out / "heatmap.png", xs, ys, fractions)
    print(f"success heat map over {grid.shape[0]} cells -> {out / 'heatmap.csv'}")
    return 0


def cmd_entropy(args) -> int:
    policy, _ = _load_model(args.model)
    lo, hi, _ = _context_box_for(args, policy.d_c)
    if policy.d_c == 1:
        counts = (args.contexts,)
    else:
        side = max(1, round(args.contexts ** (1.0 / policy.d_c)))
        counts = (side,) * policy.d_c
    grid, xs, ys = _context_grid(lo, hi, counts)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    per_context = np.array([
        policy.expected_mixture_entropy(c[None, :], args.samples, rng) for c in grid
    ])
    expected = float(np.mean(per_context))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    header = [f"c{i}" for i in range(policy.d_c)] + ["mixture_entropy"]
    reporting.write_csv(out / "entropy.csv", header,
                        (list(grid[i]) + [per_context[i]] for i in range(grid.shape[0])))
    if not args.no_plots:
        reporting.plot_entropy(out / "entropy.png", xs, ys, per_context)
    print(f"{expected:.17g}")
    return 0


def cmd_validate_config(args) -> int:
    cfg = load_config(args.config)
    print(f"config ok: env={cfg.env_name}, seeds={cfg.seeds}, "
          f"N={cfg.hyperparams.n_components}, K={cfg.hyperparams.iters_per_component}")
    return 0


# --------------------------------------------------------------------- parser


def _add_config_args(p: argparse.ArgumentParser, with_force: bool = False):
    p.add_argument("--config", help="path to a JSON run config")
    p.add_argument("--preset", help="named preset configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry via dotted path (repeatable)")
    p.add_argument("--seed", type=int, help="run only this seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
    if with_force:
        p.add_argument("--force", action="store_true",
                       help="allow overwriting existing seed directories")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svsl",
        description="Train and inspect mixture-of-experts contextual search policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run training for each configured seed")
    _add_config_args(p_train, with_force=True)
    p_train.set_defaults(func=cmd_train)

    p_cov = sub.add_parser("coverage", help="context density and gating over a grid")
    p_cov.add_argument("model", help="path to model.json")
    p_cov.add_argument("--grid", default="40x40", help="grid spec, e.g. 40x40")
    p_cov.add_argument("--box", help="context box as lo0,hi0[,lo1,hi1] when no config is given")
    _add_config_args(p_cov)
    p_cov.set_defaults(func=cmd_coverage)

    p_heat = sub.add_parser("heatmap", help="success fraction per context cell")
    p_heat.add_argument("model", help="path to model.json")
    p_heat.add_argument("--cells", default="20x20", help="grid spec, e.g. 20x20")
    p_heat.add_argument("--samples-per-cell", type=int, default=100)
    _add_config_args(p_heat)
    p_heat.set_defaults(func=cmd_heatmap)

    p_ent = sub.add_parser("entropy", help="expected mixture entropy over a context grid")
    p_ent.add_argument("model", help="path to model.json")
    p_ent.add_argument("--contexts", type=int, default=1600)
    p_ent.add_argument("--samples", type=int, default=1000)
    p_ent.add_argument("--box", help="context box as lo0,hi0[,lo1,hi1] when no config is given")
    _add_config_args(p_ent)
    p_ent.set_defaults(func=cmd_entropy)

    p_val = sub.add_parser("validate-config", help="check a config file and exit")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure with context
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
