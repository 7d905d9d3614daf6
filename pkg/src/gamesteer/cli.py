"""Command-line interface.

``steer run <config>`` executes one experiment, ``steer sweep`` fans a
config out over a value grid, ``steer solve`` precomputes optimal advice
for a game, and ``steer dump-game`` prints a game's shape.  Exit codes:
0 success, 2 config problem, 3 advice failed to certify.

Environment overrides: ``STEER_SEED`` replaces the config's seed and
``STEER_OUTDIR`` re-roots the output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .benchmarks import GAME_TAGS, BenchmarkSpec, build, default_objective
from .harness import ConfigError, load_config, run, sweep
from .mediator import NonCertifiedEquilibriumError, augment, solve_optimal_bce
from .steering import HorizonTooShortError


def _apply_env(config):
    seed_text = os.environ.get("STEER_SEED")
    if seed_text is not None:
        try:
            config.seed = int(seed_text)
        except ValueError:
            raise ConfigError(f"STEER_SEED: expected an integer, got {seed_text!r}") from None
        if config.seed < 0:
            raise ConfigError(f"STEER_SEED: must be nonnegative, got {config.seed}")
    outdir = os.environ.get("STEER_OUTDIR")
    if outdir:
        from .harness import _output_stem

        stem = _output_stem(config)
        config.output = os.path.join(outdir, os.path.basename(stem))
    return config


def _parse_vary(entries) -> dict:
    vary = {}
    for entry in entries:
        if "=" not in entry:
            raise ConfigError(f"--vary: expected key=v1,v2,..., got {entry!r}")
        key, _, values = entry.partition("=")
        key = key.strip()
        tokens = [v.strip() for v in values.split(",") if v.strip()]
        if not key or not tokens:
            raise ConfigError(f"--vary: expected key=v1,v2,..., got {entry!r}")
        vary[key] = tokens
    return vary


def _parse_game_params(entries) -> dict:
    params = {}
    for entry in entries or ():
        if "=" not in entry:
            raise ConfigError(f"--param: expected name=value, got {entry!r}")
        key, _, value = entry.partition("=")
        value = value.strip()
        try:
            params[key.strip()] = int(value)
        except ValueError:
            try:
                params[key.strip()] = float(value)
            except ValueError:
                raise ConfigError(f"--param: {key} expects a number, got {value!r}") from None
    return params


def _cmd_run(args) -> int:
    config = _apply_env(load_config(args.config))
    summary = run(config)
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    config = _apply_env(load_config(args.config))
    summaries = sweep(config, _parse_vary(args.vary))
    print(json.dumps([s.to_dict() for s in summaries], indent=2, sort_keys=True))
    return 0


def _cmd_solve(args) -> int:
    spec = BenchmarkSpec(args.game, _parse_game_params(args.param))
    try:
        game = build(spec)
    except ValueError as exc:
        raise ConfigError(f"game: {exc}") from exc
    aug = augment(game)
    solution = solve_optimal_bce(
        aug,
        default_objective(spec, game),
        iterations=args.iterations,
        lam=args.lam,
        tol=args.tol,
    )
    outdir = os.environ.get("STEER_OUTDIR") or args.out
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, f"{args.game}_advice.npz")
    np.savez_compressed(
        path,
        mediator_mass=solution.mediator_strategy.mass,
        deviation_benefits=solution.deviation_benefits,
        value=solution.value,
        lam=solution.lam,
        certified=solution.certified,
    )
    report = dict(solution.summary())
    report["game"] = args.game
    report["advice_path"] = path
    print(json.dumps(report, indent=2, sort_keys=True))
    if not solution.certified:
        print("advice failed to certify at the requested tolerance", file=sys.stderr)
        return 3
    return 0


def _cmd_dump_game(args) -> int:
    spec = BenchmarkSpec(args.game, _parse_game_params(args.param))
    try:
        game = build(spec)
    except ValueError as exc:
        raise ConfigError(f"game: {exc}") from exc
    info = {
        "name": game.name,
        "players": game.n_players,
        "terminals": game.n_terminals,
        "raw_payoff_min": float(game.raw_payoffs.min()),
        "raw_payoff_max": float(game.raw_payoffs.max()),
        "normalization_scale": float(game.scale),
        "normalization_offset": float(game.offset),
        "infosets_per_player": [int(game.seq[p].n_infosets) for p in range(game.n_players)],
        "sequences_per_player": [int(game.seq[p].n_seqs) for p in range(game.n_players)],
    }
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="steer",
        description="Run steering experiments on benchmark games.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one experiment config")
    run_p.add_argument("config", help="path to an INI experiment config")
    run_p.set_defaults(func=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="run a config over a value grid")
    sweep_p.add_argument("config", help="path to an INI experiment config")
    sweep_p.add_argument(
        "--vary",
        action="append",
        required=True,
        metavar="KEY=V1,V2,...",
        help="comma-separated values for one config key (repeatable)",
    )
    sweep_p.set_defaults(func=_cmd_sweep)

    solve_p = sub.add_parser("solve", help="precompute optimal advice for a game")
    solve_p.add_argument("game", choices=GAME_TAGS)
    solve_p.add_argument("--iterations", type=int, default=4000)
    solve_p.add_argument("--lam", type=float, default=1.0)
    solve_p.add_argument("--tol", type=float, default=1e-4)
    solve_p.add_argument("--out", default="runs")
    solve_p.add_argument("--param", action="append", metavar="NAME=VALUE")
    solve_p.set_defaults(func=_cmd_solve)

    dump_p = sub.add_parser("dump-game", help="print a benchmark game's shape")
    dump_p.add_argument("game", choices=GAME_TAGS)
    dump_p.add_argument("--param", action="append", metavar="NAME=VALUE")
    dump_p.set_defaults(func=_cmd_dump_game)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, HorizonTooShortError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NonCertifiedEquilibriumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
