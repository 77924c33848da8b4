"""Command-line entry point: ``crowdgame <subcommand> [options]``.

Exit codes: 0 success, 1 domain failure (constraint or verdict), 2 usage or
parse error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from crowdgame.harness import experiments as ex
from crowdgame.harness.config import ConfigError, ExperimentConfig, load_config, scenario_path
from crowdgame.mechanisms import MECHANISMS, GoldSeededMechanism, make_mechanism
from crowdgame.probcore import Distribution, validate_world

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    out = []
    try:
        for part in text.replace(" ", "").split(","):
            if ":" in part:
                lo, hi = part.split(":")
                out.extend(range(int(lo), int(hi) + 1))
            elif part:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers like '1,2,5' or '1:10', got {text!r}") from None
    return out


def _dists(text: str) -> list[list[float]]:
    return [_floats(chunk) for chunk in text.split(";") if chunk.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="experiment config (YAML)")
    src.add_argument("--scenario", help="name of a shipped scenario config")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--trials", type=int, help="Monte-Carlo trials (overrides config)")
    common.add_argument("--out", type=Path, help="output CSV path (default: config 'output' or stdout)")
    common.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")

    p = argparse.ArgumentParser(prog="crowdgame", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", parents=[common], help="check the world constraints of a config")

    s = sub.add_parser("simulate", parents=[common], help="estimate p_II, p_UU and the odds curve")
    s.add_argument("--grid", type=_ints, help="n_items values, e.g. 5,10,20,40")

    s = sub.add_parser("equilibrium", parents=[common], help="unilateral deviation check of the configured profile")
    s.add_argument("--epsilon", type=float)

    s = sub.add_parser("impossibility", parents=[common], help="run the two indistinguishable scenarios")
    s.add_argument("--k", type=int)
    s.add_argument("--base-dist", type=_floats)
    s.add_argument("--agents", type=int)
    s.add_argument("--items", type=int)
    s.add_argument("--mechanism", choices=sorted(MECHANISMS))
    s.add_argument("--threshold", type=float)

    s = sub.add_parser("gold-sweep", parents=[common], help="misclassification against gold-set size")
    s.add_argument("--g", type=_ints, help="gold sizes, e.g. 1,2,5,10 or 1:10")

    s = sub.add_parser("entropy-sweep", parents=[common], help="basin shares under best-response dynamics")
    s.add_argument("--p-u", type=_dists, help="prejudice laws, e.g. '1,0;0.9,0.1'")
    s.add_argument("--steps", type=int)
    s.add_argument("--restarts", type=int)
    s.add_argument("--br-trials", type=int, help="trials per payoff estimate inside the dynamics")
    return p


def _load(args) -> ExperimentConfig | None:
    if args.config is not None:
        return load_config(args.config)
    if args.scenario is not None:
        try:
            return load_config(scenario_path(args.scenario))
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from None
    return None


def _require(cfg, command):
    if cfg is None:
        raise UsageError(f"{command} needs --config or --scenario")
    return cfg


def _emit(text: str, args, cfg: ExperimentConfig | None) -> None:
    out = args.out or (Path(cfg.output) if cfg is not None and cfg.output else None)
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)


def _world_ok(cfg: ExperimentConfig) -> bool:
    report = validate_world(cfg.world.build())
    if not report.passed:
        print(report.format(), file=sys.stderr)
    return report.passed


def cmd_validate(args, cfg) -> int:
    cfg = _require(cfg, "validate")
    report = validate_world(cfg.world.build())
    print(report.format())
    for c in report.failed():
        print(f"constraint violated: {c.name}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_DOMAIN


def cmd_simulate(args, cfg) -> int:
    cfg = _require(cfg, "simulate")
    if not _world_ok(cfg):
        return EXIT_DOMAIN
    game = cfg.game_config()
    grid = args.grid or cfg.n_items_grid or [cfg.assignment.n_items]
    rows = ex.simulate_rows(game, cfg.strategy_profile(game.roster), cfg.build_mechanism(), grid, args.trials, args.seed, args.threads)
    _emit(ex.render_csv(ex.SIMULATE_COLUMNS, rows), args, cfg)
    return EXIT_OK


def cmd_equilibrium(args, cfg) -> int:
    cfg = _require(cfg, "equilibrium")
    if not _world_ok(cfg):
        return EXIT_DOMAIN
    game = cfg.game_config()
    eps = args.epsilon if args.epsilon is not None else cfg.epsilon
    if eps <= 0:
        raise UsageError("--epsilon must be positive")
    verdict, rows = ex.equilibrium_rows(
        game, cfg.strategy_profile(game.roster), cfg.build_mechanism(), eps, args.trials, args.seed, args.threads
    )
    _emit(ex.render_csv(ex.EQUILIBRIUM_COLUMNS, rows), args, cfg)
    print(f"epsilon-equilibrium: {verdict.is_epsilon_equilibrium}", file=sys.stderr)
    return EXIT_OK if verdict.is_epsilon_equilibrium else EXIT_DOMAIN


def cmd_impossibility(args, cfg) -> int:
    k = args.k if args.k is not None else (cfg.world.k if cfg else 2)
    base = args.base_dist or (cfg.world.p_y if cfg else [1.0 / k] * k)
    agents = args.agents or (cfg.roster.n_agents if cfg else 6)
    items = args.items or (cfg.assignment.n_items if cfg else 30)
    name = args.mechanism or (cfg.mechanism.name if cfg else "agreement")
    params = dict(cfg.mechanism.params) if cfg and cfg.mechanism.name == name else {}
    if args.threshold is not None:
        params["threshold"] = args.threshold
    try:
        base_dist = Distribution(base)
    except ValueError as exc:
        raise UsageError(f"--base-dist: {exc}") from None
    if base_dist.k != k:
        raise UsageError(f"--base-dist has {base_dist.k} entries but --k is {k}")
    try:
        mech = make_mechanism(name, **params)
    except TypeError as exc:
        raise UsageError(f"mechanism parameters: {exc}") from None
    if mech.uses_anchor:
        print(
            f"mechanism {name!r} reads anchored labels; the impossibility demo is defined for "
            "mechanisms that see reports only",
            file=sys.stderr,
        )
        return EXIT_DOMAIN
    rep, rows = ex.impossibility_rows(k, base_dist, agents, items, mech, args.trials, args.seed, args.threads)
    _emit(ex.render_csv(ex.IMPOSSIBILITY_COLUMNS, rows), args, cfg)
    return EXIT_OK


def cmd_gold_sweep(args, cfg) -> int:
    cfg = _require(cfg, "gold-sweep")
    if not _world_ok(cfg):
        return EXIT_DOMAIN
    mech = cfg.build_mechanism()
    if not isinstance(mech, GoldSeededMechanism):
        raise UsageError("gold-sweep needs a config with mechanism name 'gold'")
    g_values = args.g or cfg.gold_grid or [mech.n_gold]
    bad = [g for g in g_values if g < 1]
    if bad:
        raise UsageError(f"gold sizes must be >= 1 (the mechanism needs a non-empty gold set), got {bad}")
    game = cfg.game_config()
    try:
        rows = ex.gold_sweep_rows(game, cfg.strategy_profile(game.roster), mech, g_values, args.trials, args.seed, args.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _emit(ex.render_csv(ex.GOLD_SWEEP_COLUMNS, rows), args, cfg)
    return EXIT_OK


def cmd_entropy_sweep(args, cfg) -> int:
    cfg = _require(cfg, "entropy-sweep")
    game = cfg.game_config()
    sweep = cfg.entropy_sweep
    p_u = args.p_u or sweep.p_u or [cfg.world.p_u]
    steps = args.steps if args.steps is not None else sweep.steps
    restarts = args.restarts if args.restarts is not None else sweep.restarts
    br_trials = args.br_trials or sweep.trials
    if steps < 0 or restarts < 1 or br_trials < 100:
        raise UsageError("need steps >= 0, restarts >= 1, br-trials >= 100")
    try:
        rows = ex.entropy_sweep_rows(game, cfg.build_mechanism(), p_u, steps, restarts, br_trials, args.seed, args.threads)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DOMAIN
    _emit(ex.render_csv(ex.ENTROPY_SWEEP_COLUMNS, rows), args, cfg)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "equilibrium": cmd_equilibrium,
    "impossibility": cmd_impossibility,
    "gold-sweep": cmd_gold_sweep,
    "entropy-sweep": cmd_entropy_sweep,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
        if args.seed is None:
            args.seed = cfg.seed if cfg else 0
        if args.trials is None:
            args.trials = cfg.trials if cfg else 1000
        if args.seed < 0 or args.trials < 1 or args.threads < 1:
            raise UsageError("--seed must be >= 0, --trials and --threads >= 1")
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
