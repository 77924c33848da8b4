"""Experiment drivers behind the CLI subcommands; each returns CSV rows."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from crowdgame.equilibrium import basin_shares, impossibility_demo, verify_equilibrium
from crowdgame.game import GameConfig, Primitives, Strategy, StrategyProfile, assemble_reports, run_blocks, truthful_informed_set
from crowdgame.mechanisms import GoldSeededMechanism, Mechanism, evaluate_mechanism
from crowdgame.probcore import Distribution, entropy, validate_world
from crowdgame.streams import child_seed

CSV_VERSION_LINE = "# crowdgame-csv v1"

SIMULATE_COLUMNS = ["n_items", "p_ii_hat", "p_uu_hat", "odds_ratio_ii", "odds_ratio_uu", "trials", "seed"]
EQUILIBRIUM_COLUMNS = ["agent_type", "deviation", "baseline", "deviated", "gain", "std_err", "verdict"]
IMPOSSIBILITY_COLUMNS = [
    "mechanism",
    "k",
    "base_dist",
    "n_agents",
    "n_items",
    "trials",
    "seed",
    "success_rate_scenario1",
    "success_rate_scenario2",
    "combined",
    "pooled_std_err",
    "distribution_test_pvalue",
    "paired_violations",
]
GOLD_SWEEP_COLUMNS = ["g", "misclassification_rate", "rounds_to_fixed_point", "trials", "seed"]
ENTROPY_SWEEP_COLUMNS = [
    "p_u",
    "entropy_p_u",
    "entropy_informed",
    "basin_prejudice",
    "basin_truthful",
    "basin_randomise",
    "basin_other",
    "non_converged",
    "restarts",
    "steps",
]


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, (list, tuple)):
        return " ".join(fmt(float(v)) for v in value)
    return str(value)


def render_csv(columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    buf.write(CSV_VERSION_LINE + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def parse_csv(text: str) -> tuple[list[str], list[dict[str, str]]]:
    lines = text.splitlines()
    if not lines or lines[0] != CSV_VERSION_LINE:
        raise ValueError("missing crowdgame-csv version line")
    reader = csv.DictReader(lines[1:])
    rows = list(reader)
    return list(reader.fieldnames or []), rows


def simulate_rows(cfg: GameConfig, profile, mechanism, grid, trials, seed, threads=1) -> list[dict]:
    grid = list(grid) or [cfg.n_items]
    metrics = evaluate_mechanism(mechanism, cfg, profile, trials, seed, grid, threads)
    return [
        {
            "n_items": pt.n_items,
            "p_ii_hat": pt.p_ii_hat,
            "p_uu_hat": pt.p_uu_hat,
            "odds_ratio_ii": pt.odds_ratio_ii,
            "odds_ratio_uu": pt.odds_ratio_uu,
            "trials": trials,
            "seed": seed,
        }
        for pt in metrics.odds_ratio_curve
    ]


def equilibrium_rows(cfg, profile, mechanism, epsilon, trials, seed, threads=1):
    verdict = verify_equilibrium(cfg, profile, mechanism, epsilon, trials, seed, threads)
    rows = [
        {
            "agent_type": d.agent_type,
            "deviation": d.strategy.value,
            "baseline": d.baseline.value,
            "deviated": d.deviated.value,
            "gain": d.gain,
            "std_err": d.std_err,
            "verdict": verdict.is_epsilon_equilibrium,
        }
        for d in verdict.deviations
    ]
    return verdict, rows


def impossibility_rows(k, base: Distribution, n_agents, n_items, mechanism: Mechanism, trials, seed, threads=1):
    rep = impossibility_demo(k, base, n_agents, n_items, mechanism, trials, seed, threads)
    row = {
        "mechanism": mechanism.name,
        "k": k,
        "base_dist": list(base.probs),
        "n_agents": n_agents,
        "n_items": n_items,
        "trials": trials,
        "seed": seed,
        "success_rate_scenario1": rep.success_rate_scenario1,
        "success_rate_scenario2": rep.success_rate_scenario2,
        "combined": rep.combined,
        "pooled_std_err": rep.pooled_std_err,
        "distribution_test_pvalue": rep.distribution_test_pvalue,
        "paired_violations": rep.paired_violations,
    }
    return rep, [row]


@dataclass(frozen=True)
class GoldRun:
    misclassification_rate: float
    rounds_to_fixed_point: float
    trials_used: int


def gold_misclassification(
    cfg: GameConfig,
    profile: StrategyProfile,
    mechanism: Mechanism,
    trials: int,
    seed: int,
    threads: int = 1,
    require_gold_contradiction: bool = False,
    stream_prefix: Sequence[int] = (),
) -> GoldRun:
    """Fraction of agents whose trusted status disagrees with membership of A_IT.

    With ``require_gold_contradiction`` only trials in which the shared prejudice
    differs from the truth on at least one gold item are counted.
    """
    target = np.zeros(cfg.n_agents, dtype=bool)
    target[list(truthful_informed_set(cfg.roster, profile))] = True

    def fn(prims: Primitives, streams):
        anchors = mechanism.draw_anchors(prims, streams["mechanism"])
        batch = assemble_reports(cfg, profile, prims)
        c = mechanism.classify(batch.reports, batch.mask, anchors)
        keep = np.ones(prims.trials, dtype=bool)
        if require_gold_contradiction:
            keep = ((prims.prejudice_shared != prims.truth) & anchors.mask).any(axis=1)
        wrong = (c.identified != target[None, :]).sum(axis=1)
        return int(wrong[keep].sum()), int(keep.sum()), int(c.rounds[keep].sum())

    parts = run_blocks(cfg, fn, trials, seed, threads, stream_prefix)
    wrong = sum(p[0] for p in parts)
    used = sum(p[1] for p in parts)
    rounds = sum(p[2] for p in parts)
    if used == 0:
        return GoldRun(math.nan, math.nan, 0)
    return GoldRun(wrong / (used * cfg.n_agents), rounds / used, used)


def gold_sweep_rows(cfg, profile, mechanism: GoldSeededMechanism, g_values, trials, seed, threads=1):
    rows = []
    for g in g_values:
        if g < 1:
            raise ValueError("gold size must be >= 1")
        if g > cfg.n_items:
            raise ValueError(f"gold size {g} exceeds n_items={cfg.n_items}")
        mech = GoldSeededMechanism(g, mechanism.accuracy_cut, mechanism.agree_cut, mechanism.max_rounds)
        # Same seed for every g: gold sets are nested prefixes of one random item order.
        run = gold_misclassification(cfg, profile, mech, trials, seed, threads)
        rows.append(
            {
                "g": g,
                "misclassification_rate": run.misclassification_rate,
                "rounds_to_fixed_point": run.rounds_to_fixed_point,
                "trials": trials,
                "seed": seed,
            }
        )
    return rows


def first_contradiction(cfg: GameConfig, strategy: Strategy, n_gold: int, trials: int, seed: int) -> float:
    """Mean number of gold items inspected before an agent playing ``strategy`` first contradicts the truth.

    Agents that never contradict within ``n_gold`` items count as ``n_gold + 1``.
    Diagnostic only.
    """
    agent = min(cfg.roster.informed) if strategy is Strategy.TRUTHFUL else 0
    profile = StrategyProfile.uniform(cfg.roster, Strategy.PREJUDICED).with_agent(agent, strategy)

    items = sorted(cfg.assignment.incidence[agent])[:n_gold]

    def fn(prims: Primitives, streams):
        rep = assemble_reports(cfg, profile, prims).reports[:, agent, items]
        miss = rep != prims.truth[:, items]
        first = np.where(miss.any(axis=1), miss.argmax(axis=1) + 1, n_gold + 1)
        return float(first.sum())

    return sum(run_blocks(cfg, fn, trials, seed)) / trials


def entropy_sweep_rows(
    cfg: GameConfig,
    mechanism: Mechanism,
    p_u_list: Sequence[Sequence[float]],
    steps: int,
    restarts: int,
    trials: int,
    seed: int,
    threads: int = 1,
) -> list[dict]:
    rows = []
    for i, p_u in enumerate(p_u_list):
        d = Distribution(p_u)
        world = type(cfg.world).build(cfg.world.p_y, d, cfg.world.p_i_given_y)
        if not validate_world(world)["distinct P(Y)!=P(U)"].passed:
            raise ValueError(f"prejudice law {list(d.probs)} equals P(Y)")
        sized = cfg.with_world(world)
        shares = basin_shares(sized, mechanism, restarts, steps, trials, child_seed(seed, i), threads)
        rows.append(
            {
                "p_u": list(d.probs),
                "entropy_p_u": entropy(d),
                "entropy_informed": entropy(world.informed_report_law()),
                "basin_prejudice": shares["prejudice"],
                "basin_truthful": shares["truthful"],
                "basin_randomise": shares["randomise"],
                "basin_other": shares["other"],
                "non_converged": shares["non_converged"],
                "restarts": restarts,
                "steps": steps,
            }
        )
    return rows
