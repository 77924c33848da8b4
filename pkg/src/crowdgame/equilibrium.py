"""Payoffs, unilateral-deviation checks and the two-scenario indistinguishability demo.

An agent's payoff is the probability that the mechanism includes it in the
identified set. Candidate strategies for the same agent are always scored on the
same primitive draws, so their differences carry no between-run noise from the
world or from the other agents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from crowdgame.game import (
    AgentRoster,
    Assignment,
    GameConfig,
    PrejudiceMode,
    Primitives,
    Strategy,
    StrategyProfile,
    assemble_reports,
    legal_strategies,
    run_blocks,
)
from crowdgame.mechanisms import Mechanism, classify_block
from crowdgame.probcore import ConditionalTable, Distribution, WorldDistribution
from crowdgame.streams import child_seed, map_ordered, substream

MIN_TRIALS = 100


@dataclass(frozen=True)
class PayoffEstimate:
    value: float
    std_err: float
    trials: int

    @classmethod
    def from_count(cls, hits: int, trials: int) -> "PayoffEstimate":
        v = hits / trials
        return cls(v, math.sqrt(v * (1.0 - v) / trials), trials)

    @property
    def interval(self) -> tuple[float, float]:
        return self.value - 2 * self.std_err, self.value + 2 * self.std_err


def combined_std_err(*estimates: PayoffEstimate) -> float:
    return math.sqrt(sum(e.std_err**2 for e in estimates))


def payoff_table(
    cfg: GameConfig,
    profiles: Sequence[StrategyProfile],
    mechanism: Mechanism,
    focal_agent: int,
    trials: int,
    seed: int,
    threads: int = 1,
    stream_prefix: Sequence[int] = (),
) -> list[PayoffEstimate]:
    """Inclusion probability of ``focal_agent`` under each profile, on shared draws."""
    if trials < MIN_TRIALS:
        raise ValueError(f"payoff estimates need at least {MIN_TRIALS} trials, got {trials}")
    for p in profiles:
        p.validate(cfg.roster)

    def fn(prims, streams):
        cls = classify_block(mechanism, cfg, profiles, prims, streams)
        return [int(c.identified[:, focal_agent].sum()) for c in cls]

    parts = run_blocks(cfg, fn, trials, seed, threads, stream_prefix)
    hits = np.sum(parts, axis=0)
    return [PayoffEstimate.from_count(int(h), trials) for h in hits]


def estimate_payoff(
    cfg: GameConfig,
    profile: StrategyProfile,
    mechanism: Mechanism,
    focal_agent: int,
    trials: int = 10_000,
    seed: int = 0,
    threads: int = 1,
) -> PayoffEstimate:
    return payoff_table(cfg, [profile], mechanism, focal_agent, trials, seed, threads)[0]


def candidate_payoffs(cfg, profile, mechanism, agent, trials, seed, threads=1, stream_prefix=()):
    cands = legal_strategies(cfg.roster, agent)
    ests = payoff_table(
        cfg, [profile.with_agent(agent, s) for s in cands], mechanism, agent, trials, seed, threads, stream_prefix
    )
    return dict(zip(cands, ests))


def best_response(
    cfg: GameConfig,
    profile: StrategyProfile,
    mechanism: Mechanism,
    agent: int,
    trials: int = 10_000,
    seed: int = 0,
    threads: int = 1,
    margin: float = 0.0,
) -> tuple[Strategy, dict[Strategy, PayoffEstimate]]:
    """Highest-payoff legal strategy for ``agent``; keeps the current one unless beaten by more than ``margin``."""
    table = candidate_payoffs(cfg, profile, mechanism, agent, trials, seed, threads)
    current = profile[agent]
    best = max(table, key=lambda s: table[s].value)
    if table[best].value <= table[current].value + margin:
        best = current
    return best, table


@dataclass(frozen=True)
class DeviationReport:
    agent_type: str
    agent: int
    strategy: Strategy
    baseline: PayoffEstimate
    deviated: PayoffEstimate
    gain: float
    std_err: float

    @classmethod
    def of(cls, agent_type, agent, strategy, baseline, deviated) -> "DeviationReport":
        return cls(
            agent_type,
            agent,
            strategy,
            baseline,
            deviated,
            deviated.value - baseline.value,
            combined_std_err(baseline, deviated),
        )


@dataclass(frozen=True)
class EquilibriumVerdict:
    profile: StrategyProfile
    epsilon: float
    deviations: list[DeviationReport]
    is_epsilon_equilibrium: bool

    @property
    def max_gain(self) -> float:
        return max((d.gain for d in self.deviations), default=-math.inf)

    def is_indifferent(self, width: float = 2.0) -> bool:
        """True if, for each tested agent, every candidate's +-width*std_err band shares a point."""
        by_agent: dict[int, list[PayoffEstimate]] = {}
        for d in self.deviations:
            by_agent.setdefault(d.agent, [d.baseline]).append(d.deviated)
        for ests in by_agent.values():
            lo = max(e.value - width * e.std_err for e in ests)
            hi = min(e.value + width * e.std_err for e in ests)
            if lo > hi + 1e-15:
                return False
        return True


def representatives(roster: AgentRoster, profile: StrategyProfile) -> list[tuple[str, int]]:
    """One agent per (type, current strategy) group, lowest index first."""
    seen = {}
    for a in roster.agents:
        kind = "informed" if a in roster.informed else "uninformed"
        seen.setdefault((kind, profile[a]), a)
    return sorted(((k[0], a) for k, a in seen.items()), key=lambda x: x[1])


def verify_equilibrium(
    cfg: GameConfig,
    profile: StrategyProfile,
    mechanism: Mechanism,
    epsilon: float = 0.02,
    trials: int = 10_000,
    seed: int = 0,
    threads: int = 1,
) -> EquilibriumVerdict:
    """Test every unilateral pure deviation of one representative agent per type."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    profile.validate(cfg.roster)
    devs = []
    for i, (kind, agent) in enumerate(representatives(cfg.roster, profile)):
        table = candidate_payoffs(cfg, profile, mechanism, agent, trials, seed, threads, (i,))
        base = table[profile[agent]]
        for s, est in table.items():
            if s is not profile[agent]:
                devs.append(DeviationReport.of(kind, agent, s, base, est))
    ok = all(d.gain <= epsilon + 2 * d.std_err for d in devs)
    return EquilibriumVerdict(profile, epsilon, devs, ok)


@dataclass(frozen=True)
class DominanceRow:
    informed_strategy: Strategy
    uninformed_strategy: Strategy | None
    truthful: PayoffEstimate
    deviations: list[DeviationReport]

    @property
    def weakly_best(self) -> bool:
        """Truthful is never beaten by more than two combined standard errors."""
        return all(d.gain <= 2 * d.std_err for d in self.deviations)

    @property
    def margin(self) -> float:
        return -max(d.gain for d in self.deviations)


@dataclass(frozen=True)
class DominanceTable:
    focal_agent: int
    rows: list[DominanceRow]

    @property
    def all_weakly_best(self) -> bool:
        return all(r.weakly_best for r in self.rows)

    def flagged(self) -> list[DominanceRow]:
        return [r for r in self.rows if not r.weakly_best]


def opponent_grid(roster: AgentRoster) -> list[tuple[Strategy, Strategy | None]]:
    informed = [Strategy.TRUTHFUL, Strategy.PREJUDICED, Strategy.RANDOMISE]
    uninformed = [Strategy.PREJUDICED, Strategy.RANDOMISE] if roster.uninformed else [None]
    return [(si, su) for si in informed for su in uninformed]


def check_dominance_truthful(
    cfg: GameConfig,
    mechanism: Mechanism,
    grid: Iterable[tuple[Strategy, Strategy | None]] | None = None,
    trials: int = 10_000,
    seed: int = 0,
    focal_agent: int | None = None,
    threads: int = 1,
) -> DominanceTable:
    """Compare Truthful against the other strategies of an informed agent across opponent profiles."""
    if mechanism.anchor != "gold":
        raise ValueError("dominance of truthfulness is only claimed for gold-using mechanisms")
    roster = cfg.roster
    if not roster.informed:
        raise ValueError("roster has no informed agent")
    focal = min(roster.informed) if focal_agent is None else focal_agent
    if focal not in roster.informed:
        raise ValueError(f"focal agent {focal} is not informed")
    rows = []
    for i, (si, su) in enumerate(grid if grid is not None else opponent_grid(roster)):
        opp = StrategyProfile.symmetric(roster, si, su if su is not None else Strategy.RANDOMISE)
        table = candidate_payoffs(cfg, opp, mechanism, focal, trials, seed, threads, (i,))
        t = table[Strategy.TRUTHFUL]
        devs = [DeviationReport.of("informed", focal, s, t, e) for s, e in table.items() if s is not Strategy.TRUTHFUL]
        rows.append(DominanceRow(si, su, t, devs))
    return DominanceTable(focal, rows)


# two-scenario indistinguishability


@dataclass(frozen=True)
class ImpossibilityReport:
    success_rate_scenario1: float
    success_rate_scenario2: float
    combined: float
    distribution_test_pvalue: float
    pooled_std_err: float = 0.0
    paired_violations: int = 0
    trials: int = 0

    @property
    def within_bound(self) -> bool:
        return self.combined <= 1.0 + 3.0 * self.pooled_std_err


def shifted_distribution(base: Distribution, mass: float = 0.2) -> Distribution:
    """Move ``mass`` from the most to the second most probable label (capped by availability)."""
    p = base.as_array().copy()
    order = np.argsort(-p, kind="stable")
    top, second = order[0], order[1]
    delta = min(mass, p[top])
    p[top] -= delta
    p[second] += delta
    return Distribution(p)


def impossibility_worlds(base: Distribution) -> tuple[WorldDistribution, WorldDistribution]:
    """Scenario 1: truthful with P(Y)=base. Scenario 2: prejudiced with P(U)=base."""
    other = shifted_distribution(base)
    ident = ConditionalTable.identity(base.k)
    return WorldDistribution.build(base, other, ident), WorldDistribution.build(other, base, ident)


def _pattern_rows(reports: np.ndarray) -> np.ndarray:
    """One row per (trial, item): the labels all agents gave that item. (T, A, N) -> (T*N, A)."""
    return reports.transpose(0, 2, 1).reshape(-1, reports.shape[1])


def pattern_chi2_pvalue(rows1: np.ndarray, rows2: np.ndarray) -> float:
    """Chi-square homogeneity test of two samples of per-item report patterns."""
    cats, inv = np.unique(np.concatenate([rows1, rows2]), axis=0, return_inverse=True)
    inv = inv.ravel()
    if len(cats) < 2:
        return 1.0
    table = np.zeros((2, len(cats)), dtype=np.int64)
    np.add.at(table[0], inv[: len(rows1)], 1)
    np.add.at(table[1], inv[len(rows1) :], 1)
    return float(stats.chi2_contingency(table, correction=False).pvalue)


def impossibility_demo(
    k: int,
    base_dist: Distribution,
    n_agents: int,
    n_items: int,
    mechanism: Mechanism,
    trials: int = 1000,
    seed: int = 0,
    threads: int = 1,
) -> ImpossibilityReport:
    """Run the all-truthful and the all-prejudiced scenarios with identical report laws.

    Success in scenario 1 means every agent is identified; in scenario 2 that none
    is. Matched pairs (scenario 2 prejudice set equal to scenario 1 truth) give
    bit-identical reports, so a report-only mechanism can succeed on at most one
    member of each pair; ``paired_violations`` counts pairs where both succeeded.
    """
    if mechanism.uses_anchor:
        raise ValueError(f"mechanism {mechanism.name!r} uses anchored labels; the demo is for report-only mechanisms")
    if base_dist.k != k:
        raise ValueError(f"base distribution has {base_dist.k} labels, expected {k}")
    w1, w2 = impossibility_worlds(base_dist)
    roster = AgentRoster(n_agents, range(n_agents))
    asg = Assignment.complete(n_agents, n_items)
    cfg1 = GameConfig(w1, roster, asg, PrejudiceMode.SHARED)
    cfg2 = GameConfig(w2, roster, asg, PrejudiceMode.SHARED)
    truthful = StrategyProfile.uniform(roster, Strategy.TRUTHFUL)
    prejudiced = StrategyProfile.uniform(roster, Strategy.PREJUDICED)

    def run1(prims: Primitives, streams):
        c1 = classify_block(mechanism, cfg1, [truthful], prims, streams)[0]
        ok1 = c1.identified.all(axis=1)
        twin = replace(prims, prejudice_shared=prims.truth)
        rep2 = assemble_reports(cfg2, prejudiced, twin)
        ok2_twin = ~mechanism.classify(rep2.reports, rep2.mask).identified.any(axis=1)
        rep1 = assemble_reports(cfg1, truthful, prims)
        return int(ok1.sum()), int((ok1 & ok2_twin).sum()), _pattern_rows(rep1.reports)

    def run2(prims: Primitives, streams):
        c2 = classify_block(mechanism, cfg2, [prejudiced], prims, streams)[0]
        rep2 = assemble_reports(cfg2, prejudiced, prims)
        return int((~c2.identified.any(axis=1)).sum()), _pattern_rows(rep2.reports)

    p1 = run_blocks(cfg1, run1, trials, seed, threads, (1,))
    p2 = run_blocks(cfg2, run2, trials, seed, threads, (2,))
    s1 = PayoffEstimate.from_count(sum(x[0] for x in p1), trials)
    s2 = PayoffEstimate.from_count(sum(x[0] for x in p2), trials)
    pval = pattern_chi2_pvalue(np.concatenate([x[2] for x in p1]), np.concatenate([x[1] for x in p2]))
    return ImpossibilityReport(
        s1.value,
        s2.value,
        s1.value + s2.value,
        pval,
        combined_std_err(s1, s2),
        sum(x[1] for x in p1),
        trials,
    )


# best-response dynamics


@dataclass(frozen=True)
class DynamicsResult:
    initial: StrategyProfile
    final: StrategyProfile
    converged: bool
    steps: int
    switches: int


def best_response_dynamics(
    cfg: GameConfig,
    mechanism: Mechanism,
    initial: StrategyProfile,
    max_steps: int,
    trials: int = 1000,
    seed: int = 0,
    margin_se: float = 2.0,
) -> DynamicsResult:
    """Sequential best responses, one sweep over all agents per step.

    An agent switches only if its best candidate beats its current strategy by
    more than ``margin_se`` combined standard errors, so estimation noise alone
    does not keep the process moving. Converged means a full sweep with no switch.
    """
    profile = initial
    switches = 0
    for step in range(max_steps):
        changed = False
        for agent in cfg.roster.agents:
            table = candidate_payoffs(cfg, profile, mechanism, agent, trials, child_seed(seed, step, agent))
            current = table[profile[agent]]
            best = max(table, key=lambda s: table[s].value)
            if table[best].value > current.value + margin_se * combined_std_err(current, table[best]):
                profile = profile.with_agent(agent, best)
                changed = True
                switches += 1
        if not changed:
            return DynamicsResult(initial, profile, True, step + 1, switches)
    return DynamicsResult(initial, profile, False, max_steps, switches)


def classify_profile(roster: AgentRoster, profile: StrategyProfile) -> str:
    """Name the equilibrium family a profile belongs to."""
    if all(s is Strategy.PREJUDICED for s in profile.per_agent):
        return "prejudice"
    if roster.informed and all(profile[a] is Strategy.TRUTHFUL for a in roster.informed):
        return "truthful"
    if all(s is Strategy.RANDOMISE for s in profile.per_agent):
        return "randomise"
    return "other"


def random_profile(roster: AgentRoster, rng: np.random.Generator) -> StrategyProfile:
    out = []
    for a in roster.agents:
        options = legal_strategies(roster, a)
        out.append(options[int(rng.integers(len(options)))])
    return StrategyProfile(out)


def basin_shares(
    cfg: GameConfig,
    mechanism: Mechanism,
    restarts: int,
    max_steps: int,
    trials: int,
    seed: int,
    threads: int = 1,
) -> dict[str, float]:
    """Fraction of random-start dynamics ending in each equilibrium family."""

    def one(r: int) -> DynamicsResult:
        init = random_profile(cfg.roster, substream(seed, "dynamics", r))
        return best_response_dynamics(cfg, mechanism, init, max_steps, trials, child_seed(seed, 8, r))

    results = map_ordered(one, list(range(restarts)), threads)
    kinds = [classify_profile(cfg.roster, r.final) for r in results]
    shares = {k: kinds.count(k) / restarts for k in ("prejudice", "truthful", "randomise", "other")}
    shares["non_converged"] = sum(not r.converged for r in results) / restarts
    return shares
