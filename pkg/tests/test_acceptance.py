"""Acceptance criteria 1-8. Each test prints one PASS/FAIL line (also shown in the run summary)."""

import math
import time
from dataclasses import replace

import pytest
from scipy import stats

from crowdgame.equilibrium import check_dominance_truthful, impossibility_demo, verify_equilibrium
from crowdgame.game import Assignment, Strategy, StrategyProfile, assemble_reports, run_blocks
from crowdgame.harness import experiments as ex
from crowdgame.harness.cli import main
from crowdgame.harness.config import load_scenario
from crowdgame.mechanisms import (
    AgreementMechanism,
    GoldSeededMechanism,
    PairwiseAgreementMechanism,
    PrejudiceAnchoredMechanism,
    evaluate_mechanism,
)
from crowdgame.probcore import ConditionalTable, Distribution, WorldDistribution, mutual_information, validate_world

pytestmark = pytest.mark.acceptance

T, P, R = Strategy.TRUTHFUL, Strategy.PREJUDICED, Strategy.RANDOMISE


def scenario_game(name):
    cfg = load_scenario(name)
    game = cfg.game_config()
    return cfg, game, cfg.strategy_profile(game.roster)


def test_criterion_1_constraint_validation(record_criterion):
    t0 = time.perf_counter()
    ref = WorldDistribution.build([0.5, 0.5], [0.9, 0.1])
    same = WorldDistribution.build([0.5, 0.5], [0.5, 0.5])
    flat = WorldDistribution.build([0.5, 0.5], [0.9, 0.1], ConditionalTable([[0.5, 0.5], [0.5, 0.5]]))
    verdicts = [[c.passed for c in validate_world(w).checks] for w in (ref, same, flat)]
    expected = [[True, True, True], [True, True, False], [True, False, True]]
    # closed forms: 1 bit for a noiseless binary channel; 1 - H(1/4) for flip 1/4
    h = -(0.25 * math.log2(0.25) + 0.75 * math.log2(0.75))
    mi_err = max(
        abs(mutual_information([[0.25, 0.25], [0.25, 0.25]]) - 0.0),
        abs(mutual_information([[0.5, 0.0], [0.0, 0.5]]) - 1.0),
        abs(mutual_information([[0.375, 0.125], [0.125, 0.375]]) - (1.0 - h)),
        abs(mutual_information(ref.joint_y_i()) - 1.0),
        abs(mutual_information(flat.joint_y_i())),
    )
    elapsed = time.perf_counter() - t0
    ok = verdicts == expected and mi_err <= 1e-9 and elapsed < 1.0
    record_criterion(1, "constraint validation", ok, f"verdicts={verdicts}, max MI error={mi_err:.1e}, {elapsed:.3f}s")
    assert verdicts == expected
    assert mi_err <= 1e-9
    assert elapsed < 1.0


def test_criterion_2_mechanism_soundness(record_criterion):
    t0 = time.perf_counter()
    cfg, game, prof = scenario_game("truthful_majority")
    assert game.n_agents == 13 and len(game.roster.informed) == 9 and game.n_items == 50
    assert game.assignment.is_complete and game.world.k == 2
    m = evaluate_mechanism(cfg.build_mechanism(), game, prof, 1000, cfg.seed, [5, 10, 20, 40])
    odds = [pt.odds_ratio_ii for pt in m.odds_ratio_curve]
    odds_uu = [pt.odds_ratio_uu for pt in m.odds_ratio_curve]
    increasing = all(a < b for a, b in zip(odds, odds[1:]))
    elapsed = time.perf_counter() - t0
    ok = m.p_ii_hat >= 0.99 and m.p_uu_hat >= 0.99 and increasing and elapsed < 30
    record_criterion(
        2,
        "mechanism soundness",
        ok,
        f"p_ii={m.p_ii_hat:.4f} p_uu={m.p_uu_hat:.4f} odds_ii={[f'{o:.3g}' for o in odds]} "
        f"odds_uu={[f'{o:.3g}' for o in odds_uu]} {elapsed:.1f}s",
    )
    assert m.p_ii_hat >= 0.99 and m.p_uu_hat >= 0.99
    assert increasing
    assert elapsed < 30


def test_criterion_3_equilibria(record_criterion):
    t0 = time.perf_counter()
    failures = []
    worst = {}
    for name in ("all_prejudice", "truthful_majority", "all_randomise"):
        cfg, game, prof = scenario_game(name)
        assert cfg.mechanism.name == "agreement"
        for seed in range(10):
            v = verify_equilibrium(game, prof, cfg.build_mechanism(), epsilon=0.02, trials=10_000, seed=seed)
            worst[name] = max(worst.get(name, -1.0), v.max_gain)
            if not v.is_epsilon_equilibrium:
                failures.append((name, seed, "not epsilon-equilibrium"))
            if name == "all_randomise" and not v.is_indifferent():
                failures.append((name, seed, "not indifferent"))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 300
    detail = ", ".join(f"{k} max gain {g:+.4f}" for k, g in worst.items())
    record_criterion(3, "three equilibria, 10 seeds", ok, f"{detail}; failures={failures}; {elapsed:.0f}s")
    assert not failures
    assert elapsed < 300


def test_criterion_4_impossibility(record_criterion):
    t0 = time.perf_counter()
    base = Distribution([0.5, 0.5])
    reports = {}
    for mech in (AgreementMechanism(0.8), PairwiseAgreementMechanism(0.8)):
        reports[mech.name] = impossibility_demo(2, base, 6, 30, mech, trials=1000, seed=20114)
    bounds_ok = all(r.within_bound and r.paired_violations == 0 for r in reports.values())
    pvals = [
        impossibility_demo(2, base, 6, 30, AgreementMechanism(0.8), trials=1000, seed=1000 + s).distribution_test_pvalue
        for s in range(100)
    ]
    small = sum(p < 0.01 for p in pvals)
    elapsed = time.perf_counter() - t0
    ks = stats.kstest(pvals, "uniform").pvalue
    ok = bounds_ok and small <= 3 and elapsed < 120
    detail = "; ".join(
        f"{k}: s1={r.success_rate_scenario1:.3f} s2={r.success_rate_scenario2:.3f} combined={r.combined:.3f} "
        f"bound={1 + 3 * r.pooled_std_err:.4f}"
        for k, r in reports.items()
    )
    record_criterion(4, "impossibility", ok, f"{detail}; p<0.01 in {small}/100; KS p={ks:.3f} (diagnostic); {elapsed:.0f}s")
    assert bounds_ok
    assert small <= 3
    assert elapsed < 120


def gold_game():
    # the gold_repair scenario on a complete (hence connected) assignment
    cfg, game, prof = scenario_game("gold_repair")
    complete = replace(game, assignment=Assignment.complete(game.n_agents, game.n_items))
    return cfg, game, complete, prof


def test_criterion_5_gold_repair(record_criterion):
    t0 = time.perf_counter()
    cfg, sparse, game, prof = gold_game()
    base = cfg.build_mechanism()
    assert game.assignment.is_connected()
    rates = {}
    for g in (5, 10):
        mech = GoldSeededMechanism(g, base.accuracy_cut, base.agree_cut)
        run = ex.gold_misclassification(game, prof, mech, 1000, cfg.seed, require_gold_contradiction=True)
        rates[g] = run.misclassification_rate
    diag = {
        g: ex.gold_misclassification(
            sparse, prof, GoldSeededMechanism(g, base.accuracy_cut, base.agree_cut), 1000, cfg.seed,
            require_gold_contradiction=True,
        ).misclassification_rate
        for g in (5, 10, 20)
    }
    gold10 = GoldSeededMechanism(10, base.accuracy_cut, base.agree_cut)
    v = verify_equilibrium(game, StrategyProfile.uniform(game.roster, P), gold10, trials=10_000, seed=cfg.seed)
    dev = next(d for d in v.deviations if d.agent_type == "informed" and d.strategy is T)
    table = check_dominance_truthful(game, gold10, trials=10_000, seed=cfg.seed)
    elapsed = time.perf_counter() - t0
    rates_ok = all(r < 0.05 for r in rates.values())
    verify_ok = (not v.is_epsilon_equilibrium) and dev.gain > 3 * dev.std_err
    ok = rates_ok and verify_ok and table.all_weakly_best and elapsed < 300
    margins = [f"{r.informed_strategy.value}/{r.uninformed_strategy.value}:{r.margin:+.3f}" for r in table.rows]
    record_criterion(
        5,
        "gold repair",
        ok,
        f"misclassification g5={rates[5]:.4f} g10={rates[10]:.4f}; sparse 3-of-6 diagnostic "
        f"{ {g: round(x, 4) for g, x in diag.items()} }; T gain {dev.gain:.3f} (se {dev.std_err:.4f}); "
        f"dominance margins {margins}; {elapsed:.0f}s",
    )
    assert rates_ok
    assert verify_ok
    assert table.all_weakly_best, table.flagged()
    assert elapsed < 300


def test_criterion_6_prejudice_anchored(record_criterion):
    t0 = time.perf_counter()
    cfg, _, game, _ = gold_game()
    rejected = {}
    by_anchor = {}
    for strat in (P, R):
        prof = StrategyProfile.uniform(game.roster, strat)
        for n_anchor in (1, 2, 5, 10):
            mech = PrejudiceAnchoredMechanism(n_anchor, 0.9, 0.8)

            def fn(prims, streams, mech=mech, prof=prof):
                anchors = mech.draw_anchors(prims, streams["mechanism"])
                b = assemble_reports(game, prof, prims)
                return int(mech.classify(b.reports, b.mask, anchors).rejected.sum())

            rate = sum(run_blocks(game, fn, 1000, cfg.seed)) / (1000 * game.n_agents)
            by_anchor[(strat.value, n_anchor)] = rate
        rejected[strat] = by_anchor[(strat.value, 10)]
    speed = {s.value: ex.first_contradiction(game, s, 10, 1000, cfg.seed) for s in (P, R)}
    elapsed = time.perf_counter() - t0
    ok = rejected[P] >= 0.95 and rejected[R] <= 0.05
    record_criterion(
        6,
        "prejudice-anchored repair",
        ok,
        f"rejected prejudiced={rejected[P]:.4f} randomising={rejected[R]:.4f}; "
        f"diagnostic rejection by anchors {by_anchor}; mean gold items to first contradiction {speed}; {elapsed:.1f}s",
    )
    assert rejected[P] >= 0.95
    assert rejected[R] <= 0.05


CLI_RUNS = {
    "validate": ["validate", "--scenario", "truthful_majority"],
    "simulate": ["simulate", "--scenario", "truthful_majority"],
    "equilibrium": ["equilibrium", "--scenario", "all_randomise"],
    "impossibility": ["impossibility", "--scenario", "impossibility_pair"],
    "gold-sweep": ["gold-sweep", "--scenario", "gold_repair"],
    "entropy-sweep": [
        "entropy-sweep", "--scenario", "entropy_sweep", "--steps", "3", "--restarts", "6", "--br-trials", "300",
    ],
}


def test_criterion_7_determinism(record_criterion, tmp_path, capsys):
    t0 = time.perf_counter()
    mismatched = []
    for cmd, argv in CLI_RUNS.items():
        outputs = []
        for i, threads in enumerate(("1", "1", "4")):
            out = tmp_path / f"{cmd}-{i}.txt"
            if cmd == "validate":
                main(argv + ["--threads", threads])
                out.write_text(capsys.readouterr().out)
            else:
                main(argv + ["--threads", threads, "--out", str(out)])
                capsys.readouterr()
                ex.parse_csv(out.read_text())
            outputs.append(out.read_bytes())
        if len(set(outputs)) != 1:
            mismatched.append(cmd)
    elapsed = time.perf_counter() - t0
    ok = not mismatched
    record_criterion(7, "determinism", ok, f"{len(CLI_RUNS)} subcommands x (1,1,4 threads); mismatched={mismatched}; {elapsed:.0f}s")
    assert not mismatched


def test_criterion_8_entropy_sweep(record_criterion, tmp_path, capsys):
    t0 = time.perf_counter()
    out = tmp_path / "entropy.csv"
    code = main(["entropy-sweep", "--scenario", "entropy_sweep", "--out", str(out)])
    capsys.readouterr()
    elapsed = time.perf_counter() - t0
    cols, rows = ex.parse_csv(out.read_text())
    cfg = load_scenario("entropy_sweep")
    well_formed = (
        code == 0
        and cols == ex.ENTROPY_SWEEP_COLUMNS
        and len(rows) == 5
        and all(r["restarts"] == "50" for r in rows)
        and all(
            math.isclose(sum(float(r[c]) for c in ("basin_prejudice", "basin_truthful", "basin_randomise", "basin_other")), 1.0)
            and 0.0 <= float(r["non_converged"]) <= 1.0
            for r in rows
        )
    )
    assert len(cfg.entropy_sweep.p_u) == 5
    ok = well_formed and elapsed < 600
    summary = [(r["entropy_p_u"][:5], r["basin_prejudice"], r["basin_truthful"]) for r in rows]
    record_criterion(8, "entropy sweep", ok, f"(H(p_u), prejudice, truthful)={summary}; {elapsed:.0f}s")
    assert well_formed
    assert elapsed < 600
