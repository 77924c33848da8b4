import math
from dataclasses import dataclass, field, replace

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from crowdgame.game import (
    MISSING,
    AgentRoster,
    Assignment,
    GameConfig,
    ReportMatrix,
    Strategy,
    StrategyProfile,
    generate_batches,
    truthful_informed_set,
)
from crowdgame.mechanisms import (
    AgreementMechanism,
    Anchors,
    Classification,
    GoldSeededMechanism,
    GoldSet,
    Mechanism,
    PrejudiceAnchoredMechanism,
    agreement_mechanism,
    evaluate_mechanism,
    gold_seeded_mechanism,
    make_mechanism,
    pairwise_agreement_mechanism,
    prejudice_anchored_mechanism,
)
from crowdgame.probcore import WorldDistribution

T, P, R = Strategy.TRUTHFUL, Strategy.PREJUDICED, Strategy.RANDOMISE


def binom_tail(n, k, p=0.5):
    return sum(math.comb(n, i) * p**i * (1 - p) ** (n - i) for i in range(k, n + 1))


def matrix(reports, mask=None):
    rep = np.asarray(reports, dtype=np.int8)
    mask = rep != MISSING if mask is None else np.asarray(mask)
    n = rep.shape[1]
    return ReportMatrix(rep, np.zeros(n, np.int8), np.zeros(n, np.int8), np.full_like(rep, MISSING), mask), Assignment.from_mask(mask)


def config(n_agents, informed, n_items, p_u=(0.9, 0.1)):
    w = WorldDistribution.build([0.5, 0.5], list(p_u))
    return GameConfig(w, AgentRoster(n_agents, informed), Assignment.complete(n_agents, n_items))


@dataclass
class AllAgents(Mechanism):
    name: str = field(default="all", init=False)

    def classify(self, reports, mask, anchors=None):
        t, a = reports.shape[:2]
        ident = np.ones((t, a), dtype=bool)
        return Classification(ident, ~ident, np.zeros(t, np.int32))


@dataclass
class Oracle(Mechanism):
    """Test-only: returns the true A_IT by reading the profile it was built with."""

    target: np.ndarray = None
    name: str = field(default="oracle", init=False)

    def classify(self, reports, mask, anchors=None):
        t = reports.shape[0]
        ident = np.repeat(self.target[None, :], t, axis=0)
        return Classification(ident, ~ident, np.zeros(t, np.int32))


class TestAgreement:
    def test_unanimity(self):
        m, asg = matrix(np.ones((4, 6)))
        assert agreement_mechanism(m, asg).identified == {0, 1, 2, 3}

    def test_truthful_four_vs_randomiser(self):
        # The 4 truthful agents fix the consensus at the truth, so the randomiser
        # scores Binomial(100, 1/2)/100 and needs >= 80 hits.
        tail = binom_tail(100, 80)
        assert tail < 0.01
        cfg = config(5, [0, 1, 2, 3], 100, p_u=(0.9, 0.1))
        prof = StrategyProfile.symmetric(cfg.roster, T, R)
        batch = generate_batches(cfg, prof, 300, seed=1)[0]
        mech = AgreementMechanism(0.8)
        ident = mech.classify(batch.reports, batch.mask).identified
        assert ident[:, :4].all()
        assert ident[:, 4].mean() <= 0.01

    def test_zero_threshold_identifies_everyone(self):
        rng = np.random.default_rng(5)
        m, asg = matrix(rng.integers(0, 3, size=(5, 9)))
        assert agreement_mechanism(m, asg, threshold=0.0).identified == set(range(5))

    def test_tie_goes_to_lowest_label(self):
        m, asg = matrix([[0], [1]])
        assert agreement_mechanism(m, asg, 1.0).identified == {0}

    def test_empty_and_mismatched_input(self):
        m, asg = matrix([[0, 1]])
        with pytest.raises(ValueError):
            agreement_mechanism(m, Assignment.complete(2, 2))
        empty = ReportMatrix(np.zeros((0, 0), np.int8), np.zeros(0), np.zeros(0), np.zeros((0, 0)), np.zeros((0, 0), bool))
        with pytest.raises(ValueError):
            agreement_mechanism(empty, asg)

    def test_ignores_hidden_fields(self):
        rng = np.random.default_rng(6)
        m, asg = matrix(rng.integers(0, 2, size=(5, 12)))
        scrambled = replace(m, truth=1 - m.truth, prejudice_draws=m.prejudice_draws + 1, signals=np.ones_like(m.signals))
        assert agreement_mechanism(m, asg) == agreement_mechanism(scrambled, asg)
        assert pairwise_agreement_mechanism(m, asg) == pairwise_agreement_mechanism(scrambled, asg)


def tie_free(reports, k):
    counts = np.stack([(reports == v).sum(axis=0) for v in range(k)])
    top = np.sort(counts, axis=0)[-2:]
    return bool((top[1] > top[0]).all())


report_sets = st.tuples(st.integers(2, 4), st.integers(2, 7), st.integers(1, 10), st.integers(0, 2**32)).map(
    lambda s: (s[0], np.random.default_rng(s[3]).integers(0, s[0], size=(s[1], s[2])))
)


@settings(max_examples=100, deadline=None)
@given(report_sets, st.data())
def test_agreement_permutation_equivariant(rs, data):
    k, rep = rs
    assume(tie_free(rep, k))
    perm = np.array(data.draw(st.permutations(range(k))))
    m1, asg = matrix(rep)
    m2, _ = matrix(perm[rep])
    for thr in (0.5, 0.8, 1.0):
        assert agreement_mechanism(m1, asg, thr).identified == agreement_mechanism(m2, asg, thr).identified


@settings(max_examples=100, deadline=None)
@given(report_sets, st.floats(0, 1), st.floats(0, 1))
def test_agreement_antitone_in_threshold(rs, t1, t2):
    _, rep = rs
    lo, hi = sorted((t1, t2))
    m, asg = matrix(rep)
    assert agreement_mechanism(m, asg, hi).identified <= agreement_mechanism(m, asg, lo).identified


@settings(max_examples=50, deadline=None)
@given(report_sets)
def test_mechanisms_are_pure(rs):
    _, rep = rs
    m1, asg = matrix(rep)
    m2, _ = matrix(rep.copy())
    gold = GoldSet({0: 0})
    assert agreement_mechanism(m1, asg) == agreement_mechanism(m2, asg)
    assert gold_seeded_mechanism(m1, asg, gold) == gold_seeded_mechanism(m2, asg, gold)
    assert prejudice_anchored_mechanism(m1, asg, {0: 1}) == prejudice_anchored_mechanism(m2, asg, {0: 1})


class TestGoldSeeded:
    def test_perfect_gold_accuracy_trusted_round0(self):
        m, asg = matrix([[0, 1, 1], [0, 1, 0]])
        out = gold_seeded_mechanism(m, asg, GoldSet({0: 0, 1: 1}), accuracy_cut=1.0)
        assert out.identified == {0, 1}
        assert out.rounds == 0

    def test_prejudiced_population_contradicting_gold_rejected(self):
        # shared prejudice u = (1, 1, 0) against truth (0, 0, 0): gold items 0 and 1 are contradicted
        m, asg = matrix([[1, 1, 0]] * 4)
        out = gold_seeded_mechanism(m, asg, GoldSet({0: 0, 1: 0}))
        assert out.identified == frozenset()
        assert out.rejected == {0, 1, 2, 3}

    def test_propagates_to_agent_without_gold(self):
        mask = np.array([[1, 1, 0], [0, 1, 1]], dtype=bool)
        rep = np.where(mask, [[0, 1, 0], [0, 1, 0]], MISSING)
        m, asg = matrix(rep, mask)
        out = gold_seeded_mechanism(m, asg, GoldSet({0: 0}))
        assert out.identified == {0, 1}
        assert out.rounds == 1

    def test_unreachable_agent_excluded(self):
        mask = np.array([[1, 0], [0, 1]], dtype=bool)
        m, asg = matrix(np.where(mask, 0, MISSING), mask)
        out = gold_seeded_mechanism(m, asg, GoldSet({0: 0}))
        assert out.identified == {0}
        assert 1 not in out.rejected

    def test_empty_gold_rejected(self):
        m, asg = matrix([[0, 1]])
        with pytest.raises(ValueError):
            gold_seeded_mechanism(m, asg, GoldSet({}))

    def test_gold_sample_reads_truth(self):
        truth = np.array([1, 0, 1, 1, 0])
        g = GoldSet.sample(truth, 3, np.random.default_rng(0))
        assert len(g) == 3
        assert all(truth[j] == y for j, y in g.items.items())


chain_cases = st.tuples(st.integers(3, 8), st.integers(0, 2**32))


@settings(max_examples=60, deadline=None)
@given(chain_cases)
def test_gold_classification_monotone_and_bounded(case):
    n_agents, seed = case
    rng = np.random.default_rng(seed)
    # a chain: agent a labels items a and a+1, so trust has to travel hop by hop
    n_items = n_agents + 1
    mask = np.zeros((n_agents, n_items), dtype=bool)
    for a in range(n_agents):
        mask[a, [a, a + 1]] = True
    rep = np.where(mask, rng.integers(0, 2, size=mask.shape), MISSING).astype(np.int8)[None]
    anchors = np.zeros((1, n_items), bool)
    anchors[0, 0] = True
    a = Anchors(anchors, rep[:, 0, :].clip(0))
    prev_trusted = prev_rejected = np.zeros(n_agents, bool)
    full = GoldSeededMechanism(1, 0.8, 0.5).classify(rep, mask, a)
    assert full.rounds[0] <= n_agents
    for r in range(n_agents + 1):
        c = GoldSeededMechanism(1, 0.8, 0.5, max_rounds=r).classify(rep, mask, a)
        assert (c.identified[0] >= prev_trusted).all() and (c.rejected[0] >= prev_rejected).all()
        assert not (c.identified[0] & c.rejected[0]).any()
        prev_trusted, prev_rejected = c.identified[0], c.rejected[0]
    assert np.array_equal(prev_trusted, full.identified[0])


class TestPrejudiceAnchored:
    def test_matching_prejudice_rejected(self):
        m, asg = matrix([[1, 0, 1], [0, 0, 0]])
        out = prejudice_anchored_mechanism(m, asg, {0: 1, 1: 0, 2: 1})
        assert 0 in out.rejected

    def test_truthful_against_contrary_prejudice_trusted(self):
        truth = [0, 1, 0, 1]
        prejudice = {j: 1 - y for j, y in enumerate(truth)}
        m, asg = matrix([truth, truth])
        out = prejudice_anchored_mechanism(m, asg, prejudice)
        assert out.identified == {0, 1}
        assert out.rounds == 0

    def test_empty_anchor_rejected(self):
        m, asg = matrix([[0, 1]])
        with pytest.raises(ValueError):
            prejudice_anchored_mechanism(m, asg, {})

    def test_randomisers_rarely_rejected(self):
        # per-agent rejection = P(Bin(10, 1/2) >= 9) = 11/1024
        p_reject = binom_tail(10, 9)
        assert p_reject == pytest.approx(11 / 1024)
        cfg = GameConfig(
            WorldDistribution.build([0.5, 0.5], [0.9, 0.1]), AgentRoster(1, []), Assignment.complete(1, 10)
        )
        mech = PrejudiceAnchoredMechanism(10, 0.9)
        batches = generate_batches(cfg, StrategyProfile.uniform(cfg.roster, R), 20_000, seed=3)
        rejected = 0
        for b in batches:
            anchors = Anchors(np.ones(b.truth.shape, bool), b.prejudice_draws)
            rejected += int(mech.classify(b.reports, b.mask, anchors).rejected.sum())
        rate = rejected / 20_000
        assert 1 - rate >= 0.98
        assert abs(rate - p_reject) < 5 * math.sqrt(p_reject * (1 - p_reject) / 20_000)


class TestEvaluate:
    cfg = config(6, [0, 1, 2], 10)
    profile = StrategyProfile.symmetric(AgentRoster(6, [0, 1, 2]), T, R)

    def test_always_all(self):
        m = evaluate_mechanism(AllAgents(), self.cfg, self.profile, 200, seed=0)
        assert m.p_ii_hat == 1.0 and m.p_uu_hat == 0.0

    def test_oracle(self):
        target = np.zeros(6, bool)
        target[list(truthful_informed_set(self.cfg.roster, self.profile))] = True
        m = evaluate_mechanism(Oracle(target), self.cfg, self.profile, 200, seed=0)
        assert m.p_ii_hat == 1.0 and m.p_uu_hat == 1.0

    def test_empty_conditioning_set_undefined(self):
        prof = StrategyProfile.uniform(self.cfg.roster, P)
        m = evaluate_mechanism(AllAgents(), self.cfg, prof, 100, seed=0, n_items_grid=[5])
        assert m.p_ii_hat is None
        assert m.odds_ratio_curve[0].odds_ratio_ii is None

    def test_truthful_majority(self):
        cfg = config(13, range(9), 50)
        prof = StrategyProfile.symmetric(cfg.roster, T, R)
        m = evaluate_mechanism(AgreementMechanism(0.8), cfg, prof, 1000, seed=7)
        assert m.p_ii_hat >= 0.99 and m.p_uu_hat >= 0.99

    def test_threads_do_not_change_result(self):
        prof = StrategyProfile.symmetric(self.cfg.roster, T, R)
        a = evaluate_mechanism(AgreementMechanism(), self.cfg, prof, 1200, 3, [5, 10], threads=1)
        b = evaluate_mechanism(AgreementMechanism(), self.cfg, prof, 1200, 3, [5, 10], threads=4)
        assert a == b


def test_make_mechanism():
    assert make_mechanism("gold", n_gold=3).n_anchor == 3
    with pytest.raises(ValueError):
        make_mechanism("dawid-skene")
