"""Mechanisms mapping a set of reports to the agents judged informed and truthful.

Every mechanism here is a deterministic function of the reports, the assignment,
its parameters and, for the anchored variants, the labels it was given on a
subset of items. Kernels operate on a leading trial axis so a whole block of
games is classified at once; the module-level functions wrap them for one game.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from crowdgame.game import (
    MISSING,
    Assignment,
    GameConfig,
    Primitives,
    ReportMatrix,
    StrategyProfile,
    assemble_reports,
    run_blocks,
    truthful_informed_set,
)
from crowdgame.streams import BlockStreams, substream

TRUSTED, UNCLASSIFIED, REJECTED = 1, 0, -1
_SLACK = 1e-12


@dataclass(frozen=True)
class MechanismOutcome:
    identified: frozenset[int]
    rejected: frozenset[int] = frozenset()
    rounds: int = 0


@dataclass(frozen=True)
class GoldSet:
    items: Mapping[int, int]

    def __post_init__(self):
        object.__setattr__(self, "items", dict(sorted((int(j), int(y)) for j, y in self.items.items())))

    @classmethod
    def sample(cls, truth: np.ndarray, g: int, rng: np.random.Generator) -> "GoldSet":
        if not 1 <= g <= len(truth):
            raise ValueError(f"gold size must lie in 1..{len(truth)}, got {g}")
        idx = np.sort(rng.choice(len(truth), size=g, replace=False))
        return cls({int(j): int(truth[j]) for j in idx})

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class Classification:
    """Batched mechanism output: (T, A) boolean masks and per-trial rounds."""

    identified: np.ndarray
    rejected: np.ndarray
    rounds: np.ndarray

    def outcome(self, t: int = 0) -> MechanismOutcome:
        return MechanismOutcome(
            frozenset(np.flatnonzero(self.identified[t]).tolist()),
            frozenset(np.flatnonzero(self.rejected[t]).tolist()),
            int(self.rounds[t]),
        )


@dataclass(frozen=True)
class Anchors:
    """Items whose label the mechanism is told, per trial: (T, N) mask and labels."""

    mask: np.ndarray
    labels: np.ndarray


def _onehot(reports: np.ndarray, k: int) -> np.ndarray:
    """(T, A, N) reports -> (T, A, N, K) float32 indicators; MISSING rows are all zero."""
    return (reports[..., None] == np.arange(k, dtype=reports.dtype)).astype(np.float32)


def _n_labels(reports: np.ndarray, anchors: Anchors | None = None) -> int:
    k = int(reports.max(initial=0)) + 1
    if anchors is not None:
        k = max(k, int(anchors.labels.max(initial=0)) + 1)
    return max(k, 2)


def pairwise_agreement_counts(reports: np.ndarray) -> np.ndarray:
    """(T, A, A) number of items on which agents a and b both reported the same label."""
    oh = _onehot(reports, _n_labels(reports))
    t, a, n, k = oh.shape
    flat = oh.reshape(t, a, n * k)
    return np.rint(flat @ flat.transpose(0, 2, 1)).astype(np.int32)


def agreement_scores(reports: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fraction of each agent's items where it matched the plurality label.

    Plurality ties go to the lowest label; items with fewer than two reporters
    are skipped. Agents without a scorable item get score 0.
    """
    k = _n_labels(reports)
    oh = _onehot(reports, k)
    counts = oh.sum(axis=1)  # (T, N, K)
    consensus = counts.argmax(axis=-1)  # first maximum = lowest label
    valid = mask.sum(axis=0) >= 2  # (N,)
    hit = (reports == consensus[:, None, :].astype(reports.dtype)) & mask & valid
    denom = (mask & valid).sum(axis=1)  # (A,)
    num = hit.sum(axis=2)
    return np.where(denom > 0, num / np.maximum(denom, 1), 0.0)


def pairwise_scores(reports: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Pooled agreement rate of each agent with every other agent on shared items."""
    eq = pairwise_agreement_counts(reports)
    m = mask.astype(np.int32)
    shared = m @ m.T
    idx = np.arange(mask.shape[0])
    eq[:, idx, idx] = 0
    shared = shared.copy()
    shared[idx, idx] = 0
    tot = shared.sum(axis=1)
    return np.where(tot > 0, eq.sum(axis=2) / np.maximum(tot, 1), 0.0)


def _propagate(reports, mask, state, agree_cut, max_rounds):
    """Extend a seed classification along shared items, one synchronous round at a time.

    An unclassified agent sharing an item with a trusted agent is classified by
    its pooled agreement over all (trusted agent, shared item) pairs. Returns the
    final state and, per trial, the last round that changed anything.
    """
    t_n, a_n = state.shape
    rounds = np.zeros(t_n, dtype=np.int32)
    if max_rounds <= 0:
        return state, rounds
    eq = pairwise_agreement_counts(reports).astype(np.float64)
    m = mask.astype(np.float64)
    shared = m @ m.T
    np.fill_diagonal(shared, 0.0)
    for r in range(1, max_rounds + 1):
        trusted = (state == TRUSTED).astype(np.float64)
        agree = np.einsum("tab,tb->ta", eq, trusted)
        total = trusted @ shared  # shared is symmetric
        cand = (state == UNCLASSIFIED) & (total > 0)
        if not cand.any():
            break
        ok = agree >= agree_cut * total - _SLACK
        state = np.where(cand & ok, TRUSTED, np.where(cand & ~ok, REJECTED, state)).astype(np.int8)
        rounds[cand.any(axis=1)] = r
    else:
        trusted = (state == TRUSTED).astype(np.float64)
        pending = (state == UNCLASSIFIED) & (trusted @ shared > 0)
        if pending.any() and max_rounds >= a_n:
            raise AssertionError("propagation failed to reach a fixed point")
    return state, rounds


def _seed_by_accuracy(reports, mask, anchors, cut, reject_matches):
    """Round-0 state from the anchored items.

    With ``reject_matches=False`` (gold) agents matching at least ``cut`` of their
    anchored items are trusted and the rest rejected. With ``True`` (observed
    prejudice) matching agents are rejected and the rest trusted.
    """
    held = mask[None, :, :] & anchors.mask[:, None, :]
    n_held = held.sum(axis=2)
    hits = ((reports == anchors.labels[:, None, :]) & held).sum(axis=2)
    rate_ok = hits >= cut * n_held - _SLACK
    good = ~rate_ok if reject_matches else rate_ok
    state = np.where(n_held == 0, UNCLASSIFIED, np.where(good, TRUSTED, REJECTED))
    return state.astype(np.int8)


class Mechanism(ABC):
    """Handle used by the evaluation and equilibrium code.

    ``anchor`` names the side information the mechanism needs: ``None`` for
    report-only mechanisms, ``"gold"`` for true labels, ``"prejudice"`` for the
    observed shared prejudice.
    """

    name: str = "mechanism"
    anchor: str | None = None
    n_anchor: int = 0

    @abstractmethod
    def classify(self, reports: np.ndarray, mask: np.ndarray, anchors: Anchors | None = None) -> Classification:
        ...

    @property
    def uses_anchor(self) -> bool:
        return self.anchor is not None

    def draw_anchors(self, prims: Primitives, rng: np.random.Generator) -> Anchors | None:
        """Choose anchored items per trial and read their labels from the block."""
        if self.anchor is None:
            return None
        t, n = prims.truth.shape
        if not 1 <= self.n_anchor <= n:
            raise ValueError(f"{self.name}: need 1..{n} anchored items, got {self.n_anchor}")
        order = np.argsort(rng.random((t, n)), axis=1, kind="stable")[:, : self.n_anchor]
        amask = np.zeros((t, n), dtype=bool)
        np.put_along_axis(amask, order, True, axis=1)
        source = prims.truth if self.anchor == "gold" else prims.prejudice_shared
        return Anchors(amask, source)

    def params(self) -> dict:
        return {}


@dataclass
class AgreementMechanism(Mechanism):
    threshold: float = 0.8
    name: str = field(default="agreement", init=False)

    def classify(self, reports, mask, anchors=None):
        score = agreement_scores(reports, mask)
        ident = score >= self.threshold - _SLACK
        return Classification(ident, ~ident, np.zeros(len(reports), dtype=np.int32))

    def params(self):
        return {"threshold": self.threshold}


@dataclass
class PairwiseAgreementMechanism(Mechanism):
    """Trust agents whose pooled peer-agreement rate reaches ``threshold``."""

    threshold: float = 0.8
    name: str = field(default="pairwise", init=False)

    def classify(self, reports, mask, anchors=None):
        score = pairwise_scores(reports, mask)
        ident = score >= self.threshold - _SLACK
        return Classification(ident, ~ident, np.zeros(len(reports), dtype=np.int32))

    def params(self):
        return {"threshold": self.threshold}


@dataclass
class GoldSeededMechanism(Mechanism):
    n_gold: int = 10
    accuracy_cut: float = 0.8
    agree_cut: float = 0.8
    max_rounds: int | None = None
    name: str = field(default="gold", init=False)
    anchor: str = field(default="gold", init=False)

    @property
    def n_anchor(self) -> int:
        return self.n_gold

    def classify(self, reports, mask, anchors=None):
        if anchors is None or not anchors.mask.any():
            raise ValueError("gold-seeded mechanism needs a non-empty gold set")
        state = _seed_by_accuracy(reports, mask, anchors, self.accuracy_cut, reject_matches=False)
        rounds_cap = mask.shape[0] if self.max_rounds is None else self.max_rounds
        state, rounds = _propagate(reports, mask, state, self.agree_cut, rounds_cap)
        return Classification(state == TRUSTED, state == REJECTED, rounds)

    def params(self):
        return {"n_gold": self.n_gold, "accuracy_cut": self.accuracy_cut, "agree_cut": self.agree_cut}


@dataclass
class PrejudiceAnchoredMechanism(Mechanism):
    n_anchor_items: int = 10
    match_cut: float = 0.9
    agree_cut: float = 0.8
    max_rounds: int | None = None
    name: str = field(default="prejudice_anchored", init=False)
    anchor: str = field(default="prejudice", init=False)

    @property
    def n_anchor(self) -> int:
        return self.n_anchor_items

    def classify(self, reports, mask, anchors=None):
        if anchors is None or not anchors.mask.any():
            raise ValueError("prejudice-anchored mechanism needs observed prejudice on some items")
        state = _seed_by_accuracy(reports, mask, anchors, self.match_cut, reject_matches=True)
        rounds_cap = mask.shape[0] if self.max_rounds is None else self.max_rounds
        state, rounds = _propagate(reports, mask, state, self.agree_cut, rounds_cap)
        return Classification(state == TRUSTED, state == REJECTED, rounds)

    def params(self):
        return {"n_anchor": self.n_anchor_items, "match_cut": self.match_cut, "agree_cut": self.agree_cut}


MECHANISMS = {
    "agreement": AgreementMechanism,
    "pairwise": PairwiseAgreementMechanism,
    "gold": GoldSeededMechanism,
    "prejudice_anchored": PrejudiceAnchoredMechanism,
}


def make_mechanism(name: str, **params) -> Mechanism:
    try:
        cls = MECHANISMS[name]
    except KeyError:
        raise ValueError(f"unknown mechanism {name!r}; choose from {sorted(MECHANISMS)}") from None
    return cls(**params)


# single-game API


def _checked_reports(reports: ReportMatrix, assignment: Assignment) -> tuple[np.ndarray, np.ndarray]:
    rep = np.asarray(reports.reports)
    if rep.size == 0 or not assignment.mask.any():
        raise ValueError("empty report set")
    if rep.shape != assignment.mask.shape:
        raise ValueError(f"reports shaped {rep.shape}, assignment {assignment.mask.shape}")
    if ((rep != MISSING) != assignment.mask).any():
        raise ValueError("reports are not defined exactly on the assignment")
    return rep[None], assignment.mask


def _anchor_from_mapping(mapping: Mapping[int, int], n_items: int) -> Anchors:
    amask = np.zeros((1, n_items), dtype=bool)
    labels = np.zeros((1, n_items), dtype=np.int8)
    for j, y in mapping.items():
        if not 0 <= j < n_items:
            raise ValueError(f"anchored item {j} outside 0..{n_items - 1}")
        amask[0, j] = True
        labels[0, j] = y
    return Anchors(amask, labels)


def agreement_mechanism(reports: ReportMatrix, assignment: Assignment, threshold: float = 0.8) -> MechanismOutcome:
    rep, mask = _checked_reports(reports, assignment)
    return AgreementMechanism(threshold).classify(rep, mask).outcome()


def pairwise_agreement_mechanism(
    reports: ReportMatrix, assignment: Assignment, threshold: float = 0.8
) -> MechanismOutcome:
    rep, mask = _checked_reports(reports, assignment)
    return PairwiseAgreementMechanism(threshold).classify(rep, mask).outcome()


def gold_seeded_mechanism(
    reports: ReportMatrix,
    assignment: Assignment,
    gold: GoldSet,
    accuracy_cut: float = 0.8,
    agree_cut: float = 0.8,
    max_rounds: int | None = None,
) -> MechanismOutcome:
    if len(gold) == 0:
        raise ValueError("gold set is empty")
    rep, mask = _checked_reports(reports, assignment)
    mech = GoldSeededMechanism(len(gold), accuracy_cut, agree_cut, max_rounds)
    return mech.classify(rep, mask, _anchor_from_mapping(gold.items, assignment.n_items)).outcome()


def prejudice_anchored_mechanism(
    reports: ReportMatrix,
    assignment: Assignment,
    prejudice_obs: Mapping[int, int],
    match_cut: float = 0.9,
    agree_cut: float = 0.8,
    max_rounds: int | None = None,
) -> MechanismOutcome:
    if not prejudice_obs:
        raise ValueError("no observed prejudice labels")
    rep, mask = _checked_reports(reports, assignment)
    mech = PrejudiceAnchoredMechanism(len(prejudice_obs), match_cut, agree_cut, max_rounds)
    return mech.classify(rep, mask, _anchor_from_mapping(prejudice_obs, assignment.n_items)).outcome()


# evaluation


def classify_block(
    mechanism: Mechanism,
    cfg: GameConfig,
    profiles: Sequence[StrategyProfile],
    prims: Primitives,
    streams: BlockStreams,
) -> list[Classification]:
    """Classify the same block under several profiles (common random numbers)."""
    anchors = mechanism.draw_anchors(prims, streams["mechanism"])
    out = []
    for p in profiles:
        batch = assemble_reports(cfg, p, prims)
        out.append(mechanism.classify(batch.reports, batch.mask, anchors))
    return out


@dataclass(frozen=True)
class OddsPoint:
    n_items: int
    p_ii_hat: float | None
    p_uu_hat: float | None
    odds_ratio_ii: float | None
    odds_ratio_uu: float | None


@dataclass(frozen=True)
class MechanismMetrics:
    """``None`` marks an estimate whose conditioning set was empty."""

    p_ii_hat: float | None
    p_uu_hat: float | None
    trials: int
    odds_ratio_curve: list[OddsPoint] = field(default_factory=list)


def n_sample_odds(successes: int, total: int, n: int) -> float | None:
    """(p/(1-p))^n with p continuity-corrected as (x + 1/2)/(m + 1).

    The correction keeps the statistic finite when every trial succeeds.
    """
    if total == 0:
        return None
    p = (successes + 0.5) / (total + 1.0)
    log_odds = n * (math.log(p) - math.log1p(-p))
    if log_odds > 709.0:
        return math.inf
    return math.exp(log_odds)


def _identification_counts(mechanism, cfg, profile, trials, seed, threads, prefix=()):
    target = truthful_informed_set(cfg.roster, profile)
    tmask = np.zeros(cfg.n_agents, dtype=bool)
    tmask[list(target)] = True

    def fn(prims, streams):
        c = classify_block(mechanism, cfg, [profile], prims, streams)[0]
        ident = c.identified
        return int(ident[:, tmask].sum()), int((~ident[:, ~tmask]).sum())

    parts = run_blocks(cfg, fn, trials, seed, threads, prefix)
    inc = sum(p[0] for p in parts)
    exc = sum(p[1] for p in parts)
    return inc, trials * int(tmask.sum()), exc, trials * int((~tmask).sum())


def evaluate_mechanism(
    mechanism: Mechanism,
    cfg: GameConfig,
    profile: StrategyProfile,
    trials: int,
    seed: int,
    n_items_grid: Sequence[int] | None = None,
    threads: int = 1,
) -> MechanismMetrics:
    """Estimate p_II = P(a in A_M | a in A_IT) and p_UU = P(a not in A_M | a not in A_IT)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    profile.validate(cfg.roster)
    inc, n_i, exc, n_u = _identification_counts(mechanism, cfg, profile, trials, seed, threads)
    curve = []
    for n in n_items_grid or ():
        sized = cfg if n == cfg.n_items else cfg.with_n_items(n, substream(seed, "assignment", n))
        gi, gn_i, ge, gn_u = _identification_counts(mechanism, sized, profile, trials, seed, threads, (n,))
        curve.append(
            OddsPoint(
                n,
                gi / gn_i if gn_i else None,
                ge / gn_u if gn_u else None,
                n_sample_odds(gi, gn_i, n),
                n_sample_odds(ge, gn_u, n),
            )
        )
    return MechanismMetrics(inc / n_i if n_i else None, exc / n_u if n_u else None, trials, curve)
