"""The labelling game: truth, prejudice and signal draws, and agents' reports.

Each item is an independent copy of the one-shot game. All randomness is drawn
up front into a :class:`Primitives` block that does not depend on the strategy
profile; reports for any profile are then a deterministic selection from it.
Comparing two profiles on the same block therefore uses common random numbers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from crowdgame.probcore import WorldDistribution, inverse_cdf
from crowdgame.streams import BlockStreams, map_blocks

R = TypeVar("R")

MISSING = -1


class Strategy(enum.Enum):
    TRUTHFUL = "truthful"
    PREJUDICED = "prejudiced"
    RANDOMISE = "randomise"

    @classmethod
    def parse(cls, name: str | "Strategy") -> "Strategy":
        if isinstance(name, Strategy):
            return name
        key = str(name).strip().lower()
        aliases = {"truth": "truthful", "prejudice": "prejudiced", "randomize": "randomise", "random": "randomise"}
        return cls(aliases.get(key, key))


class PrejudiceMode(enum.Enum):
    SHARED = "shared"
    IID = "iid"


_CODE = {Strategy.TRUTHFUL: 0, Strategy.PREJUDICED: 1, Strategy.RANDOMISE: 2}


@dataclass(frozen=True)
class AgentRoster:
    n_agents: int
    informed: frozenset[int]

    def __init__(self, n_agents: int, informed: Iterable[int]):
        if n_agents < 1:
            raise ValueError("roster needs at least one agent")
        inf = frozenset(int(a) for a in informed)
        bad = [a for a in inf if not 0 <= a < n_agents]
        if bad:
            raise ValueError(f"informed agents {sorted(bad)} outside 0..{n_agents - 1}")
        object.__setattr__(self, "n_agents", int(n_agents))
        object.__setattr__(self, "informed", inf)

    @property
    def agents(self) -> range:
        return range(self.n_agents)

    @property
    def uninformed(self) -> frozenset[int]:
        return frozenset(self.agents) - self.informed

    def is_informed(self, agent: int) -> bool:
        return agent in self.informed


@dataclass(frozen=True)
class Assignment:
    """Which agents label which items. ``labels_per_item`` is kept so the
    assignment can be regenerated at a different item count."""

    incidence: tuple[frozenset[int], ...]
    n_items: int
    labels_per_item: int | None = None

    def __post_init__(self):
        if self.n_items < 1:
            raise ValueError("n_items must be >= 1")
        covered = set()
        for a, items in enumerate(self.incidence):
            if not items:
                raise ValueError(f"agent {a} has no items")
            if min(items) < 0 or max(items) >= self.n_items:
                raise ValueError(f"agent {a} has items outside 0..{self.n_items - 1}")
            covered |= items
        if len(covered) != self.n_items:
            missing = sorted(set(range(self.n_items)) - covered)
            raise ValueError(f"items {missing[:5]} are not assigned to any agent")

    @classmethod
    def complete(cls, n_agents: int, n_items: int) -> "Assignment":
        items = frozenset(range(n_items))
        return cls(tuple(items for _ in range(n_agents)), n_items, n_agents)

    @classmethod
    def from_mask(cls, mask, labels_per_item: int | None = None) -> "Assignment":
        m = np.asarray(mask, dtype=bool)
        return cls(tuple(frozenset(np.flatnonzero(row).tolist()) for row in m), m.shape[1], labels_per_item)

    @property
    def n_agents(self) -> int:
        return len(self.incidence)

    @property
    def is_complete(self) -> bool:
        return all(len(s) == self.n_items for s in self.incidence)

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros((self.n_agents, self.n_items), dtype=bool)
        for a, items in enumerate(self.incidence):
            m[a, sorted(items)] = True
        m.flags.writeable = False
        return m

    @cached_property
    def shared_counts(self) -> np.ndarray:
        """Number of items each pair of agents both labelled."""
        m = self.mask.astype(np.int32)
        return m @ m.T

    def is_connected(self) -> bool:
        """Whether the co-labelling graph over agents is connected."""
        adj = self.shared_counts > 0
        seen = {0}
        frontier = [0]
        while frontier:
            a = frontier.pop()
            for b in np.flatnonzero(adj[a]):
                if b not in seen:
                    seen.add(int(b))
                    frontier.append(int(b))
        return len(seen) == self.n_agents


def make_assignment(n_agents: int, n_items: int, labels_per_item: int, rng: np.random.Generator) -> Assignment:
    """Give every item ``labels_per_item`` distinct agents, keeping the overlap graph connected.

    Agents are shuffled, then the first items take overlapping windows of that
    order (a chain touching every agent); the remaining items get random subsets.
    """
    if not 1 <= labels_per_item <= n_agents:
        raise ValueError(f"labels_per_item must lie in 1..{n_agents}, got {labels_per_item}")
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    if labels_per_item == n_agents:
        return Assignment.complete(n_agents, n_items)
    if labels_per_item == 1:
        if n_agents > 1:
            raise ValueError("labels_per_item=1 cannot give overlapping assignments")
    elif n_items * (labels_per_item - 1) < n_agents - 1:
        raise ValueError(
            f"{n_items} items with {labels_per_item} labels each cannot connect {n_agents} agents"
        )

    order = rng.permutation(n_agents)
    stride = labels_per_item - 1
    n_chain = -(-(n_agents - 1) // stride)
    mask = np.zeros((n_agents, n_items), dtype=bool)
    for j in range(n_items):
        if j < n_chain:
            start = j * stride
            members = [order[(start + r) % n_agents] for r in range(labels_per_item)]
        else:
            members = rng.choice(n_agents, size=labels_per_item, replace=False)
        mask[members, j] = True
    return Assignment.from_mask(mask, labels_per_item)


@dataclass(frozen=True)
class StrategyProfile:
    per_agent: tuple[Strategy, ...]

    def __init__(self, per_agent: Sequence[Strategy | str]):
        object.__setattr__(self, "per_agent", tuple(Strategy.parse(s) for s in per_agent))

    @classmethod
    def symmetric(cls, roster: AgentRoster, informed: Strategy | str, uninformed: Strategy | str) -> "StrategyProfile":
        si, su = Strategy.parse(informed), Strategy.parse(uninformed)
        return cls([si if a in roster.informed else su for a in roster.agents])

    @classmethod
    def uniform(cls, roster: AgentRoster, strategy: Strategy | str) -> "StrategyProfile":
        return cls([Strategy.parse(strategy)] * roster.n_agents)

    def __getitem__(self, agent: int) -> Strategy:
        return self.per_agent[agent]

    def __len__(self) -> int:
        return len(self.per_agent)

    def with_agent(self, agent: int, strategy: Strategy | str) -> "StrategyProfile":
        s = list(self.per_agent)
        s[agent] = Strategy.parse(strategy)
        return StrategyProfile(s)

    def validate(self, roster: AgentRoster) -> None:
        if len(self.per_agent) != roster.n_agents:
            raise ValueError(f"profile covers {len(self.per_agent)} agents, roster has {roster.n_agents}")
        bad = [a for a, s in enumerate(self.per_agent) if s is Strategy.TRUTHFUL and a not in roster.informed]
        if bad:
            raise ValueError(f"uninformed agents {bad} cannot play truthful")

    def codes(self) -> np.ndarray:
        return np.array([_CODE[s] for s in self.per_agent], dtype=np.int8)

    def describe(self) -> str:
        return ",".join(s.value for s in self.per_agent)


def legal_strategies(roster: AgentRoster, agent: int) -> tuple[Strategy, ...]:
    if agent in roster.informed:
        return (Strategy.TRUTHFUL, Strategy.PREJUDICED, Strategy.RANDOMISE)
    return (Strategy.PREJUDICED, Strategy.RANDOMISE)


def truthful_informed_set(roster: AgentRoster, profile: StrategyProfile) -> frozenset[int]:
    profile.validate(roster)
    return frozenset(a for a in roster.informed if profile[a] is Strategy.TRUTHFUL)


@dataclass(frozen=True)
class GameConfig:
    world: WorldDistribution
    roster: AgentRoster
    assignment: Assignment
    prejudice_mode: PrejudiceMode = PrejudiceMode.SHARED

    def __post_init__(self):
        if self.assignment.n_agents != self.roster.n_agents:
            raise ValueError(
                f"assignment covers {self.assignment.n_agents} agents, roster has {self.roster.n_agents}"
            )

    @property
    def n_agents(self) -> int:
        return self.roster.n_agents

    @property
    def n_items(self) -> int:
        return self.assignment.n_items

    def with_n_items(self, n_items: int, rng: np.random.Generator | None = None) -> "GameConfig":
        a = self.assignment
        if a.is_complete:
            new = Assignment.complete(self.n_agents, n_items)
        elif a.labels_per_item is not None:
            if rng is None:
                raise ValueError("regenerating a sparse assignment needs an rng")
            new = make_assignment(self.n_agents, n_items, a.labels_per_item, rng)
        else:
            raise ValueError("custom assignment cannot be resized")
        return replace(self, assignment=new)

    def with_world(self, world: WorldDistribution) -> "GameConfig":
        return replace(self, world=world)


@dataclass(frozen=True)
class Primitives:
    """Every random quantity of a block of games, independent of strategies.

    Shapes: ``truth`` and ``prejudice_shared`` are (T, N); the per-agent arrays
    are (T, A, N). Signals are drawn for every agent so that the array layout is
    the same whoever is informed; uninformed agents never see theirs.
    """

    truth: np.ndarray
    prejudice_shared: np.ndarray
    prejudice_iid: np.ndarray
    signal: np.ndarray
    randomise: np.ndarray

    @property
    def trials(self) -> int:
        return self.truth.shape[0]


def draw_primitives(cfg: GameConfig, streams: BlockStreams, trials: int) -> Primitives:
    w = cfg.world
    t, a, n = trials, cfg.n_agents, cfg.n_items
    truth = inverse_cdf(w.p_y.cdf(), streams["truth"].random((t, n)))
    u_shared = inverse_cdf(w.p_u.cdf(), streams["prejudice_shared"].random((t, n)))
    u_iid = inverse_cdf(w.p_u.cdf(), streams["prejudice_iid"].random((t, a, n)))
    cond = w.p_i_given_y.cdf()[truth.astype(np.intp)]  # (T, N, K)
    signal = inverse_cdf(cond[:, None, :, :], streams["signal"].random((t, a, n)))
    rand = inverse_cdf(w.p_y.cdf(), streams["randomise"].random((t, a, n)))
    return Primitives(truth, u_shared, u_iid, signal, rand)


@dataclass(frozen=True)
class ReportMatrix:
    """One game: reports (A, N) with ``MISSING`` where an agent has no item.

    ``prejudice_draws`` is (N,) in shared mode and (A, N) in iid mode.
    ``signals`` is MISSING for uninformed agents and unassigned cells.
    """

    reports: np.ndarray
    truth: np.ndarray
    prejudice_draws: np.ndarray
    signals: np.ndarray
    mask: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.reports.shape[0]

    @property
    def n_items(self) -> int:
        return self.reports.shape[1]

    def report(self, agent: int, item: int) -> int | None:
        if not self.mask[agent, item]:
            return None
        return int(self.reports[agent, item])

    def as_dict(self) -> dict[tuple[int, int], int]:
        a, j = np.nonzero(self.mask)
        return {(int(x), int(y)): int(self.reports[x, y]) for x, y in zip(a, j)}


@dataclass(frozen=True)
class ReportBatch:
    """A block of T independent games sharing config and profile."""

    reports: np.ndarray  # (T, A, N)
    truth: np.ndarray  # (T, N)
    prejudice_draws: np.ndarray  # (T, N) or (T, A, N)
    signals: np.ndarray  # (T, A, N)
    mask: np.ndarray  # (A, N)

    @property
    def trials(self) -> int:
        return self.reports.shape[0]

    def __getitem__(self, t: int) -> ReportMatrix:
        return ReportMatrix(self.reports[t], self.truth[t], self.prejudice_draws[t], self.signals[t], self.mask)

    def __len__(self) -> int:
        return self.trials


def assemble_reports(cfg: GameConfig, profile: StrategyProfile, prims: Primitives) -> ReportBatch:
    """Select each agent's report from the primitives according to its strategy."""
    profile.validate(cfg.roster)
    codes = profile.codes()[None, :, None]
    shared = cfg.prejudice_mode is PrejudiceMode.SHARED
    u = prims.prejudice_shared[:, None, :] if shared else prims.prejudice_iid
    rep = np.where(codes == 0, prims.signal, np.where(codes == 1, u, prims.randomise)).astype(np.int8)
    mask = cfg.assignment.mask
    rep[:, ~mask] = MISSING
    informed = np.zeros(cfg.n_agents, dtype=bool)
    informed[list(cfg.roster.informed)] = True
    sig = np.where(informed[:, None] & mask, prims.signal, MISSING).astype(np.int8)
    return ReportBatch(
        reports=rep,
        truth=prims.truth,
        prejudice_draws=prims.prejudice_shared if shared else prims.prejudice_iid,
        signals=sig,
        mask=mask,
    )


def generate_reports(cfg: GameConfig, profile: StrategyProfile, rng: np.random.Generator) -> ReportMatrix:
    """Play one game. Deterministic given the generator state."""
    profile.validate(cfg.roster)
    prims = draw_primitives(cfg, BlockStreams.shared(rng), 1)
    return assemble_reports(cfg, profile, prims)[0]


def run_blocks(
    cfg: GameConfig,
    fn: Callable[[Primitives, BlockStreams], R],
    trials: int,
    seed: int,
    threads: int = 1,
    stream_prefix: Sequence[int] = (),
) -> list[R]:
    """Draw primitives block by block from ``seed`` and apply ``fn`` to each."""

    def one(block: int, n: int) -> R:
        streams = BlockStreams.for_block(seed, block, *stream_prefix)
        return fn(draw_primitives(cfg, streams, n), streams)

    return map_blocks(one, trials, threads)


def generate_batches(
    cfg: GameConfig, profile: StrategyProfile, trials: int, seed: int, threads: int = 1
) -> list[ReportBatch]:
    profile.validate(cfg.roster)
    return run_blocks(cfg, lambda prims, _s: assemble_reports(cfg, profile, prims), trials, seed, threads)
