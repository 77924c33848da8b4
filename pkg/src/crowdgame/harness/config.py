"""Experiment configuration files (YAML) with line-anchored error messages.

Grammar (all sections optional except ``world``, ``roster`` and ``assignment``)::

    name: truthful_majority
    world:
      p_y: [0.5, 0.5]            # K is the list length
      p_u: [0.9, 0.1]
      p_i_given_y: identity      # or a KxK list of rows
    roster:
      n_agents: 13
      informed: [0, 1, 2]        # or informed_fraction: 0.7 (lowest indices)
    assignment:
      n_items: 50
      labels_per_item: complete  # or an integer
    prejudice_mode: shared       # or iid
    profile:
      informed: truthful
      uninformed: randomise
      overrides: {4: prejudiced}
    mechanism:
      name: agreement            # agreement | pairwise | gold | prejudice_anchored
      threshold: 0.8
    trials: 1000
    seed: 7
    epsilon: 0.02
    n_items_grid: [5, 10, 20, 40]
    gold_grid: [1, 2, 5, 10]
    entropy_sweep:
      p_u: [[1.0, 0.0], [0.9, 0.1]]
      steps: 10
      restarts: 50
      trials: 1000
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from crowdgame.game import (
    AgentRoster,
    Assignment,
    GameConfig,
    PrejudiceMode,
    Strategy,
    StrategyProfile,
    make_assignment,
)
from crowdgame.mechanisms import MECHANISMS, Mechanism, make_mechanism
from crowdgame.probcore import NORM_TOL, ConditionalTable, WorldDistribution
from crowdgame.streams import substream


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass
class WorldSpec:
    p_y: list[float]
    p_u: list[float]
    p_i_given_y: Any = "identity"

    @property
    def k(self) -> int:
        return len(self.p_y)

    def build(self) -> WorldDistribution:
        table = ConditionalTable.identity(self.k) if self.p_i_given_y == "identity" else self.p_i_given_y
        return WorldDistribution.build(self.p_y, self.p_u, table)


@dataclass
class RosterSpec:
    n_agents: int
    informed: list[int] | None = None
    informed_fraction: float | None = None

    def build(self) -> AgentRoster:
        if self.informed is not None:
            return AgentRoster(self.n_agents, self.informed)
        n_inf = round((self.informed_fraction or 0.0) * self.n_agents)
        return AgentRoster(self.n_agents, range(n_inf))


@dataclass
class AssignmentSpec:
    n_items: int
    labels_per_item: Any = "complete"


@dataclass
class ProfileSpec:
    informed: str = "truthful"
    uninformed: str = "randomise"
    overrides: dict[int, str] = field(default_factory=dict)

    def build(self, roster: AgentRoster) -> StrategyProfile:
        p = StrategyProfile.symmetric(roster, self.informed, self.uninformed)
        for a, s in sorted(self.overrides.items()):
            p = p.with_agent(a, s)
        p.validate(roster)
        return p


@dataclass
class MechanismSpec:
    name: str = "agreement"
    params: dict[str, Any] = field(default_factory=dict)

    def build(self) -> Mechanism:
        return make_mechanism(self.name, **self.params)


@dataclass
class EntropySweepSpec:
    p_u: list[list[float]] = field(default_factory=list)
    steps: int = 10
    restarts: int = 50
    trials: int = 1000


@dataclass
class ExperimentConfig:
    world: WorldSpec
    roster: RosterSpec
    assignment: AssignmentSpec
    name: str = "experiment"
    prejudice_mode: str = "shared"
    profile: ProfileSpec = field(default_factory=ProfileSpec)
    mechanism: MechanismSpec = field(default_factory=MechanismSpec)
    trials: int = 1000
    seed: int = 0
    epsilon: float = 0.02
    n_items_grid: list[int] = field(default_factory=list)
    gold_grid: list[int] = field(default_factory=list)
    entropy_sweep: EntropySweepSpec = field(default_factory=EntropySweepSpec)
    output: str | None = None

    def game_config(self) -> GameConfig:
        roster = self.roster.build()
        lpi = self.assignment.labels_per_item
        if lpi == "complete":
            asg = Assignment.complete(roster.n_agents, self.assignment.n_items)
        else:
            asg = make_assignment(roster.n_agents, self.assignment.n_items, int(lpi), substream(self.seed, "assignment"))
        return GameConfig(self.world.build(), roster, asg, PrejudiceMode(self.prejudice_mode))

    def strategy_profile(self, roster: AgentRoster | None = None) -> StrategyProfile:
        return self.profile.build(roster or self.roster.build())

    def build_mechanism(self) -> Mechanism:
        return self.mechanism.build()

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "world": dataclasses.asdict(self.world),
            "roster": {k: v for k, v in dataclasses.asdict(self.roster).items() if v is not None},
            "assignment": dataclasses.asdict(self.assignment),
            "prejudice_mode": self.prejudice_mode,
            "profile": dataclasses.asdict(self.profile),
            "mechanism": {"name": self.mechanism.name, **self.mechanism.params},
            "trials": self.trials,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "n_items_grid": list(self.n_items_grid),
            "gold_grid": list(self.gold_grid),
            "entropy_sweep": dataclasses.asdict(self.entropy_sweep),
        }
        if self.output is not None:
            d["output"] = self.output
        return d

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)


# parsing


def _line_map(node, path=(), out=None) -> dict[tuple, int]:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            out[path + (key.value,)] = key.start_mark.line + 1
            _line_map(value, path + (key.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _line_map(item, path + (i,), out)
    return out


class _Reader:
    def __init__(self, data: dict, lines: dict, source: str):
        self.data = data
        self.lines = lines
        self.source = source

    def line(self, path: tuple) -> int | None:
        while path:
            key = tuple(str(p) if not isinstance(p, int) else p for p in path)
            if key in self.lines:
                return self.lines[key]
            path = path[:-1]
        return self.lines.get(())

    def fail(self, path: tuple, msg: str):
        raise ConfigError(f"{'.'.join(map(str, path))}: {msg}", self.line(path), self.source)

    def get(self, path: tuple, default: Any = ..., kind=None):
        node = self.data
        for p in path:
            if isinstance(node, list) and isinstance(p, int) and 0 <= p < len(node):
                node = node[p]
                continue
            if not isinstance(node, dict) or p not in node:
                if default is ...:
                    self.fail(path, "missing required key")
                return default
            node = node[p]
        if kind is not None:
            node = self.coerce(path, node, kind)
        return node

    def coerce(self, path, value, kind):
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                self.fail(path, f"expected an integer, got {value!r}")
        elif kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.fail(path, f"expected a number, got {value!r}")
            value = float(value)
        elif kind is str:
            if not isinstance(value, str):
                self.fail(path, f"expected a string, got {value!r}")
        elif kind is list:
            if not isinstance(value, list):
                self.fail(path, f"expected a list, got {value!r}")
        elif kind is dict:
            if not isinstance(value, dict):
                self.fail(path, f"expected a mapping, got {value!r}")
        return value

    def probs(self, path, k: int | None = None) -> list[float]:
        vals = self.get(path, kind=list)
        out = [self.coerce(path + (i,), v, float) for i, v in enumerate(vals)]
        for i, v in enumerate(out):
            if v < 0:
                self.fail(path + (i,), f"probability must be >= 0, got {v}")
        if len(out) < 2:
            self.fail(path, "need at least two labels")
        if k is not None and len(out) != k:
            self.fail(path, f"expected {k} entries, got {len(out)}")
        if abs(sum(out) - 1.0) > NORM_TOL:
            self.fail(path, f"probabilities sum to {sum(out)!r}, not 1")
        return out

    def int_list(self, path, default=()) -> list[int]:
        vals = self.get(path, list(default), kind=list)
        return [self.coerce(path + (i,), v, int) for i, v in enumerate(vals)]


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        loader = yaml.SafeLoader(text)
        try:
            node = loader.get_single_node()
            data = loader.construct_document(node) if node is not None else None
        finally:
            loader.dispose()
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", line, source) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML error: {exc}", None, source) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1, source)
    r = _Reader(data, _line_map(node), source)

    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in data:
        if key not in known:
            r.fail((key,), "unknown key")

    p_y = r.probs(("world", "p_y"))
    k = len(p_y)
    p_u = r.probs(("world", "p_u"), k)
    table = r.get(("world", "p_i_given_y"), "identity")
    if table != "identity":
        table = r.coerce(("world", "p_i_given_y"), table, list)
        if len(table) != k:
            r.fail(("world", "p_i_given_y"), f"expected {k} rows, got {len(table)}")
        table = [r.probs(("world", "p_i_given_y", i), k) for i in range(k)]
    world = WorldSpec(p_y, p_u, table)

    n_agents = r.get(("roster", "n_agents"), kind=int)
    if n_agents < 1:
        r.fail(("roster", "n_agents"), "must be >= 1")
    informed = r.get(("roster", "informed"), None)
    fraction = r.get(("roster", "informed_fraction"), None)
    if (informed is None) == (fraction is None):
        r.fail(("roster",), "give exactly one of 'informed' or 'informed_fraction'")
    if informed is not None:
        informed = r.int_list(("roster", "informed"))
        for i, a in enumerate(informed):
            if not 0 <= a < n_agents:
                r.fail(("roster", "informed", i), f"agent {a} outside 0..{n_agents - 1}")
    else:
        fraction = r.coerce(("roster", "informed_fraction"), fraction, float)
        if not 0.0 <= fraction <= 1.0:
            r.fail(("roster", "informed_fraction"), "must lie in [0, 1]")
    roster = RosterSpec(n_agents, informed, fraction)

    n_items = r.get(("assignment", "n_items"), kind=int)
    if n_items < 1:
        r.fail(("assignment", "n_items"), "must be >= 1")
    lpi = r.get(("assignment", "labels_per_item"), "complete")
    if lpi != "complete":
        lpi = r.coerce(("assignment", "labels_per_item"), lpi, int)
        if not 1 <= lpi <= n_agents:
            r.fail(("assignment", "labels_per_item"), f"must lie in 1..{n_agents}")
    assignment = AssignmentSpec(n_items, lpi)

    mode = r.get(("prejudice_mode",), "shared", kind=str)
    if mode not in {m.value for m in PrejudiceMode}:
        r.fail(("prejudice_mode",), f"must be 'shared' or 'iid', got {mode!r}")

    def strategy(path, default):
        s = r.get(path, default, kind=str)
        try:
            return Strategy.parse(s).value
        except ValueError:
            r.fail(path, f"unknown strategy {s!r}")

    overrides_raw = r.get(("profile", "overrides"), {}, kind=dict)
    overrides = {}
    for a, s in overrides_raw.items():
        a = r.coerce(("profile", "overrides", a), a, int)
        if not 0 <= a < n_agents:
            r.fail(("profile", "overrides", a), f"agent {a} outside roster")
        overrides[a] = strategy(("profile", "overrides", a), None)
    profile = ProfileSpec(strategy(("profile", "informed"), "truthful"), strategy(("profile", "uninformed"), "randomise"), overrides)

    mech_raw = dict(r.get(("mechanism",), {"name": "agreement"}, kind=dict))
    mname = mech_raw.pop("name", "agreement")
    if mname not in MECHANISMS:
        r.fail(("mechanism", "name"), f"unknown mechanism {mname!r}; choose from {sorted(MECHANISMS)}")
    try:
        make_mechanism(mname, **mech_raw)
    except TypeError as exc:
        r.fail(("mechanism",), f"bad parameters: {exc}")
    mechanism = MechanismSpec(mname, mech_raw)

    trials = r.get(("trials",), 1000, kind=int)
    if trials < 1:
        r.fail(("trials",), "must be >= 1")
    seed = r.get(("seed",), 0, kind=int)
    if seed < 0:
        r.fail(("seed",), "must be >= 0")
    epsilon = r.get(("epsilon",), 0.02, kind=float)

    r.get(("entropy_sweep",), {}, kind=dict)
    sweep = EntropySweepSpec(
        p_u=[r.probs(("entropy_sweep", "p_u", i), k) for i in range(len(r.get(("entropy_sweep", "p_u"), [], kind=list)))],
        steps=r.get(("entropy_sweep", "steps"), 10, kind=int),
        restarts=r.get(("entropy_sweep", "restarts"), 50, kind=int),
        trials=r.get(("entropy_sweep", "trials"), 1000, kind=int),
    )

    cfg = ExperimentConfig(
        world=world,
        roster=roster,
        assignment=assignment,
        name=r.get(("name",), "experiment", kind=str),
        prejudice_mode=mode,
        profile=profile,
        mechanism=mechanism,
        trials=trials,
        seed=seed,
        epsilon=epsilon,
        n_items_grid=r.int_list(("n_items_grid",)),
        gold_grid=r.int_list(("gold_grid",)),
        entropy_sweep=sweep,
        output=r.get(("output",), None),
    )
    try:
        roster_obj = cfg.roster.build()
        cfg.profile.build(roster_obj)
    except ValueError as exc:
        r.fail(("profile",), str(exc))
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(p)) from None
    return parse_config(text, str(p))


SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def scenario_path(name: str) -> Path:
    p = SCENARIO_DIR / f"{name}.yaml"
    if not p.exists():
        raise FileNotFoundError(f"no shipped scenario {name!r}")
    return p


def load_scenario(name: str) -> ExperimentConfig:
    return load_config(scenario_path(name))
