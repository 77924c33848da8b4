"""Discrete probability tables over a shared label alphabet.

Entropies and mutual information are in bits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NORM_TOL = 1e-9
STRICT_TOL = 1e-6


@dataclass(frozen=True)
class LabelSpace:
    size_k: int

    def __post_init__(self):
        if int(self.size_k) != self.size_k or self.size_k < 2:
            raise ValueError(f"label space needs size_k >= 2, got {self.size_k}")

    @property
    def labels(self) -> range:
        return range(self.size_k)


@dataclass(frozen=True)
class Distribution:
    """Probability vector over labels ``0..K-1``."""

    probs: tuple[float, ...]

    def __init__(self, probs: Sequence[float]):
        p = tuple(float(x) for x in probs)
        if len(p) < 2:
            raise ValueError("a distribution needs at least two labels")
        if any(not np.isfinite(x) or x < 0 for x in p):
            raise ValueError(f"probabilities must be finite and >= 0, got {p}")
        if abs(sum(p) - 1.0) > NORM_TOL:
            raise ValueError(f"probabilities must sum to 1 (got {sum(p)!r})")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, k: int) -> "Distribution":
        return cls([1.0 / k] * k)

    @property
    def k(self) -> int:
        return len(self.probs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.as_array())
        c[-1] = 1.0
        return c

    def __len__(self) -> int:
        return len(self.probs)


@dataclass(frozen=True)
class ConditionalTable:
    """Row ``y`` is the distribution of the signal given truth ``y``."""

    rows: tuple[Distribution, ...]

    def __init__(self, rows: Sequence[Distribution | Sequence[float]]):
        rs = tuple(r if isinstance(r, Distribution) else Distribution(r) for r in rows)
        if len(rs) < 2:
            raise ValueError("conditional table needs at least two rows")
        k = len(rs)
        if any(r.k != k for r in rs):
            raise ValueError(f"conditional table must be {k}x{k}")
        object.__setattr__(self, "rows", rs)

    @classmethod
    def identity(cls, k: int) -> "ConditionalTable":
        return cls(np.eye(k).tolist())

    @classmethod
    def symmetric_noise(cls, k: int, flip: float) -> "ConditionalTable":
        """Keep the true label w.p. ``1 - flip``, else pick one of the others uniformly."""
        m = np.full((k, k), flip / (k - 1))
        np.fill_diagonal(m, 1.0 - flip)
        return cls(m.tolist())

    @property
    def k(self) -> int:
        return len(self.rows)

    def as_array(self) -> np.ndarray:
        return np.array([r.probs for r in self.rows], dtype=float)

    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.as_array(), axis=1)
        c[:, -1] = 1.0
        return c


@dataclass(frozen=True)
class WorldDistribution:
    """Joint law of truth Y, prejudice U and informative signal I.

    U is stored without conditioning on Y, so the factorisation
    P(Y,U,I) = P(U) P(Y) P(I|Y) and hence I(Y;U) = 0 hold by construction.
    """

    labels: LabelSpace
    p_y: Distribution
    p_u: Distribution
    p_i_given_y: ConditionalTable

    def __post_init__(self):
        k = self.labels.size_k
        for name in ("p_y", "p_u", "p_i_given_y"):
            if getattr(self, name).k != k:
                raise ValueError(f"{name} has {getattr(self, name).k} labels, expected {k}")

    @classmethod
    def build(cls, p_y, p_u, p_i_given_y=None) -> "WorldDistribution":
        p_y = p_y if isinstance(p_y, Distribution) else Distribution(p_y)
        p_u = p_u if isinstance(p_u, Distribution) else Distribution(p_u)
        if p_i_given_y is None:
            p_i_given_y = ConditionalTable.identity(p_y.k)
        elif not isinstance(p_i_given_y, ConditionalTable):
            p_i_given_y = ConditionalTable(p_i_given_y)
        return cls(LabelSpace(p_y.k), p_y, p_u, p_i_given_y)

    @property
    def k(self) -> int:
        return self.labels.size_k

    def joint_y_i(self) -> np.ndarray:
        return self.p_y.as_array()[:, None] * self.p_i_given_y.as_array()

    def joint_y_u(self) -> np.ndarray:
        return np.outer(self.p_y.as_array(), self.p_u.as_array())

    def informed_report_law(self) -> Distribution:
        """Marginal law of a truthful informed report, P(I)."""
        return Distribution(self.joint_y_i().sum(axis=0))


def entropy(d: Distribution | Sequence[float]) -> float:
    p = d.as_array() if isinstance(d, Distribution) else Distribution(d).as_array()
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum()) + 0.0


def mutual_information(joint) -> float:
    """Mutual information (bits) of a 2-D joint probability table."""
    p = np.asarray(joint, dtype=float)
    if p.ndim != 2:
        raise ValueError("joint table must be two-dimensional")
    if not np.all(np.isfinite(p)) or (p < 0).any():
        raise ValueError("joint table entries must be finite and >= 0")
    if abs(p.sum() - 1.0) > NORM_TOL:
        raise ValueError(f"joint table must sum to 1 (got {p.sum()!r})")
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    rows, cols = np.nonzero(p > 0)
    pj = p[rows, cols]
    # log space: px*py underflows for subnormal entries
    mi = float((pj * (np.log2(pj) - np.log2(px[rows, 0]) - np.log2(py[0, cols]))).sum())
    # Rounding can leave tiny negatives on independent tables.
    return max(mi, 0.0) if mi > -1e-12 else mi


@dataclass(frozen=True)
class ConstraintCheck:
    name: str
    passed: bool
    value: float
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[ConstraintCheck, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> ConstraintCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self) -> list[ConstraintCheck]:
        return [c for c in self.checks if not c.passed]

    def format(self) -> str:
        lines = []
        for c in self.checks:
            mark = "PASS" if c.passed else "FAIL"
            lines.append(f"[{mark}] {c.name}: {c.detail} (measured {c.value:.6g})")
        return "\n".join(lines)


def total_variation(p: Distribution, q: Distribution) -> float:
    return 0.5 * float(np.abs(p.as_array() - q.as_array()).sum())


def validate_world(w: WorldDistribution, tol: float = STRICT_TOL) -> ValidationReport:
    """Check the three distributional requirements of the game.

    Failures are reported, never raised.
    """
    mi_yu = mutual_information(w.joint_y_u())
    mi_yi = mutual_information(w.joint_y_i())
    tv = total_variation(w.p_y, w.p_u)
    checks = (
        ConstraintCheck(
            "independence I(Y;U)=0",
            mi_yu <= NORM_TOL,
            mi_yu,
            "holds by construction: U is stored independently of Y",
        ),
        ConstraintCheck(
            "informative I(Y;I)>0",
            mi_yi > tol,
            mi_yi,
            f"signal must carry information about the truth (tol {tol:g} bits)",
        ),
        ConstraintCheck(
            "distinct P(Y)!=P(U)",
            tv > tol,
            tv,
            f"total variation between P(Y) and P(U) must exceed {tol:g}",
        ),
    )
    return ValidationReport(checks)


def inverse_cdf(cdf: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Map uniforms in [0,1) to labels through a cumulative table (last axis = labels)."""
    k = cdf.shape[-1]
    out = (uniforms[..., None] >= cdf).sum(axis=-1)
    return np.minimum(out, k - 1).astype(np.int8)


def sample(d: Distribution, rng: np.random.Generator) -> int:
    """Draw one label; consumes exactly one uniform from ``rng``."""
    return int(inverse_cdf(d.cdf(), np.asarray(rng.random()))[()])


def sample_many(d: Distribution, rng: np.random.Generator, size) -> np.ndarray:
    return inverse_cdf(d.cdf(), rng.random(size))
