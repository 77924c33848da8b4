"""Named, block-structured random substreams derived from one master seed.

Trials are processed in fixed-size blocks. Every (role, block) pair gets its own
``SeedSequence`` child, so results do not depend on how many threads execute the
blocks, and growing the trial count only appends blocks without touching earlier
draws.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

BLOCK_SIZE = 500

# Fixed integer keys: never derive these from hash(), which is salted per process.
ROLES = {
    "assignment": 1,
    "truth": 2,
    "prejudice_shared": 3,
    "prejudice_iid": 4,
    "signal": 5,
    "randomise": 6,
    "mechanism": 7,
    "dynamics": 8,
    "scenario": 9,
}


def substream(seed: int, role: str, *path: int) -> np.random.Generator:
    """Generator for ``role`` at position ``path`` under ``seed``."""
    if role not in ROLES:
        raise KeyError(f"unknown stream role {role!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(ROLES[role], *map(int, path)))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, *path: int) -> int:
    """Derive a 63-bit integer seed; used to nest independent experiments."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(map(int, path)))
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> np.uint64(1))


class BlockStreams:
    """One generator per role for a single block of trials.

    ``shared`` builds the degenerate variant where every role reads from the same
    generator; that is what the single-game API uses.
    """

    def __init__(self, generators: dict[str, np.random.Generator]):
        self._gens = generators

    @classmethod
    def for_block(cls, seed: int, block: int, *prefix: int) -> "BlockStreams":
        return cls({role: substream(seed, role, *prefix, block) for role in ROLES})

    @classmethod
    def shared(cls, rng: np.random.Generator) -> "BlockStreams":
        return cls({role: rng for role in ROLES})

    def __getitem__(self, role: str) -> np.random.Generator:
        return self._gens[role]


def block_sizes(trials: int, block_size: int = BLOCK_SIZE) -> list[int]:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    full, rest = divmod(trials, block_size)
    return [block_size] * full + ([rest] if rest else [])


def map_blocks(
    fn: Callable[[int, int], T],
    trials: int,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
) -> list[T]:
    """Call ``fn(block_index, n_trials_in_block)`` for every block, results in block order."""
    sizes = block_sizes(trials, block_size)
    if threads <= 1 or len(sizes) == 1:
        return [fn(b, n) for b, n in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(len(sizes)), sizes))


def map_ordered(fn: Callable[[T], object], items: Sequence[T], threads: int = 1) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
