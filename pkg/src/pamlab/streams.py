"""Counter-based random streams addressed by (master seed, experiment id, index).

Every unit of work (a block of paths, one ensemble member) owns a Philox
generator keyed by ``SeedSequence(master_seed, spawn_key=(tag, index))``
where ``tag`` is the first 8 bytes of SHA-256 of the experiment id. Results
therefore depend only on the address of the work unit, never on which
worker ran it or in what order.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

__all__ = ["SeedStream", "experiment_tag", "parallel_map"]


def experiment_tag(experiment_id: str) -> int:
    return int.from_bytes(hashlib.sha256(experiment_id.encode("utf-8")).digest()[:8], "little")


@dataclass(frozen=True)
class SeedStream:
    master_seed: int
    experiment_id: str = "default"

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master seed must be an unsigned 64-bit integer")

    def seed_sequence(self, index: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            entropy=int(self.master_seed),
            spawn_key=(experiment_tag(self.experiment_id), int(index)),
        )

    def generator(self, index: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence(index)))

    def field_generator(self, index: int) -> np.random.Generator:
        """Generator for whole-lattice draws; SFC64 is ~1.5x faster than Philox there.

        Addressing is unchanged: the state is still derived from
        ``(master seed, tag, index)`` through SeedSequence.
        """
        return np.random.Generator(np.random.SFC64(self.seed_sequence(index)))

    def child(self, name: str) -> "SeedStream":
        return SeedStream(self.master_seed, f"{self.experiment_id}/{name}")


def as_stream(rng, default_id: str) -> SeedStream:
    if isinstance(rng, SeedStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return SeedStream(int(rng), default_id)
    raise TypeError("expected a SeedStream or an integer master seed")


def parallel_map(func, tasks, workers: int = 1) -> list:
    """Ordered map; output order never depends on ``workers``."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
