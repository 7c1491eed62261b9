"""Per-replica random streams.

Replica ``r`` of a run with master seed ``s`` draws from a Philox generator
keyed by ``(s, r)``. A replica's numbers therefore do not depend on how
replicas are batched or which worker runs them.
"""

from __future__ import annotations

import numpy as np


def replica_generator(seed: int, replica: int) -> np.random.Generator:
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(replica)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class ReplicaStreams:
    """Block-buffered draws for many replicas advancing in lockstep."""

    def __init__(self, seed: int, replicas, block: int = 256, kind: str = "uniform"):
        self.replicas = np.asarray(replicas, dtype=np.int64)
        self.gens = [replica_generator(seed, r) for r in self.replicas]
        self.block = block
        self.kind = kind
        self.buf = np.empty((len(self.gens), block))
        self.pos = np.full(len(self.gens), block, dtype=np.int64)

    def _refill(self, rows):
        for r in rows:
            g = self.gens[r]
            self.buf[r] = g.random(self.block) if self.kind == "uniform" else g.standard_normal(self.block)
            self.pos[r] = 0

    def draw(self, idx, k: int) -> np.ndarray:
        """``k`` fresh numbers for each replica position in ``idx``; shape (len(idx), k)."""
        idx = np.asarray(idx)
        stale = idx[self.pos[idx] + k > self.block]
        if stale.size:
            self._refill(stale)
        cols = self.pos[idx][:, None] + np.arange(k)
        out = self.buf[idx[:, None], cols]
        self.pos[idx] += k
        return out


def derive_seed(seed: int, *tags: int) -> int:
    """Independent 64-bit seed for a named sub-experiment of a run."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(t) for t in tags))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def chunk_generator(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator for a fixed block of replicas identified by ``keys``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
