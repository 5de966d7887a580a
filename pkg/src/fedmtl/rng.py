"""Counter-based random streams addressed by (master seed, purpose, client, step).

A stream is a Philox generator whose 128-bit key is a hash of the master
seed, purpose tag and client id, and whose counter is positioned by the
step.  The same path always yields the same bytes, distinct paths are
independent, and nothing depends on the order in which streams are opened,
so concurrent workers cannot perturb each other.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_MASK64 = (1 << 64) - 1


@lru_cache(maxsize=4096)
def _philox_key(master_seed: int, purpose: str, client: int) -> int:
    h = hashlib.blake2b(f"{master_seed & _MASK64}|{purpose}|{client}".encode(), digest_size=16)
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    purpose: str = "root"
    client: int = -1
    step: int = 0

    def at(self, purpose: str | None = None, client: int | None = None, step: int | None = None) -> "RngStream":
        return RngStream(
            self.master_seed,
            self.purpose if purpose is None else purpose,
            self.client if client is None else client,
            self.step if step is None else step,
        )

    @property
    def path(self) -> tuple[str, int, int]:
        return (self.purpose, self.client, self.step)

    def generator(self) -> np.random.Generator:
        key = _philox_key(self.master_seed, self.purpose, self.client)
        # the step sits in the second counter word; draws advance the first
        counter = [0, self.step & _MASK64, 0, 0]
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def normal(self, size) -> np.ndarray:
        return self.generator().standard_normal(size)

    def uniform(self, size) -> np.ndarray:
        return self.generator().random(size)


def derive_seed(master_seed: int, *parts: int) -> int:
    """Deterministic 63-bit child seed for sweeps and replicas."""
    ss = np.random.SeedSequence(master_seed & _MASK64, spawn_key=tuple(int(p) for p in parts))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


class DrawBank:
    """Per-step rows of draws for one (purpose, client) path, materialised in chunks.

    Row ``t`` depends only on (master seed, purpose, client, t): chunk ``t // chunk``
    is generated from the stream at step = chunk index.  Reading rows in any order
    gives the same values; increasing order is the cheap case.
    """

    def __init__(self, master_seed: int, purpose: str, client: int, width: int, kind: str = "normal", chunk: int = 512):
        if kind not in ("normal", "uniform"):
            raise ValueError(f"unknown draw kind {kind!r}")
        self.stream = RngStream(master_seed, purpose, client)
        self.width = width
        self.kind = kind
        self.chunk = chunk
        self._index = -1
        self._block: np.ndarray | None = None

    def row(self, step: int) -> np.ndarray:
        c = step // self.chunk
        if c != self._index:
            g = self.stream.at(step=c).generator()
            shape = (self.chunk, self.width)
            self._block = g.standard_normal(shape) if self.kind == "normal" else g.random(shape)
            self._index = c
        return self._block[step - c * self.chunk]
