"""Counter-based random marks for the space-time proposal measure.

A mark is addressed by ``(cell, counter)``: the ``counter``-th proposal in a
spatial cell.  Marks are generated in fixed-size blocks by a Philox generator
whose key encodes ``(seed, tag, replica, cell)`` and whose counter encodes the
block number, so the value of a mark never depends on which other marks were
requested before it, or by which process.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

MASK64 = (1 << 64) - 1

# stream tags
PROPOSAL = 1
INITIAL = 2
BOUNDARY = 3
SAMPLE = 4

BLOCK = 64


def _splitmix(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _zigzag(v: int) -> int:
    return (v << 1) if v >= 0 else ((-v << 1) - 1)


def mix(*values: int) -> int:
    """Hash a tuple of (possibly negative) integers to 64 bits."""
    h = 0x243F6A8885A308D3
    for v in values:
        h = _splitmix(h ^ (_zigzag(int(v)) & MASK64))
    return h


class Mark(NamedTuple):
    x: tuple[float, ...]
    u: float
    r: float
    s: float


class EventStream:
    """Deterministic driving noise for one replica.

    Parameters
    ----------
    seed : int
        Global seed, interpreted modulo 2**64.
    replica : int
        Replica index; different replicas give independent streams.
    """

    def __init__(self, seed: int, replica: int = 0):
        self.seed = int(seed) & MASK64
        self.replica = int(replica)
        self._cache: dict[tuple, list[list[float]]] = {}

    def __repr__(self):
        return f"EventStream(seed={self.seed}, replica={self.replica})"

    def __eq__(self, other):
        return (
            isinstance(other, EventStream)
            and self.seed == other.seed
            and self.replica == other.replica
        )

    def _philox(self, tag: int, key: tuple[int, ...], block: int) -> np.random.Generator:
        k = np.array([self.seed, mix(tag, self.replica, *key)], dtype=np.uint64)
        ctr = np.array([0, 0, 0, block], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=k, counter=ctr))

    def uniforms(self, tag: int, key: tuple[int, ...], block: int, width: int) -> list[list[float]]:
        """Block of ``BLOCK`` rows of ``width`` uniforms in [0, 1)."""
        ck = (tag, key, block, width)
        rows = self._cache.get(ck)
        if rows is None:
            rows = self._philox(tag, key, block).random((BLOCK, width)).tolist()
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[ck] = rows
        return rows

    def raw_mark(self, cell: tuple[int, ...], counter: int) -> list[float]:
        """Uniform row ``(x_1..x_d, u, r, s)`` of the ``counter``-th proposal in ``cell``."""
        d = len(cell)
        return self.uniforms(PROPOSAL, cell, counter // BLOCK, d + 3)[counter % BLOCK]

    def mark(self, cell: tuple[int, ...], counter: int, origin, side) -> Mark:
        """Proposal mark with location in the cell ``[origin, origin + side)``.

        ``s`` is the waiting time since the previous proposal in the cell,
        exponential with rate equal to the cell volume.
        """
        row = self.raw_mark(cell, counter)
        d = len(cell)
        vol = math.prod(side)
        x = tuple(o + w * a for o, w, a in zip(origin, side, row[:d]))
        return Mark(x, row[d], -math.log1p(-row[d + 1]), -math.log1p(-row[d + 2]) / vol)

    def initial_lifetime(self, index: int) -> float:
        """Unit-exponential lifetime of the ``index``-th initial point."""
        row = self.uniforms(INITIAL, (), index // BLOCK, 1)[index % BLOCK]
        return -math.log1p(-row[0])

    def rng(self, tag: int, *key: int) -> np.random.Generator:
        """General-purpose generator addressed by ``(tag, key)``."""
        return self._philox(tag, key, 0)

    def child(self, tag: int, *key: int) -> "EventStream":
        """Independent stream addressed by ``(tag, key)``, e.g. for nested samplers."""
        return EventStream(mix(self.seed, tag, self.replica, *key), 0)
