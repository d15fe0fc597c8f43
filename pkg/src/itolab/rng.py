"""Counter-based, splittable random streams.

Every stochastic routine in the package receives an :class:`RngStream`, a
value type identifying one node of a seed tree: a 64-bit root seed plus a
hierarchical path (trajectory index, step index, role tag, ...).  Disjoint
paths give statistically independent streams; the same (root_seed, path)
reproduces identical draws bit-for-bit, on any platform and regardless of
how work is scheduled across workers.

Streams are backed by numpy's Philox counter-based generator keyed through
``SeedSequence(root_seed, spawn_key=path)``.  String path components are
hashed with CRC-32 so role tags stay stable across runs.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np


def _normalize(part: int | str) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream path components must be nonnegative, got {part}")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"stream path component must be int or str, got {type(part)!r}")


@dataclass(frozen=True)
class RngStream:
    """One node of a reproducible seed tree."""

    root_seed: int
    path: tuple[int, ...] = field(default=())

    def child(self, *parts: int | str) -> "RngStream":
        """Derive a sub-stream; independent of all siblings."""
        return RngStream(self.root_seed, self.path + tuple(_normalize(p) for p in parts))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream.

        Calling this twice on the same stream yields identical draw
        sequences; the stream itself is never mutated.
        """
        ss = np.random.SeedSequence(self.root_seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))
