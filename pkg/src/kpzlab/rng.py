"""Seeded counter-based random streams.

Every stochastic routine in the package draws from a Philox stream keyed by a
:class:`Seed`.  Replicates never share generator state, so results merged by
replicate index do not depend on how work was scheduled.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from typing import Union

import numpy as np


@dataclass(frozen=True)
class Seed:
    experiment: int
    replicate: int = 0
    stream: int = 0

    def __post_init__(self):
        for name in ("experiment", "replicate", "stream"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"Seed.{name} must be a non-negative integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        entropy = [int(self.experiment), int(self.replicate), int(self.stream)]
        key = np.random.SeedSequence(entropy).generate_state(2, np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, replicate: int | None = None, stream: int | None = None) -> "Seed":
        changes = {}
        if replicate is not None:
            changes["replicate"] = replicate
        if stream is not None:
            changes["stream"] = stream
        return replace(self, **changes)


SeedLike = Union[Seed, int, np.random.Generator]


def as_generator(seed: SeedLike) -> np.random.Generator:
    """Turn a Seed, a bare integer, or an existing Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, Seed):
        return seed.generator()
    if isinstance(seed, (int, np.integer)):
        return Seed(int(seed)).generator()
    raise TypeError(f"cannot build a random stream from {type(seed).__name__}")


def stream_id(name: str) -> int:
    """Stable integer tag for a named purpose (used to decorrelate streams)."""
    return zlib.crc32(name.encode("utf-8"))
