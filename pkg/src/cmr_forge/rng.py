"""Named, splittable random streams.

Every stochastic step in the toolkit draws from a :class:`RngStream` derived
from one master seed, so whole pipelines replay bit-for-bit.  Streams are
backed by the counter-based Philox generator with the 128-bit key
``(master_seed, stream_id)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_id_for(name: str) -> int:
    """Stable 64-bit id for a stream name (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "master_seed", int(self.master_seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = self.master_seed | (self.stream_id << 64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, name: str | int) -> "RngStream":
        """Derive an independent sub-stream.

        Children are keyed on the parent's id and the name, so
        ``s.child("a").child("b")`` and ``s.child("b").child("a")`` differ.
        """
        label = name if isinstance(name, str) else f"#{int(name)}"
        sid = stream_id_for(f"{self.stream_id:016x}/{label}")
        return RngStream(self.master_seed, sid)


def as_generator(rng: "RngStream | np.random.Generator | int | None") -> np.random.Generator:
    """Accept the handful of things callers pass around as "an rng"."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if rng is None:
        raise ValueError("an explicit RNG stream or seed is required")
    return RngStream(int(rng)).generator()
