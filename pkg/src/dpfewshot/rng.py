"""Deterministic named RNG substreams derived from one master seed.

Every noise site in the pipeline draws from its own stream, keyed by a
path of names/indices (e.g. ``("demo", 3, "token", 17, "mean")``).  Streams
are independent and stable across runs, so an early loop break at one
token position can never shift the draws consumed at another.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


def _path_words(path: tuple) -> list[int]:
    """Hash a substream path to 32-bit words usable as SeedSequence entropy."""
    text = "/".join(str(p) for p in path)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "big") for i in range(0, 16, 4)]


def substream(master_seed: int, *path) -> np.random.Generator:
    """Return a Generator for the substream named by ``path``.

    The mapping (master_seed, path) -> stream is a pure function; calling
    twice yields independent Generator objects that produce identical draws.
    """
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF] + _path_words(path)
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class NoiseStreams:
    """The three noise sites of one aggregation call.

    goodradius: scalar draws inside the DP binary search
    mean:       one K-vector draw per noisy mean estimate
    check:      one scalar draw per coverage check
    """

    goodradius: np.random.Generator
    mean: np.random.Generator
    check: np.random.Generator

    @classmethod
    def from_seed(cls, master_seed: int, *path) -> "NoiseStreams":
        return cls(
            goodradius=substream(master_seed, *path, "goodradius"),
            mean=substream(master_seed, *path, "mean"),
            check=substream(master_seed, *path, "check"),
        )


def resolve_streams(rng) -> NoiseStreams:
    """Accept either a NoiseStreams bundle or a bare integer seed."""
    if isinstance(rng, NoiseStreams):
        return rng
    if isinstance(rng, (int, np.integer)):
        return NoiseStreams.from_seed(int(rng))
    raise TypeError(f"expected NoiseStreams or int seed, got {type(rng).__name__}")
