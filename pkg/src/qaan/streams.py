"""Named, independent random streams derived from one experiment seed.

A stream is ``numpy.random.Generator(PCG64(SeedSequence([seed, key])))`` where
``key`` is the CRC-32 of the stream name.  The mapping is stable across
processes and Python versions (no reliance on ``hash()``), so a given
``(seed, name)`` pair always reproduces the same sequence, and streams with
different names are statistically independent.
"""

from __future__ import annotations

import zlib
from typing import Iterable

import numpy as np

STREAM_NAMES = ("data", "rbm", "qbm", "nn", "pimc", "eval")


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def split(seed: int, name: str) -> np.random.Generator:
    """Return the generator for stream ``name`` of experiment ``seed``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence([int(seed), stream_key(name)])
    return np.random.Generator(np.random.PCG64(ss))


def make_streams(seed: int, names: Iterable[str] = STREAM_NAMES) -> dict[str, np.random.Generator]:
    return {name: split(seed, name) for name in names}


def get_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def set_state(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state
