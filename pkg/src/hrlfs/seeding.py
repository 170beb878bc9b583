"""Deterministic seed derivation for independent sub-computations.

Every stochastic component (GMM fits, forest trees, per-step action draws,
per-agent learning) gets its own stream derived from the run seed plus a
stable tag, so results do not depend on execution order.
"""

from __future__ import annotations

import zlib

import numpy as np


def _as_words(parts) -> list[int]:
    words: list[int] = []
    for part in parts:
        if isinstance(part, (int, np.integer)):
            value = int(part)
            if value < 0:
                value = -value * 2 + 1
            while True:
                words.append(value & 0xFFFFFFFF)
                value >>= 32
                if value == 0:
                    break
        elif isinstance(part, str):
            words.append(zlib.crc32(part.encode("utf-8")))
        elif isinstance(part, (bytes, bytearray)):
            words.append(zlib.crc32(bytes(part)))
        else:
            raise TypeError(f"cannot derive seed from {type(part).__name__}")
    return words


def derive_rng(seed: int, *tags) -> np.random.Generator:
    """Generator seeded by (seed, *tags); identical inputs give identical streams."""
    return np.random.default_rng(np.random.SeedSequence(_as_words([seed, *tags])))


def subseed(seed: int, *tags) -> int:
    """Stable 63-bit integer seed derived from (seed, *tags)."""
    seq = np.random.SeedSequence(_as_words([seed, *tags]))
    return int(seq.generate_state(1, np.uint64)[0] >> 1)
