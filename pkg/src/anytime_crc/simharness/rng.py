"""Counter-based random streams addressed by (seed, run, stream, draw index).

Draw ``i`` of a stream is a pure function of its address: it comes from
Philox-4x64 blocks at counter ``i * blocks_per_draw``, so any slice of a stream
can be regenerated independently and in any order.
"""

from __future__ import annotations

import enum

import numpy as np

_TO_UNIT = 2.0**-53


class Stream(enum.IntEnum):
    CALIBRATION = 1
    HELD_OUT = 2
    EVALUATION = 3
    DIAGNOSTIC = 4


def stream_key(seed: int, run: int, stream: int) -> np.ndarray:
    """128-bit Philox key hashed from the address (seed, run, stream)."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(run), int(stream)))
    return ss.generate_state(2, dtype=np.uint64)


def uniforms(seed: int, run: int, stream: int, start: int, count: int, words: int) -> np.ndarray:
    """Open-interval uniforms of shape ``(count, words)`` for draws ``start .. start+count-1``."""
    if count < 0 or start < 0 or words < 1:
        raise ValueError("start, count must be >= 0 and words >= 1")
    blocks = -(-words // 4)
    counter = np.array([start * blocks, 0, 0, 0], dtype=np.uint64)
    gen = np.random.Philox(key=stream_key(seed, run, stream), counter=counter)
    raw = gen.random_raw(count * blocks * 4).reshape(count, blocks * 4)[:, :words]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TO_UNIT
