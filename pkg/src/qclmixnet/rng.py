"""Seeded random streams.

Every generator is numpy's Philox4x64-10 counter-based bit generator keyed
with the 128-bit integer ``(stream << 64) | seed``: the low key word is the
user seed, the high word names the consumer. Counters start at zero, so a
(seed, stream) pair fully determines the sequence of raw 64-bit outputs.
"""

import numpy as np

STREAM_SPLIT = 0
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_MIXUP = 3
STREAM_VALIDATION = 4
STREAM_GRADCHECK = 5


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return np.random.Generator(np.random.Philox(key=(stream << 64) | seed))
