"""Named, counter-based random streams.

Each concern (data, augmentation, batching, init) draws from its own Philox
stream keyed by ``(seed, name)``, so switching the guidance mode on or off
never shifts the random numbers seen by the data pipeline.
"""

import zlib

import numpy as np

CONCERNS = ("data", "augment", "batch", "init")


def stream(seed: int, name: str) -> np.random.Generator:
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])
    return np.random.Generator(np.random.Philox(key))


def streams(seed: int) -> dict:
    return {name: stream(seed, name) for name in CONCERNS}
