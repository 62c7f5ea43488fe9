import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def substream(seed: int, *names) -> np.random.Generator:
    """Independent generator for ``(seed, *names)``.

    Each random source (data, init, batching, random-pruning) draws from its own
    key, so changing how much one consumes never shifts the others.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.default_rng(ss)
