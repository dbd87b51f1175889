"""Named random streams derived from the single experiment seed.

Every consumer asks for ``stream(seed, label, ...)``; the labels are hashed
into the seed sequence, so streams are independent of call order. Labels in
use: ``prototypes``, ``detector``, ``decoder``, ``video/<task>/<split>/<i>``,
``prompts/<task>``, ``heads/<task>``, ``sampling/<task>``,
``shuffle/<task>/<epoch>``.
"""
import zlib

import numpy as np


def stream(seed: int, *labels) -> np.random.Generator:
    keys = [zlib.crc32(str(label).encode()) for label in labels]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *keys]))
