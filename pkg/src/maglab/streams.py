"""Named, reproducible random substreams derived from one global seed."""
import zlib

import numpy as np


def substream(seed, name):
    """Generator for the purpose ``name``; independent of call order."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))
