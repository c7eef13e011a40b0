"""Named counter-based random streams.

Every stochastic operation in the package draws from an explicit stream
obtained via ``substream(seed, *tags)``.  Streams are backed by the Philox
counter-based bit generator, so a (seed, tags) pair maps to the same
sequence on every platform and the streams for different tags are
statistically independent.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(seed: int, *tags) -> np.random.Generator:
    """Return an independent generator for the given seed and tag path.

    Tags may be strings or integers; they are hashed into the Philox key
    together with the seed.
    """
    label = "/".join(str(t) for t in tags)
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    low = int.from_bytes(digest[:8], "little")
    key = ((int(seed) & _MASK64) << 64) | low
    return np.random.Generator(np.random.Philox(key=key))
