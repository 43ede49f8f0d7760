"""Seeded random streams.

Every consumer of randomness asks for a stream by ``(seed, *ids)``. The ids
are folded into a :class:`numpy.random.SeedSequence` and drive a Philox
(counter-based) bit generator, so two different id tuples never share a
stream and results do not depend on the order in which streams are created.

Stream ids used by the package:

* ``(seed, 0, replica)``            data generation for one replica
* ``(seed, 1, replica, k, e)``      filter randomization for one sweep cell
* ``(seed, 2, replica, k, e, block, restart)``  EM restarts
"""

import numpy as np

DATA = 0
FILTER = 1
EM = 2


def stream(seed, *ids):
    """Return an independent generator for the stream ``(seed, *ids)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(i) for i in ids)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
