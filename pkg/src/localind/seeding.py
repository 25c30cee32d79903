"""Named random streams derived from a single integer seed.

Every random draw in the package comes from ``stream(seed, *names)``.  The
names are hashed with CRC-32 into the ``spawn_key`` of a
:class:`numpy.random.SeedSequence`, so the stream for e.g.
``(seed, "init", 3)`` never changes when unrelated streams are added.

Stream names in use:

* ``"data"``     - training-set generation
* ``"probe"``    - acceptance-rate probe of the rejection sampler
* ``"init", m``  - initial parameters of ensemble member ``m``
* ``"shuffle"``  - mini-batch order
* ``"eval", k``  - uniform test set for rule ``k``
* ``"mi"``       - Gaussian perturbations for mutual-information checks
* ``"grid"``     - Monte Carlo samples for projected grids
* ``"tree", t``  - bootstrap / feature sampling for forest tree ``t``
"""
import zlib

import numpy as np


def _key(name):
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


def seed_sequence(seed, *names):
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(n) for n in names))


def stream(seed, *names):
    """Return a fresh ``Generator`` for the named sub-stream of ``seed``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *names)))


def sub_seed(seed, *names):
    """A 32-bit integer seed for APIs that only accept ints."""
    return int(seed_sequence(seed, *names).generate_state(1)[0])
