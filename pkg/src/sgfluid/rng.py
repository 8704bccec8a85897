"""Reproducible per-trajectory random streams.

Every trajectory owns a PCG64 generator keyed by ``(seed, namespace, index)``
through :class:`numpy.random.SeedSequence` spawn keys, so two ensembles that
use different namespaces never share draws, and the draws of one path do not
depend on how many other paths are simulated alongside it.
"""

import numpy as np

# namespaces used by the experiment drivers
NS_SIMULATE = 0
NS_ENSEMBLE_A = 1
NS_ENSEMBLE_B = 2
NS_FOLLOWER = 3
NS_THETA = 4
NS_DICTIONARY = 5
NS_BOOTSTRAP = 6
NS_FIELD = 7


def stream(seed, namespace=0, index=0):
    """Generator for one trajectory."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(namespace), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def streams(seed, namespace, n, start=0):
    return [stream(seed, namespace, start + i) for i in range(n)]


class NormalBlocks:
    """Buffered standard normals for a batch of streams.

    Each call to :meth:`next` returns an array of shape ``(n_streams, *shape)``.
    Draws are taken from each generator in blocks of ``block`` steps; since a
    block is just consecutive draws of the same generator, the values are
    identical to drawing one step at a time.
    """

    def __init__(self, generators, shape, block=256):
        self.generators = list(generators)
        self.shape = tuple(shape)
        self.block = int(block)
        self._buf = None
        self._pos = self.block

    def next(self):
        if self._pos >= self.block:
            self._buf = np.stack(
                [g.standard_normal((self.block,) + self.shape) for g in self.generators], axis=1
            )
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out
