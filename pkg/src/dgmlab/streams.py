"""Keyed counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(seed, tag, group, index)``, so a path's stream is the same
whether it is simulated alone, in a batch, or in a different order.
"""

import numpy as np

INIT_PARTICLE = 1
INIT_MEANFIELD = 2
BM_PARTICLE = 3
BM_MEANFIELD = 4
INIT_INDEPENDENT = 5


def keyed_generator(seed: int, tag: int, group: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), int(tag), int(group), int(index)])
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def keyed_normals(seed, tag, group, indices, shape) -> np.ndarray:
    """Standard normals, one independent block of ``shape`` per index."""
    indices = np.atleast_1d(indices)
    out = np.empty((indices.size, *shape))
    for row, idx in enumerate(indices):
        out[row] = keyed_generator(seed, tag, group, idx).standard_normal(shape)
    return out


def keyed_uniforms(seed, tag, group, indices, shape) -> np.ndarray:
    indices = np.atleast_1d(indices)
    out = np.empty((indices.size, *shape))
    for row, idx in enumerate(indices):
        out[row] = keyed_generator(seed, tag, group, idx).random(shape)
    return out
