"""Seeded substreams.

Work is cut into fixed-size blocks and each block owns a child of one root
``SeedSequence``.  Item ``i`` therefore always sees the same draws for a given
root seed, whatever the total item count or the order blocks are processed in.
"""

import numpy as np

BLOCK_SIZE = 1024


def root_seed(seed):
    """Resolve ``seed`` (int, None or SeedSequence) into an int that reproduces it."""
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.entropy)
    if seed is None:
        return int(np.random.SeedSequence().entropy)
    return int(seed)


def blocks(seed, n_items, block_size=BLOCK_SIZE):
    """Yield ``(start, stop, generator)`` covering ``range(n_items)``."""
    n_blocks = -(-n_items // block_size)
    children = np.random.SeedSequence(root_seed(seed)).spawn(n_blocks)
    for b, child in enumerate(children):
        start = b * block_size
        yield start, min(start + block_size, n_items), np.random.Generator(np.random.Philox(child))


def spawn(seed, n):
    """``n`` independent generators derived from one root seed."""
    children = np.random.SeedSequence(root_seed(seed)).spawn(n)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def spawn_seeds(seed, n):
    """``n`` independent integer seeds derived from one root seed."""
    children = np.random.SeedSequence(root_seed(seed)).spawn(n)
    return [int(c.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]
