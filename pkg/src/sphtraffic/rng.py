"""Counter-based random streams.

Every draw is addressed by ``(seed, domain, ident, counter)``, so results do
not depend on evaluation order or on how runs are split across workers.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

SPAWN = 1
ROUTE = 2


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, domain: int, ident: int, counter: int) -> np.random.Generator:
    """Generator for one addressed block of draws.

    The key holds the seed and a (domain, ident) word; the counter's second
    word holds ``counter`` so draws within a block never reach the next one.
    """
    key_hi = ((domain & 0xFF) << 56) | (int(ident) & ((1 << 56) - 1))
    bitgen = np.random.Philox(key=[check_seed(seed), key_hi],
                              counter=[0, int(counter) & MASK64, 0, 0])
    return np.random.Generator(bitgen)


def uniform(seed: int, domain: int, ident: int, counter: int) -> float:
    return float(stream(seed, domain, ident, counter).random())
