"""Named random streams.

Every random draw in the package comes from a Philox (counter-based)
generator keyed by ``SeedSequence(seed, spawn_key=(purpose, *index))``.
The purpose codes below are part of the reproducibility contract: changing
one changes every dataset generated with it.

======================  =====  ==========================================
purpose                 code   index
======================  =====  ==========================================
GENOTYPE_FREQUENCIES    1      ()
GENOTYPE_COLUMN         2      (marker,)
EFFECTS                 3      ()
RESIDUALS               4      ()
SIRE_EFFECTS            5      ()
SIRE_RESIDUALS          6      ()
MARKER_SCAN             7      (replicate,)
CHAIN                   8      (chain,)
CHAIN_LOCUS             9      (chain, locus key)
TRUNCATION              10     (block,)
FOLDS                   11     ()
RECIPE                  12     (component,)
======================  =====  ==========================================
"""

from __future__ import annotations

import numpy as np

GENOTYPE_FREQUENCIES = 1
GENOTYPE_COLUMN = 2
EFFECTS = 3
RESIDUALS = 4
SIRE_EFFECTS = 5
SIRE_RESIDUALS = 6
MARKER_SCAN = 7
CHAIN = 8
CHAIN_LOCUS = 9
TRUNCATION = 10
FOLDS = 11
RECIPE = 12

MAX_SEED = 2**64 - 1


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, purpose: int, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, purpose, *index)``."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(purpose, *map(int, index)))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, purpose: int, *index: int) -> int:
    """A 64-bit child seed, for handing a sub-task its own root seed."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(purpose, *map(int, index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
