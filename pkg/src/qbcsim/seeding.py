"""Deterministic stream derivation from a root seed.

Every consumer derives its generator as
``default_rng(SeedSequence([root_seed, tag, *indices]))`` where `tag` is the
fixed subcommand tag below and the indices identify the grid point and the
session. Streams are therefore independent and reproducible regardless of
scheduling.
"""

from __future__ import annotations

import numpy as np

SUBCOMMAND_TAGS = {"conceal": 1, "bind": 2, "session": 3, "scan": 4, "audit": 5}


def derive_rng(root_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (root_seed, *key)."""
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), *map(int, key)]))
