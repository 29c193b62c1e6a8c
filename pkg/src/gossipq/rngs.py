"""Named deterministic random substreams.

One master seed fans out into independent named streams so that adding a
new consumer never perturbs the draws seen by existing ones.
"""

import zlib

import numpy as np


def substream(master_seed: int, name: str) -> np.random.Generator:
    """Return an independent generator derived from (master_seed, name)."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([master_seed & 0xFFFFFFFFFFFFFFFF, tag]))
