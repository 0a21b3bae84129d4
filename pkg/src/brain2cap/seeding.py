"""Named random sub-streams derived from one master seed.

Each stage (init, shuffle, split, data) draws from its own stream so that
changing one stage never perturbs the others.
"""

import zlib

import numpy as np

STREAMS = ("data", "init", "shuffle", "split", "noise")


def stream(seed, name, *extra):
    if name not in STREAMS:
        raise KeyError(f"unknown random stream {name!r}")
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())] + [int(e) for e in extra]
    return np.random.default_rng(key)
