"""Derivation of independent random streams from one master seed.

A stream is identified by the master seed plus a tuple of purpose strings
(module name, purpose, fold index, ...). The tuple is hashed with SHA-256 so
that adding a new consumer never shifts the draws of existing ones.
"""
import hashlib

import numpy as np


def derive_seed(master: int, *purpose) -> int:
    """Return a 64-bit seed for the stream named by ``purpose``."""
    text = "\x1f".join([str(int(master))] + [str(p) for p in purpose])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(master: int, *purpose) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *purpose))
