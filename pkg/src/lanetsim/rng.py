"""Deterministic RNG substream derivation.

Every random draw in a run comes from a named substream derived from the
master seed, so adding instrumentation or reordering unrelated code
never perturbs results.  Derivation goes through blake2b rather than the
built-in hash(), which is salted per process and would break
cross-process reproducibility.
"""
from __future__ import annotations

import hashlib
import random


def child_seed(master: int, *tags) -> int:
    """Stable 64-bit seed for the substream named by (master, *tags)."""
    text = repr((master,) + tags).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "big")


def substream(master: int, *tags) -> random.Random:
    """Fresh generator for a named substream; same arguments, same stream."""
    return random.Random(child_seed(master, *tags))
