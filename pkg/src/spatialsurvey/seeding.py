"""Deterministic per-stage seeds derived from one master seed."""

from __future__ import annotations

import hashlib

import numpy as np


def label_key(*labels) -> int:
    """Stable 64-bit key of a label tuple (floats rendered with 6 significant digits)."""
    parts = [f"{x:.6g}" if isinstance(x, float) else str(x) for x in labels]
    digest = hashlib.sha256("|".join(parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(master_seed: int, *labels) -> int:
    """Seed for the stage named by ``labels``: the label hash mixed with the master seed."""
    key = label_key(*labels)
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, key])
    return int(ss.generate_state(1, np.uint64)[0] >> 1)
