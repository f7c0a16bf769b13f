"""Deterministic sub-seed derivation.

All randomness in the pipeline flows from a single root seed; component seeds
are derived by stable hashing of (seed, label, ...) so that adding or removing
parallelism cannot change results.
"""

import hashlib


def derive_seed(seed: int, *labels) -> int:
    """Derive a 63-bit sub-seed from a root seed and a purpose label."""
    key = repr((int(seed),) + tuple(str(x) for x in labels)).encode()
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "big") >> 1
