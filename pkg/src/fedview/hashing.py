"""64-bit FNV-1a hashing.

One hash function serves three jobs: categorical feature encoding, registry and
model-config digests, and derived seed streams. FNV-1a is used because it is
trivially portable (a browser client can reproduce it with BigInt arithmetic)
and has published reference vectors.
"""

from .errors import InputError

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: "bytes | str") -> int:
    """FNV-1a digest of `data` (strings are UTF-8 encoded)."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def hash_encode(value: str, buckets: int) -> int:
    """Map a string to a stable bucket index in [0, buckets).

    Total function: every string maps somewhere, identically on every platform.
    """
    if buckets < 2:
        raise InputError(f"hash_encode needs at least 2 buckets, got {buckets}")
    return fnv1a64(value) % buckets


def derive_seed(*parts) -> int:
    """Stable 64-bit seed derived from a tuple of ints/strings.

    Used to give each user, client, and round its own reproducible RNG stream.
    """
    return fnv1a64(":".join(str(p) for p in parts))
