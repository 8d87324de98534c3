"""Deterministic hashing shared by the encoder and the generator policy.

Everything here must be stable across runs, platforms, and Python versions,
so the builtin salted ``hash()`` is never used.
"""

from __future__ import annotations

import hashlib

import numpy as np

# 64-bit FNV prime, used as the multiplier of the rolling polynomial hash.
_ROLL_PRIME = np.uint64(1099511628211)


def stable_u64(data: bytes) -> int:
    """64-bit digest of ``data``, identical on every platform."""
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def stable_bucket(data: bytes, n_buckets: int) -> int:
    return stable_u64(data) % n_buckets


def derive_seed(*parts) -> int:
    """Fold arbitrary labels into a 63-bit seed for a child RNG stream."""
    key = "\x1f".join(str(p) for p in parts)
    return stable_u64(key.encode("utf-8")) & 0x7FFFFFFFFFFFFFFF


def char_ngram_buckets(text: str, sizes: tuple[int, ...], n_buckets: int) -> np.ndarray:
    """Bucket ids of every character n-gram of the lowercased text.

    One entry per n-gram occurrence (duplicates preserved).  Uses a rolling
    polynomial hash over the UTF-8 bytes with wrapping uint64 arithmetic,
    which keeps the whole computation vectorized and platform-stable.
    """
    raw = np.frombuffer(text.lower().encode("utf-8"), dtype=np.uint8).astype(np.uint64)
    chunks = []
    for n in sizes:
        m = raw.size - n + 1
        if m <= 0:
            continue
        h = np.zeros(m, dtype=np.uint64)
        for j in range(n):
            h = h * _ROLL_PRIME + raw[j : j + m]
        chunks.append(h % np.uint64(n_buckets))
    if not chunks:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(chunks).astype(np.int64)


def sha256_hex(*chunks: bytes) -> str:
    digest = hashlib.sha256()
    for chunk in chunks:
        digest.update(chunk)
    return digest.hexdigest()
