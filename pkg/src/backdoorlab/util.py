"""Seed derivation and content hashing.

All randomness flows from integer root seeds through
``numpy.random.SeedSequence``; per-object streams are derived from
(seed, stream keys...) tuples so results are independent of batching
and execution order.  Philox is used as the bit generator: it is
counter-based, so a stream can be reconstructed from its key alone.
"""

import hashlib
import json

import numpy as np

_MASK64 = (1 << 64) - 1


def key_to_int(key):
    """Map an arbitrary string/int key to a stable 64-bit integer."""
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK64
    digest = hashlib.sha256(str(key).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed, *stream_keys):
    """Deterministic generator for (seed, *keys); independent across keys."""
    entropy = [key_to_int(seed)] + [key_to_int(k) for k in stream_keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed, *stream_keys):
    """A 63-bit child seed for handing to APIs that take plain ints."""
    entropy = [key_to_int(seed)] + [key_to_int(k) for k in stream_keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0]) & (2**63 - 1)


def gaussian_noise(seed, stream, sample_index, shape, sigma, dtype=np.float32):
    """Counter-style noise draw keyed by (seed, stream, sample_index)."""
    rng = rng_for(seed, stream, sample_index)
    return (rng.standard_normal(shape) * sigma).astype(dtype)


def content_hash(*parts):
    """Short stable hash of a mix of bytes / strings / arrays / jsonables."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        elif isinstance(part, np.ndarray):
            h.update(str(part.dtype).encode())
            h.update(str(part.shape).encode())
            h.update(np.ascontiguousarray(part).tobytes())
        elif isinstance(part, str):
            h.update(part.encode())
        else:
            h.update(json.dumps(part, sort_keys=True, default=str).encode())
        h.update(b"\x00")
    return h.hexdigest()[:16]


def batches(n, batch_size):
    for start in range(0, n, batch_size):
        yield start, min(start + batch_size, n)
