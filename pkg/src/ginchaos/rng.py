"""Counter-based random streams keyed by (master seed, stream index, ...)."""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "stream_id"]

_MASK64 = (1 << 64) - 1


def stream_id(master_seed: int, *keys: int) -> tuple[int, ...]:
    """Canonical stream identifier; two ids are equal iff the streams are."""
    return (int(master_seed) & _MASK64,) + tuple(int(k) for k in keys)


def stream(master_seed: int, *keys: int) -> np.random.Generator:
    """Independent Philox generator for the given key path.

    The stream depends only on the key path, never on which worker or in
    which order it is requested, so parallel runs reproduce serial ones.
    """
    sid = stream_id(master_seed, *keys)
    seq = np.random.SeedSequence(entropy=sid[0], spawn_key=sid[1:])
    return np.random.Generator(np.random.Philox(seq))
