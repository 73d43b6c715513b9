"""Counter-based random streams.

Every primitive variable ``(kind, agent, t)`` owns a Philox key derived from
the master seed.  Trial ``k`` reads a fixed block range of that stream, so a
chunk of trials ``[start, start + count)`` can be generated on its own and
reproduces exactly the numbers a single sequential pass would have produced.
"""

from __future__ import annotations

import numpy as np

__all__ = ["KINDS", "stream_key", "uniforms", "standard_normals"]

KINDS = {"x1": 0, "w": 1, "v": 2, "pf": 3, "aux": 4}

_WORDS_PER_BLOCK = 4  # Philox4x64 emits four 64-bit words per counter value


def stream_key(seed: int, kind: str, agent: int, t: int) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed), KINDS[kind], int(agent), int(t)])
    return ss.generate_state(2, np.uint64)


def uniforms(seed: int, kind: str, agent: int, t: int, start: int, count: int, per_trial: int) -> np.ndarray:
    """Uniforms on ``(0, 1)`` of shape ``(count, per_trial)`` for trials ``start..start+count-1``.

    Values are ``(k + 0.5) / 2**53`` for 53-bit integers ``k``, so neither
    endpoint is ever produced and inverse-CDF transforms stay finite.
    """
    if per_trial == 0 or count == 0:
        return np.empty((count, per_trial))
    blocks = -(-per_trial // _WORDS_PER_BLOCK)
    bitgen = np.random.Philox(key=stream_key(seed, kind, agent, t), counter=start * blocks)
    raw = bitgen.random_raw(count * blocks * _WORDS_PER_BLOCK)
    raw = raw.reshape(count, blocks * _WORDS_PER_BLOCK)[:, :per_trial]
    return ((raw >> np.uint64(11)).astype(float) + 0.5) / 2.0**53


def standard_normals(seed, kind, agent, t, start, count, per_trial) -> np.ndarray:
    from scipy.special import ndtri

    return ndtri(uniforms(seed, kind, agent, t, start, count, per_trial))
