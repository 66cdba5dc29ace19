"""Counter-based normal draws keyed by (seed, stream, path).

Each (seed, stream) pair keys a Philox generator and path ``i`` owns a
fixed run of its output words, so the draw for a path never depends on
how many other paths are simulated or on how the paths are split among
workers.  Brownian increments use the step index as the stream.
"""
from __future__ import annotations

import numpy as np

INITIAL_STREAM = 2**63
_MASK64 = 2**64 - 1
_WORDS_PER_COUNTER = 4  # Philox4x64 emits four 64-bit words per counter value


def normals(seed: int, stream: int, start: int, count: int, dim: int = 1) -> np.ndarray:
    """Standard normals of shape (count, dim) for paths start..start+count-1.

    Box-Muller on pairs of 53-bit uniforms; a path of dimension ``dim``
    uses 2 * ceil(dim / 2) consecutive words.
    """
    pairs = -(-dim // 2)
    words = 2 * pairs
    bg = np.random.Philox(key=np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64))
    offset = start * words
    if offset >= _WORDS_PER_COUNTER:
        bg.advance(offset // _WORDS_PER_COUNTER)
    gen = np.random.Generator(bg)
    if offset % _WORDS_PER_COUNTER:
        gen.random(offset % _WORDS_PER_COUNTER)
    u = gen.random(count * words).reshape(count, pairs, 2)
    radius = np.sqrt(-2.0 * np.log1p(-u[..., 0]))  # 1 - u lies in (0, 1]
    angle = (2.0 * np.pi) * u[..., 1]
    if dim == 1:
        return radius * np.cos(angle)
    z = np.stack((radius * np.cos(angle), radius * np.sin(angle)), axis=-1).reshape(count, words)
    return z[:, :dim]


def path_normals(seed, stream, start, count, dim=1, antithetic=False):
    """Normals for a range of paths; with ``antithetic`` path 2j+1 mirrors path 2j."""
    if not antithetic:
        return normals(seed, stream, start, count, dim)
    first, last = start // 2, (start + count - 1) // 2
    base = normals(seed, stream, first, last - first + 1, dim)
    idx = np.arange(start, start + count)
    sign = np.where(idx % 2 == 0, 1.0, -1.0)[:, None]
    return base[idx // 2 - first] * sign
