"""Deterministic random streams on top of the Philox counter-based generator.

Every random draw in the toolkit comes from a keyed Philox4x32-10 stream.
Streams are addressed, not sequential: the key encodes ``(seed, purpose,
subject, session)``, so any single stream can be regenerated in isolation
and the full dataset is reproducible from the integer seed alone.

Key layout (two 64-bit words, as accepted by ``numpy.random.Philox``)::

    word 0: seed (unsigned 64-bit)
    word 1: purpose << 48 | subject << 24 | session

Uniform doubles follow numpy's documented construction
``(next_uint64 >> 11) * 2**-53``.  Gaussian draws deliberately avoid the
library's ziggurat sampler and use the Box-Muller transform on those
uniforms, so the exact sample sequence can be replicated in any language::

    r = sqrt(-2 * log(1 - u1)),  z0 = r * cos(2*pi*u2),  z1 = r * sin(2*pi*u2)
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Purpose codes.  New purposes must get new numbers; renumbering breaks
# reproducibility of previously published datasets.
PURPOSE_INIT = 1  # network parameter initialization
PURPOSE_SHUFFLE = 2  # epoch shuffling during training
PURPOSE_SPLIT = 3  # train/val/test assignment
PURPOSE_MAPS = 4  # synthetic cohort maps (mixing matrices, offsets)
PURPOSE_LATENT = 5  # synthetic latent trajectories
PURPOSE_NOISE = 6  # synthetic observation noise
PURPOSE_WAVEFORM = 7  # synthetic waveform shape parameters
PURPOSE_GRADCHECK = 8  # finite-difference coordinate sampling
PURPOSE_TESTDATA = 9  # miscellaneous fixtures


def stream(seed: int, purpose: int, subject: int = 0, session: int = 0) -> np.random.Generator:
    """Return the generator for one addressed stream."""
    if not 0 <= purpose < (1 << 16):
        raise ValueError(f"purpose out of range: {purpose}")
    if not 0 <= subject < (1 << 24):
        raise ValueError(f"subject index out of range: {subject}")
    if not 0 <= session < (1 << 24):
        raise ValueError(f"session index out of range: {session}")
    word1 = (purpose << 48) | (subject << 24) | session
    key = np.array([seed & _MASK64, word1], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normal(gen: np.random.Generator, shape) -> np.ndarray:
    """Standard normals via Box-Muller on Philox uniforms.

    The construction is fixed by this module's docstring; do not swap in
    ``gen.standard_normal``, which uses a different (ziggurat) stream.
    """
    shape = tuple(np.atleast_1d(shape).astype(int)) if not isinstance(shape, tuple) else shape
    n = int(np.prod(shape)) if shape else 1
    pairs = (n + 1) // 2
    u1 = gen.random(pairs)
    u2 = gen.random(pairs)
    radius = np.sqrt(-2.0 * np.log1p(-u1))  # log(1 - u1); 1 - u1 in (0, 1]
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:n].reshape(shape)


def uniform(gen: np.random.Generator, shape, low: float, high: float) -> np.ndarray:
    """Uniform draws in ``[low, high)`` from the documented double stream."""
    return low + (high - low) * gen.random(shape)
