"""Replayable random streams.

One 64-bit root seed plus a tuple of integer / string path components names
every stream in a run. Path components are folded into a 128-bit key with
splitmix64 mixing, and the key drives Philox4x64 — a counter-based generator
whose numpy implementation is fixed and documented — so the same
``(seed, *path)`` reproduces the same draws bit-for-bit on any platform.
Gaussian variates come from numpy's ziggurat ``standard_normal``, which is
likewise deterministic for a given bit stream.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

__all__ = ["derive_key", "stream", "gaussian", "seeded_gaussian"]

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _fold(h: int, component) -> int:
    if isinstance(component, str):
        for byte in component.encode("utf-8"):
            h = _splitmix64(h ^ byte)
        return _splitmix64(h ^ 0x5F)
    if isinstance(component, (int, np.integer)):
        return _splitmix64(h ^ (int(component) & _MASK64))
    raise TypeError(f"stream path components must be int or str, got {type(component)!r}")


def derive_key(seed: int, *path) -> int:
    """128-bit Philox key for (seed, *path); stable across processes."""
    lo = _splitmix64(int(seed) & _MASK64)
    hi = _splitmix64(lo ^ 0xA5A5A5A5A5A5A5A5)
    for component in path:
        lo = _fold(lo, component)
        hi = _fold(hi, component)
    return (hi << 64) | lo


def stream(seed: int, *path) -> np.random.Generator:
    """Independent generator for the given seed and path."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *path)))


def gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """i.i.d. standard normal draws as a float64 array."""
    return rng.standard_normal(size=shape, dtype=np.float64)


def seeded_gaussian(rng: np.random.Generator | int, shape) -> Tensor:
    """Standard normal Tensor; an int argument is taken as a root seed."""
    if isinstance(rng, (int, np.integer)):
        rng = stream(int(rng))
    return Tensor(gaussian(rng, shape))
