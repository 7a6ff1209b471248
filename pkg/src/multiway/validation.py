"""Input validation helpers shared by the estimator classes."""

from __future__ import annotations

import numbers

import numpy as np

from .arrays import MultiwayArray, as_multiway
from .rng import RngStream

__all__ = ["check_tensor", "check_rng", "check_matrix", "check_positive"]


def check_tensor(X, mask=None, min_modes=2):
    """Coerce estimator input to a MultiwayArray with at least ``min_modes``."""
    a = as_multiway(X, mask=mask) if not isinstance(X, MultiwayArray) else X
    if isinstance(X, MultiwayArray) and mask is not None:
        raise ValueError("pass either a MultiwayArray or (array, mask), not both")
    if a.ndim < min_modes:
        raise ValueError(f"need an array with >= {min_modes} modes, got {a.ndim}")
    return a


def check_matrix(X, name="X", dtype=float):
    X = np.asarray(X, dtype=dtype)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got ndim={X.ndim}")
    return X


def check_rng(random_state):
    """Map sklearn-style ``random_state`` to an RngStream.

    None draws a fresh entropy seed (non-reproducible); integers and
    existing streams are deterministic.
    """
    if random_state is None:
        return RngStream(np.random.SeedSequence().entropy & (2**64 - 1))
    if isinstance(random_state, RngStream):
        return random_state
    if isinstance(random_state, numbers.Integral):
        return RngStream(int(random_state))
    raise TypeError(f"random_state must be None, int, or RngStream, got {random_state!r}")


def check_positive(name, value, minimum=1):
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value
