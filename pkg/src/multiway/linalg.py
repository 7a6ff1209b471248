"""Symmetric positive-definite matrices with cached Cholesky factors."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

__all__ = ["SpdError", "Spd", "as_spd"]


@lru_cache(maxsize=64)
def _eye(n):
    e = np.eye(n)
    e.setflags(write=False)
    return e

# relative jitter levels tried after a failed factorization
_JITTER_SCHEDULE = (1e-10, 1e-8, 1e-6)


class SpdError(ValueError):
    """Raised when a matrix cannot be treated as symmetric positive-definite."""


class Spd:
    """An SPD matrix together with its lower-triangular Cholesky factor.

    The input is symmetrized exactly and, if ``repair`` is on, a small
    diagonal jitter proportional to ``trace/p`` is added on factorization
    failure (retried at increasing levels).  Semidefinite gram matrices
    produced by collinear factors are thereby made solvable; genuinely
    indefinite input still fails.
    """

    def __init__(self, matrix, repair=True):
        A = np.array(matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise SpdError(f"expected a square matrix, got shape {A.shape}")
        scale = np.abs(A).max()
        asym = np.abs(A - A.T).max()
        if asym > 1e-10 * max(scale, 1.0):
            raise SpdError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
        A = (A + A.T) / 2.0
        p = A.shape[0]
        base = np.trace(A) / p
        if not np.isfinite(base):
            raise SpdError("matrix has non-finite entries")
        chol = None
        jitters = (0.0,) + _JITTER_SCHEDULE if repair else (0.0,)
        for level in jitters:
            try:
                trial = A if level == 0.0 else A + (level * base) * np.eye(p)
                chol = np.linalg.cholesky(trial)
                A = trial
                break
            except np.linalg.LinAlgError:
                continue
        if chol is None:
            raise SpdError("matrix is not positive definite (repair exhausted)")
        A.setflags(write=False)
        chol.setflags(write=False)
        self.matrix = A
        self.chol = chol

    @classmethod
    def _wrap(cls, matrix, chol):
        # fast path for matrices we built ourselves: no validation, no copy
        obj = object.__new__(cls)
        obj.matrix = matrix
        obj.chol = chol
        return obj

    @property
    def dim(self):
        return self.matrix.shape[0]

    def solve(self, b):
        """Solve ``A x = b`` using the cached factor."""
        return cho_solve((self.chol, True), np.asarray(b, dtype=float))

    def inv(self):
        """Dense inverse (symmetrized)."""
        inv = self.solve(_eye(self.dim))
        return (inv + inv.T) / 2.0

    def inv_spd(self):
        """Inverse wrapped as an Spd, factored directly."""
        inv = self.inv()
        try:
            return Spd._wrap(inv, np.linalg.cholesky(inv))
        except np.linalg.LinAlgError:
            return Spd(inv)

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def solve_lower(self, b):
        """Solve ``L x = b`` with the lower Cholesky factor only."""
        return solve_triangular(self.chol, np.asarray(b, dtype=float), lower=True)

    def __repr__(self):
        return f"Spd(dim={self.dim})"


def as_spd(matrix, repair=True):
    """Pass through an Spd or build one from a raw matrix."""
    if isinstance(matrix, Spd):
        return matrix
    return Spd(matrix, repair=repair)
