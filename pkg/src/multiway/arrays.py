"""Dense multiway arrays, factor sets, and multilinear composition kernels.

Conventions used throughout the package:

* Array values are stored C-contiguous (last index fastest).
* Modes are indexed 0-based in code; file formats use 1-based indices.
* The mode-``k`` fiber matrix enumerates the non-``k`` indices in the
  cyclic order ``(k+1, ..., K-1, 0, ..., k-1)`` with the first of these
  varying fastest.  :func:`fibers` and :func:`khatri_rao_skip` use the
  same enumeration, so column ``c`` of the fiber matrix always pairs
  with row ``c`` of the Khatri-Rao matrix.
"""

from __future__ import annotations

import string

import numpy as np

__all__ = [
    "ShapeError",
    "MultiwayArray",
    "FactorSet",
    "as_multiway",
    "compose",
    "fibers",
    "refold",
    "khatri_rao_skip",
    "sq_norm",
    "hadamard",
]


class ShapeError(ValueError):
    """Raised when array or factor dimensions are inconsistent."""


class MultiwayArray:
    """A dense K-way real array with an optional missing-cell mask.

    Parameters
    ----------
    values : array-like, ndim >= 2
        Cell values.  Cells covered by ``mask`` may hold any value
        (including NaN); they are never read.
    mask : boolean array-like or None
        True marks a missing cell.  None means fully observed.

    Instances are read-only after construction and safe to share.
    """

    def __init__(self, values, mask=None):
        values = np.array(values, dtype=float, order="C")
        if values.ndim < 2:
            raise ShapeError(f"need at least 2 modes, got ndim={values.ndim}")
        if min(values.shape) < 1:
            raise ShapeError(f"every mode must have length >= 1, got {values.shape}")
        if mask is not None:
            mask = np.array(mask, dtype=bool, order="C")
            if mask.shape != values.shape:
                raise ShapeError(
                    f"mask shape {mask.shape} != values shape {values.shape}"
                )
            if not mask.any():
                mask = None
        observed = values if mask is None else values[~mask]
        if not np.isfinite(observed).all():
            raise ValueError("observed cells must be finite")
        values.setflags(write=False)
        if mask is not None:
            mask.setflags(write=False)
        self.values = values
        self.mask = mask

    @classmethod
    def from_missing_cells(cls, values, missing):
        """Build from an explicit collection of missing index tuples."""
        values = np.asarray(values, dtype=float)
        mask = np.zeros(values.shape, dtype=bool)
        for idx in missing:
            mask[tuple(idx)] = True
        return cls(values, mask)

    @property
    def dims(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def n_observed(self):
        if self.mask is None:
            return self.values.size
        return int(self.values.size - self.mask.sum())

    def filled(self, fill_value=0.0):
        """Dense values with masked cells replaced by ``fill_value``."""
        if self.mask is None:
            return self.values
        return np.where(self.mask, fill_value, self.values)

    def observed_values(self):
        """1-d vector of the observed cell values."""
        if self.mask is None:
            return self.values.ravel()
        return self.values[~self.mask]

    def __repr__(self):
        missing = 0 if self.mask is None else int(self.mask.sum())
        return f"MultiwayArray(dims={self.dims}, missing={missing})"


def as_multiway(a, mask=None):
    """Coerce an array-like (or pass through a MultiwayArray) for kernel use."""
    if isinstance(a, MultiwayArray):
        if mask is not None:
            raise ValueError("cannot add a mask to an existing MultiwayArray")
        return a
    return MultiwayArray(a, mask=mask)


class FactorSet:
    """K factor matrices, the k-th of shape ``m_k x R``, sharing rank R."""

    def __init__(self, factors):
        mats = [np.array(f, dtype=float, order="C") for f in factors]
        if len(mats) < 2:
            raise ShapeError("need at least 2 factor matrices")
        for k, f in enumerate(mats):
            if f.ndim != 2:
                raise ShapeError(f"factor {k} must be a matrix, got ndim={f.ndim}")
        ranks = {f.shape[1] for f in mats}
        if len(ranks) != 1:
            raise ShapeError(f"factors disagree on rank: {sorted(ranks)}")
        if ranks.pop() < 1:
            raise ShapeError("rank must be >= 1")
        for f in mats:
            f.setflags(write=False)
        self.factors = tuple(mats)

    @property
    def rank(self):
        return self.factors[0].shape[1]

    @property
    def dims(self):
        return tuple(f.shape[0] for f in self.factors)

    def __len__(self):
        return len(self.factors)

    def __iter__(self):
        return iter(self.factors)

    def __getitem__(self, k):
        return self.factors[k]

    def replace(self, k, new_factor):
        """Return a new FactorSet with factor ``k`` swapped out."""
        mats = list(self.factors)
        mats[k] = new_factor
        return FactorSet(mats)

    def __repr__(self):
        return f"FactorSet(dims={self.dims}, rank={self.rank})"


def _as_factor_list(factors):
    if isinstance(factors, FactorSet):
        return list(factors.factors)
    return [np.asarray(f, dtype=float) for f in factors]


def compose_values(factors):
    """Dense array of the multilinear composition, as a plain ndarray."""
    mats = _as_factor_list(factors)
    K = len(mats)
    if K > 25:
        raise ShapeError("compose supports at most 25 modes")
    letters = string.ascii_lowercase[:K]
    spec = ",".join(f"{c}z" for c in letters) + "->" + letters
    return np.einsum(spec, *mats)


def compose(factors):
    """Compose factor matrices into the dense rank-R array they represent.

    Cell ``(i_1, ..., i_K)`` equals ``sum_r prod_k U[k][i_k, r]``.
    """
    return MultiwayArray(compose_values(factors))


def _fiber_axis_order(K, mode):
    return [mode] + list(range(mode + 1, K)) + list(range(mode))


def fibers(a, mode):
    """Mode-``mode`` fiber matrix of shape ``(m_k, prod of other dims)``.

    Column ``c`` holds the fiber obtained by fixing the other indices at
    the ``c``-th combination in canonical order (see module docstring).
    Masked cells are returned as stored; callers that must ignore them
    should combine with the unfolded mask.
    """
    a = as_multiway(a)
    K = a.ndim
    if not 0 <= mode < K:
        raise ShapeError(f"mode {mode} out of range for a {K}-way array")
    return unfold_values(a.values, mode)


def unfold_values(values, mode):
    """Unfold a plain ndarray along ``mode`` in the canonical column order."""
    order = _fiber_axis_order(values.ndim, mode)
    return np.transpose(values, order).reshape(values.shape[mode], -1, order="F")


def refold(matrix, dims, mode):
    """Inverse of :func:`fibers`: rebuild the dense array from a fiber matrix."""
    dims = tuple(dims)
    K = len(dims)
    order = _fiber_axis_order(K, mode)
    shape = [dims[ax] for ax in order]
    arr = np.asarray(matrix).reshape(shape, order="F")
    return np.transpose(arr, np.argsort(order))


def khatri_rao_skip(factors, skip):
    """Row-wise product of all factors except ``skip``, in canonical order.

    Row ``c`` is the Hadamard product of the factor rows selected by the
    ``c``-th combination of non-``skip`` indices, matching the column
    order of ``fibers(a, skip)``.
    """
    mats = _as_factor_list(factors)
    K = len(mats)
    if not 0 <= skip < K:
        raise ShapeError(f"mode {skip} out of range for {K} factors")
    # slowest-varying factor first; the factor right after ``skip`` is fastest
    slow_to_fast = list(range(skip - 1, -1, -1)) + list(range(K - 1, skip, -1))
    out = mats[slow_to_fast[0]]
    for k in slow_to_fast[1:]:
        out = (out[:, None, :] * mats[k][None, :, :]).reshape(-1, out.shape[1])
    return out


def sq_norm(a):
    """Sum of squares over observed cells."""
    a = as_multiway(a)
    return float(np.sum(a.observed_values() ** 2))


def hadamard(A, B):
    """Elementwise product of two equal-shape matrices."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ShapeError(f"shape mismatch: {A.shape} vs {B.shape}")
    return A * B
