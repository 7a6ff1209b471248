"""Alternating least squares for rank-R multilinear decomposition.

Each mode update solves the normal equations ``U_k = L Q^-1`` where ``Q``
is the Hadamard product of the other modes' gram matrices and ``L`` is the
cross moment between the mode-k fibers and the Khatri-Rao rows of the
other factors.  With missing cells the normal equations are assembled per
row of the factor, dropping the masked fiber entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arrays import (
    FactorSet,
    as_multiway,
    compose_values,
    khatri_rao_skip,
    unfold_values,
)
from .linalg import Spd, SpdError
from .rng import RngStream

__all__ = [
    "AlsConfig",
    "AlsResult",
    "UpdateError",
    "gram_hadamard",
    "cross_moment",
    "conditional_update",
    "als_single",
    "als_fit",
    "rank_r_approx",
]


class UpdateError(RuntimeError):
    """A conditional least-squares update could not be solved."""


@dataclass
class AlsConfig:
    rank: int
    n_starts: int = 20
    rel_tol: float = 1e-6
    max_sweeps: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")


@dataclass
class AlsResult:
    factors: FactorSet
    rss: float
    sweeps: int
    converged: bool
    rss_history: np.ndarray = field(repr=False, default=None)
    start_index: int = 0

    def relative_residual(self, a):
        """RSS divided by the squared norm of the observed data."""
        from .arrays import sq_norm

        denom = sq_norm(a)
        return self.rss / denom if denom > 0 else 0.0


def _gram_matrix(factors, skip):
    mats = factors.factors if isinstance(factors, FactorSet) else list(factors)
    Q = None
    for j, f in enumerate(mats):
        if j == skip:
            continue
        G = f.T @ f
        Q = G if Q is None else Q * G
    return Q


def gram_hadamard(factors, skip):
    """Hadamard product of ``U_j^T U_j`` over all modes ``j != skip``."""
    return Spd(_gram_matrix(factors, skip))


def cross_moment(a, factors, mode):
    """Cross moment ``L = fibers(a, mode) @ Z`` with masked cells dropped.

    ``Z`` is the canonical-order Khatri-Rao matrix of the other factors;
    masked fiber entries contribute zero to the sum.
    """
    a = as_multiway(a)
    Z = khatri_rao_skip(factors, mode)
    Y = unfold_values(a.filled(0.0), mode)
    if Y.shape[1] != Z.shape[0]:
        raise ValueError(
            f"array dims {a.dims} incompatible with factor dims along mode {mode}"
        )
    return Y @ Z


def _row_grams(observed, Z):
    # per-row normal-equation matrices: Q_i = sum_c obs[i,c] z_c z_c^T
    return np.einsum("ic,cr,cs->irs", observed, Z, Z, optimize=True)


def conditional_update(a, factors, mode):
    """Conditional least-squares estimate of factor ``mode`` given the rest."""
    a = as_multiway(a)
    L = cross_moment(a, factors, mode)
    if a.mask is None:
        try:
            Q = gram_hadamard(factors, mode)
            return Q.solve(L.T).T
        except SpdError as e:
            raise UpdateError(f"normal equations singular for mode {mode}: {e}") from e
    Z = khatri_rao_skip(factors, mode)
    W = unfold_values((~a.mask).astype(float), mode)
    grams = _row_grams(W, Z)
    out = np.empty_like(L)
    for i in range(L.shape[0]):
        try:
            out[i] = Spd(grams[i]).solve(L[i])
        except SpdError as e:
            raise UpdateError(
                f"normal equations singular for mode {mode}, row {i}: {e}"
            ) from e
    return out


def _rss(a, theta):
    if a.mask is None:
        return float(np.sum((a.values - theta) ** 2))
    d = a.values - theta
    return float(np.sum(d[~a.mask] ** 2))


def als_single(a, rank, rng, rel_tol=1e-6, max_sweeps=5000, init=None):
    """Run ALS from one random start (or an explicit ``init`` factor list).

    Sweeps update modes in fixed order; the run stops when the squared
    change of the composed estimate falls below ``rel_tol`` times its
    squared magnitude.
    """
    a = as_multiway(a)
    if init is None:
        factors = [rng.standard_normal((m, rank)) for m in a.dims]
    else:
        factors = [np.array(f, dtype=float) for f in init]
    theta = compose_values(factors)
    history = []
    converged = False
    sweeps = 0
    for sweep in range(1, max_sweeps + 1):
        for k in range(len(factors)):
            factors[k] = conditional_update(a, factors, k)
        new_theta = compose_values(factors)
        history.append(_rss(a, new_theta))
        sweeps = sweep
        change = float(np.sum((new_theta - theta) ** 2))
        denom = float(np.sum(theta**2))
        theta = new_theta
        if change <= rel_tol * denom:
            converged = True
            break
    return AlsResult(
        factors=FactorSet(factors),
        rss=_rss(a, theta),
        sweeps=sweeps,
        converged=converged,
        rss_history=np.asarray(history),
    )


def als_fit(a, cfg, rng=None):
    """Best-of-``n_starts`` ALS fit; ties resolve to the lowest start index."""
    a = as_multiway(a)
    if rng is None:
        rng = RngStream(cfg.seed)
    best = None
    for s in range(cfg.n_starts):
        res = als_single(
            a,
            cfg.rank,
            rng.substream("als-start", s),
            rel_tol=cfg.rel_tol,
            max_sweeps=cfg.max_sweeps,
        )
        res.start_index = s
        if best is None or res.rss < best.rss:
            best = res
    return best


def rank_r_approx(a, rank, n_starts=20, rel_tol=1e-6, max_sweeps=5000, seed=0, rng=None):
    """Rank-R least-squares approximation, returned as a FactorSet."""
    cfg = AlsConfig(
        rank=rank, n_starts=n_starts, rel_tol=rel_tol, max_sweeps=max_sweeps, seed=seed
    )
    return als_fit(a, cfg, rng=rng).factors
