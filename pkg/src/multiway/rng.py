"""Counter-based random streams and the distribution samplers the Gibbs
schemes need.

Parameterization notes (these matter, get them wrong and every sampler
downstream is silently biased):

* ``invgamma_sample(rng, a, b)`` uses shape ``a`` and RATE ``b``; the mean
  is ``b / (a - 1)``.
* ``invwishart_sample(rng, inv_scale, dof)`` takes the INVERSE of the
  scale matrix as its first argument: the draw has density proportional
  to ``|X|^-(dof+p+1)/2 etr(-inv_scale^-1 X^-1 / 2)`` and mean
  ``inv_scale^-1 / (dof - p - 1)``.  Passing ``inv(S)`` therefore yields
  mean ``S / (dof - p - 1)``.
* ``matnorm_sample(rng, M, rowcov)`` draws each row ``i`` independently
  from MVN(``M[i]``, ``rowcov``).
"""

from __future__ import annotations

import zlib

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr, ndtri

from .linalg import Spd, as_spd

__all__ = [
    "RngStream",
    "mvn_sample",
    "matnorm_sample",
    "invgamma_sample",
    "wishart_sample",
    "invwishart_sample",
    "trunc_norm_sample",
]


def _key_element(e):
    if isinstance(e, (int, np.integer)):
        return int(e) & 0xFFFFFFFF
    return zlib.crc32(str(e).encode("utf8"))


class RngStream:
    """Seeded counter-based random stream (Philox) with derivable substreams.

    The same ``(seed, path)`` always reproduces the same draw sequence.
    ``substream`` derives a statistically independent stream keyed by a
    tuple of integers or strings, so replicates, chains, and multi-start
    workers can be seeded deterministically regardless of execution order.
    """

    def __init__(self, seed=0, path=()):
        self.seed = int(seed) & (2**64 - 1)
        self.path = tuple(_key_element(e) for e in path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def substream(self, *path):
        return RngStream(self.seed, self.path + tuple(path))

    def __getattr__(self, name):
        gen = self.__dict__.get("gen")
        if gen is None:
            raise AttributeError(name)
        return getattr(gen, name)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


def mvn_sample(rng, mean, cov):
    """One multivariate normal draw: ``mean + L z`` with ``L`` the Cholesky
    factor of ``cov``."""
    mean = np.asarray(mean, dtype=float)
    cov = as_spd(cov)
    if mean.shape != (cov.dim,):
        raise ValueError(f"mean length {mean.shape} != cov dim {cov.dim}")
    z = rng.standard_normal(cov.dim)
    return mean + cov.chol @ z


def matnorm_sample(rng, M, rowcov):
    """Matrix with independent MVN rows: row ``i`` ~ MVN(``M[i]``, ``rowcov``)."""
    M = np.asarray(M, dtype=float)
    rowcov = as_spd(rowcov)
    if M.ndim != 2 or M.shape[1] != rowcov.dim:
        raise ValueError(f"M shape {M.shape} incompatible with rowcov dim {rowcov.dim}")
    Z = rng.standard_normal(M.shape)
    return M + Z @ rowcov.chol.T


def invgamma_sample(rng, shape, rate):
    """Inverse-gamma draw with the given shape and rate (mean rate/(shape-1))."""
    if shape <= 0 or rate <= 0:
        raise ValueError(f"shape and rate must be positive, got ({shape}, {rate})")
    return 1.0 / rng.gamma(shape, 1.0 / rate)


from functools import lru_cache


@lru_cache(maxsize=64)
def _tril_indices(p):
    return np.tril_indices(p, -1)


def _bartlett_lower(rng, p, dof):
    A = np.zeros((p, p))
    A[np.diag_indices(p)] = np.sqrt(rng.chisquare(dof - np.arange(p)))
    if p > 1:
        tril = _tril_indices(p)
        A[tril] = rng.standard_normal(len(tril[0]))
    return A


def wishart_sample(rng, scale, dof):
    """Wishart draw (mean ``dof * scale``) via the Bartlett decomposition."""
    scale = as_spd(scale)
    p = scale.dim
    if dof <= p - 1:
        raise ValueError(f"dof must exceed dim - 1 = {p - 1}, got {dof}")
    LA = scale.chol @ _bartlett_lower(rng, p, dof)
    return LA @ LA.T


def invwishart_sample(rng, inv_scale, dof):
    """Inverse-Wishart draw; ``inv_scale`` is the inverse of the scale matrix.

    Reduces for p=1 to inverse-gamma(dof/2, s/2) with s = 1/inv_scale.
    """
    inv_scale = as_spd(inv_scale)
    p = inv_scale.dim
    if dof <= p - 1:
        raise ValueError(f"dof must exceed dim - 1 = {p - 1}, got {dof}")
    LA = inv_scale.chol @ _bartlett_lower(rng, p, dof)
    # the draw is (LA LA^T)^-1; invert the triangular factor once
    Minv = solve_triangular(LA, np.eye(p), lower=True)
    psi = Minv.T @ Minv
    psi = (psi + psi.T) / 2.0
    try:
        return Spd._wrap(psi, np.linalg.cholesky(psi))
    except np.linalg.LinAlgError:
        return Spd(psi)


def _robert_tail(rng, a, b):
    """Rejection draw from a standard normal truncated to (a, b), a >= 0 large."""
    alpha = 0.5 * (a + np.sqrt(a * a + 4.0))
    for _ in range(1000):
        x = a + rng.exponential(1.0 / alpha)
        if x < b and np.log(rng.random()) <= -0.5 * (x - alpha) ** 2:
            return x
    # razor-thin interval: density is essentially flat across it
    return a + rng.random() * (min(b, a + 1.0) - a)


def trunc_norm_sample(rng, mean, lo, hi):
    """Draw from normal(mean, 1) conditioned to the open interval (lo, hi).

    ``mean``, ``lo`` and ``hi`` broadcast; bounds may be infinite.  Uses
    the inverse CDF where the interval carries appreciable mass and a
    tail rejection sampler otherwise.
    """
    mean, lo, hi = np.broadcast_arrays(
        np.asarray(mean, dtype=float),
        np.asarray(lo, dtype=float),
        np.asarray(hi, dtype=float),
    )
    if not (lo < hi).all():
        raise ValueError("empty truncation interval (need lo < hi)")
    a = lo - mean
    b = hi - mean
    pa = ndtr(a)
    pb = ndtr(b)
    window = pb - pa
    u = rng.random(a.shape)
    with np.errstate(invalid="ignore"):
        x = ndtri(pa + u * window)
    # keep inverse-CDF draws strictly inside the interval
    x = np.clip(x, np.nextafter(a, np.inf), np.nextafter(b, -np.inf))
    extreme = window < 1e-12
    if extreme.any():
        flat = x.reshape(-1)
        a_flat = a.reshape(-1)
        b_flat = b.reshape(-1)
        for idx in np.flatnonzero(extreme.reshape(-1)):
            ai, bi = a_flat[idx], b_flat[idx]
            if ai >= 0:
                flat[idx] = _robert_tail(rng, ai, bi)
            else:
                flat[idx] = -_robert_tail(rng, -bi, -ai)
        x = flat.reshape(a.shape)
    out = mean + x
    if out.ndim == 0:
        return float(out)
    return out
