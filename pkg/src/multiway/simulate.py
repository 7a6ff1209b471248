"""Synthetic data generator for the estimator comparison studies.

Arrays are drawn from a deliberately over-parameterized scheme: factor
rows come from randomly generated mode-level normal models with maximal
rank, the target array is the rank-R least-squares approximation of
their composition (rescaled to unit mean square), and the observation
adds independent normal noise.  Generating from something other than the
fitting prior keeps the comparison between estimators fair.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod, sqrt

import numpy as np

from .als import AlsConfig, als_fit
from .arrays import MultiwayArray, compose_values
from .linalg import Spd
from .rng import RngStream, invwishart_sample, mvn_sample, wishart_sample

__all__ = ["SimSpec", "simulate_theta"]


@dataclass
class SimSpec:
    dims: tuple = (10, 8, 6)
    rank: int = 4
    n_replicates: int = 20
    noise_ratio: float = 0.25
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(m) for m in self.dims)
        if min(self.dims) < 1 or len(self.dims) < 2:
            raise ValueError(f"bad dims {self.dims}")
        if self.noise_ratio <= 0:
            raise ValueError("noise_ratio must be positive")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")


def simulate_theta(spec, rng=None):
    """Generate one (Theta, Y) pair under the documented scheme.

    Per mode: a covariance is drawn hierarchically (Wishart base, then
    inverse-Wishart with Poisson-jittered degrees of freedom), a mean from
    it, and factor rows around that mean with maximal rank; Theta is the
    rank-``spec.rank`` approximation of the composed array rescaled so the
    mean squared cell value is exactly 1; Y adds normal noise with
    variance ``spec.noise_ratio``.
    """
    if rng is None:
        rng = RngStream(spec.seed)
    r_max = prod(spec.dims[1:])
    factors = []
    for k, m in enumerate(spec.dims):
        sub = rng.substream("mode", k)
        psi0 = wishart_sample(sub, np.eye(r_max), r_max + 1)
        nu0 = r_max + int(sub.poisson(sqrt(r_max)))
        psi_k = invwishart_sample(sub, Spd(psi0), nu0)
        mu_k = mvn_sample(sub, np.zeros(r_max), psi_k)
        U = mu_k + sub.standard_normal((m, r_max)) @ psi_k.chol.T
        factors.append(U)
    full = MultiwayArray(compose_values(factors))
    fit = als_fit(
        full,
        AlsConfig(rank=spec.rank, n_starts=10, rel_tol=1e-10),
        rng=rng.substream("approx"),
    )
    theta = compose_values(fit.factors)
    theta *= sqrt(theta.size / np.sum(theta * theta))
    noise = sqrt(spec.noise_ratio) * rng.substream("noise").standard_normal(spec.dims)
    return MultiwayArray(theta), MultiwayArray(theta + noise)
