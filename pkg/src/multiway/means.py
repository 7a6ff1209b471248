"""Hierarchical multilinear means for cross-classified multivariate data.

Observations y (p-dimensional) are grouped by K categorical variables.
Cell means are modeled as a reduced-rank systematic part plus
cell-level noise:

    y | cell x  ~ MVN(mu_x, Sigma)
    mu_x = beta_x + gamma_x,   gamma_x ~ MVN(0, Omega)
    beta_x = V (u_x1 o ... o u_xK),  the cell-x slice of a rank-R array.

Cells with little data shrink toward beta_x; well-populated cells stay
near their sample mean.  One Gibbs sweep updates Sigma, every cell mean,
Omega, the categorical-mode factors (on the Omega-whitened mean array,
with unit noise variance), and the variable-mode factor V.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np
from scipy.linalg import solve_triangular

from .als import rank_r_approx
from .arrays import MultiwayArray, compose_values
from .gibbs import HierPrior, _draw_mode_hyper, draw_factor, ess
from .linalg import Spd
from .rng import RngStream, invwishart_sample

__all__ = [
    "CrossTabData",
    "MeansPriors",
    "MeansState",
    "MeansConfig",
    "MeansResult",
    "means_gibbs_sweep",
    "means_fit",
]


class CrossTabData:
    """Multivariate responses cross-classified by categorical variables.

    ``y`` is (n, p); ``x`` is (n, K) of 0-based level codes; ``levels``
    gives the number of levels per variable.  Cells are indexed in C
    order over the level grid (last variable fastest).
    """

    def __init__(self, y, x, levels=None):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=int)
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim == 1:
            x = x[:, None]
        if y.shape[0] != x.shape[0]:
            raise ValueError(f"{y.shape[0]} responses but {x.shape[0]} label rows")
        if levels is None:
            levels = tuple(int(x[:, k].max()) + 1 for k in range(x.shape[1]))
        levels = tuple(int(m) for m in levels)
        if x.min() < 0 or any(x[:, k].max() >= levels[k] for k in range(x.shape[1])):
            raise ValueError("level codes out of range")
        if not np.isfinite(y).all():
            raise ValueError("responses must be finite")
        self.y = y
        self.x = x
        self.levels = levels
        self.cell_index = np.ravel_multi_index(tuple(x.T), levels)
        self.n_cells = prod(levels)
        self.counts = np.bincount(self.cell_index, minlength=self.n_cells).astype(float)
        ybar = np.zeros((self.n_cells, self.p))
        for d in range(self.p):
            ybar[:, d] = np.bincount(
                self.cell_index, weights=y[:, d], minlength=self.n_cells
            )
        nz = self.counts > 0
        ybar[nz] /= self.counts[nz, None]
        self.ybar = ybar

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.y.shape[1]

    @property
    def n_modes(self):
        return len(self.levels)

    def standardized(self):
        """Copy with each response column centered and scaled to unit sd."""
        mean = self.y.mean(axis=0)
        scale = self.y.std(axis=0)
        scale[scale == 0] = 1.0
        z = (self.y - mean) / scale
        return CrossTabData(z, self.x, self.levels), mean, scale

    def __repr__(self):
        return (
            f"CrossTabData(n={self.n}, p={self.p}, levels={self.levels}, "
            f"cells={self.n_cells})"
        )


@dataclass
class MeansPriors:
    sigma_scale: np.ndarray
    sigma_dof: float
    omega_scale: np.ndarray
    omega_dof: float
    tau20: float = 1.0
    kappa0: float = 1.0
    nu0_wish: int | None = None

    @classmethod
    def from_data(cls, data):
        """Weak priors centered on the sample covariance of the responses."""
        cov = np.cov(data.y, rowvar=False)
        cov = np.atleast_2d(cov)
        dof = data.p + 1.0
        return cls(
            sigma_scale=cov.copy(),
            sigma_dof=dof,
            omega_scale=cov.copy(),
            omega_dof=dof,
        )

    def factor_prior(self):
        return HierPrior(
            mu0=0.0, kappa0=self.kappa0, nu0_wish=self.nu0_wish, tau20=self.tau20
        )


class MeansState:
    def __init__(self, mu, sigma, omega, factors, v, factor_mu, factor_psi):
        self.mu = np.asarray(mu, dtype=float)
        self.sigma = sigma
        self.omega = omega
        self.factors = [np.asarray(f, dtype=float) for f in factors]
        self.v = np.asarray(v, dtype=float)
        self.factor_mu = list(factor_mu)
        self.factor_psi = list(factor_psi)

    @property
    def rank(self):
        return self.v.shape[1]

    def beta(self, levels):
        """Systematic cell means, (n_cells, p)."""
        b = compose_values(self.factors + [self.v])
        return b.reshape(-1, self.v.shape[0])

    def copy(self):
        return MeansState(
            self.mu.copy(),
            self.sigma,
            self.omega,
            [f.copy() for f in self.factors],
            self.v.copy(),
            [m.copy() for m in self.factor_mu],
            list(self.factor_psi),
        )


def _draw_cell_means(data, beta, sigma, omega, rng):
    """Precision-weighted draw of every cell mean; empty cells draw from
    the around-beta conditional."""
    p = data.p
    sigma_inv = sigma.inv()
    omega_inv = omega.inv()
    mu = np.empty((data.n_cells, p))
    noise = rng.standard_normal((data.n_cells, p))
    # cells with equal counts share the same conditional precision
    for n_x in np.unique(data.counts):
        cells = np.flatnonzero(data.counts == n_x)
        prec = Spd(n_x * sigma_inv + omega_inv)
        rhs = (data.ybar[cells] * n_x) @ sigma_inv + beta[cells] @ omega_inv
        mean = prec.solve(rhs.T).T
        draw = solve_triangular(prec.chol.T, noise[cells].T, lower=False).T
        mu[cells] = mean + draw
    return mu


def means_gibbs_sweep(
    data,
    state,
    priors,
    rng,
    update=("sigma", "mu", "omega", "factors", "v"),
):
    """One Gibbs sweep over (Sigma, {mu_x}, Omega, factors, V).

    ``update`` restricts the sweep to a subset of blocks, which keeps the
    remaining quantities clamped (useful for conditional checks).
    """
    new = state.copy()
    levels = data.levels
    fprior = priors.factor_prior()

    if "sigma" in update:
        resid = data.y - new.mu[data.cell_index]
        scale = priors.sigma_scale + resid.T @ resid
        new.sigma = invwishart_sample(
            rng, Spd(scale).inv_spd(), priors.sigma_dof + data.n
        )

    if "mu" in update:
        beta = new.beta(levels)
        new.mu = _draw_cell_means(data, beta, new.sigma, new.omega, rng)

    if "omega" in update:
        beta = new.beta(levels)
        gamma = new.mu - beta
        scale = priors.omega_scale + new.v @ new.v.T + gamma.T @ gamma
        dof = priors.omega_dof + new.rank + data.n_cells
        new.omega = invwishart_sample(rng, Spd(scale).inv_spd(), dof)

    if "factors" in update or "v" in update:
        chol = new.omega.chol
        mu_tilde = solve_triangular(chol, new.mu.T, lower=True).T
        v_tilde = solve_triangular(chol, new.v, lower=True)
        arr = MultiwayArray(mu_tilde.reshape(levels + (data.p,)))
        mats = new.factors + [v_tilde]
        if "factors" in update:
            for k in rng.permutation(data.n_modes):
                k = int(k)
                mu_k, psi_k = _draw_mode_hyper(mats[k], fprior, new.rank, rng)
                new.factor_mu[k] = mu_k
                new.factor_psi[k] = psi_k
                mats[k] = draw_factor(arr, mats, k, mu_k, psi_k, 1.0, rng)
            new.factors = mats[: data.n_modes]
        if "v" in update:
            eye = Spd(np.eye(new.rank))
            v_tilde = draw_factor(
                arr, mats, data.n_modes, np.zeros(new.rank), eye, 1.0, rng
            )
            new.v = chol @ v_tilde
    return new


@dataclass
class MeansConfig:
    rank: int = 2
    n_burn: int = 2000
    n_iter: int = 20000
    thin: int = 10
    seed: int = 0
    standardize: bool = True
    priors: MeansPriors | None = None

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class MeansResult:
    levels: tuple
    counts: np.ndarray
    ybar: np.ndarray
    mu_hat: np.ndarray
    b_bar: np.ndarray
    b_hat: np.ndarray
    u_hat: list
    v_hat: np.ndarray
    b_fit_ratio: float
    shrinkage: np.ndarray
    traces: dict
    ess: dict
    y_mean: np.ndarray
    y_scale: np.ndarray

    def shrinkage_table(self):
        """Rows of (cell sample size, |mu_hat - ybar|), nonempty cells only."""
        return self.shrinkage


def _init_state(data, rank, priors, rng):
    overall = data.y.mean(axis=0)
    ybar = data.ybar.copy()
    ybar[data.counts == 0] = overall
    arr = MultiwayArray(ybar.reshape(data.levels + (data.p,)))
    fs = rank_r_approx(arr, rank, n_starts=10, rng=rng)
    factors = [np.array(f) for f in fs][: data.n_modes]
    v = np.array(fs[data.n_modes])
    cov = np.atleast_2d(np.cov(data.y, rowvar=False)) + 1e-8 * np.eye(data.p)
    sigma = Spd(cov)
    omega = Spd(cov)
    fprior = priors.factor_prior()
    fmu, fpsi = [], []
    for U in factors:
        fmu.append(U.mean(axis=0))
        fpsi.append(Spd((U.T @ U + fprior.tau20 * np.eye(rank)) / (U.shape[0] + 1)))
    return MeansState(ybar, sigma, omega, factors, v, fmu, fpsi)


def means_fit(data, cfg=None):
    """Fit the hierarchical means model and return posterior summaries.

    Returns cell-mean estimates, the posterior-mean systematic array and
    its rank-R factor point estimates, a shrinkage table, and traces of
    the covariance scales and the average systematic mean.
    """
    cfg = cfg or MeansConfig()
    if cfg.standardize:
        data, y_mean, y_scale = data.standardized()
    else:
        y_mean = np.zeros(data.p)
        y_scale = np.ones(data.p)
    priors = cfg.priors if cfg.priors is not None else MeansPriors.from_data(data)
    rng = RngStream(cfg.seed)
    state = _init_state(data, cfg.rank, priors, rng.substream("init"))

    count = cfg.n_iter // cfg.thin
    mu_sum = np.zeros((data.n_cells, data.p))
    b_sum = np.zeros((data.n_cells, data.p))
    tr_sigma = np.empty(count)
    tr_omega = np.empty(count)
    tr_beta = np.empty((count, data.p))
    sweep_rng = rng.substream("sweeps")
    saved = 0
    for it in range(1, cfg.n_burn + cfg.n_iter + 1):
        state = means_gibbs_sweep(data, state, priors, sweep_rng)
        post = it - cfg.n_burn
        if post >= 1 and post % cfg.thin == 0 and saved < count:
            beta = state.beta(data.levels)
            mu_sum += state.mu
            b_sum += beta
            tr_sigma[saved] = np.linalg.norm(state.sigma.matrix)
            tr_omega[saved] = np.linalg.norm(state.omega.matrix)
            tr_beta[saved] = beta.mean(axis=0)
            saved += 1

    mu_hat = mu_sum / saved
    b_bar = b_sum / saved
    b_arr = MultiwayArray(b_bar.reshape(data.levels + (data.p,)))
    fs = rank_r_approx(b_arr, cfg.rank, n_starts=10, rng=rng.substream("point"))
    b_hat = compose_values(fs).reshape(data.n_cells, data.p)
    denom = float(np.sum(b_bar**2))
    ratio = float(np.sum((b_bar - b_hat) ** 2)) / denom if denom > 0 else 0.0
    nz = data.counts > 0
    shrink = np.column_stack(
        [data.counts[nz], np.linalg.norm(mu_hat[nz] - data.ybar[nz], axis=1)]
    )
    ess_out = {
        "sigma": ess(tr_sigma) if saved >= 10 else float("nan"),
        "omega": ess(tr_omega) if saved >= 10 else float("nan"),
        "beta_mean": [
            ess(tr_beta[:, d]) if saved >= 10 else float("nan")
            for d in range(data.p)
        ],
    }
    return MeansResult(
        levels=data.levels,
        counts=data.counts,
        ybar=data.ybar,
        mu_hat=mu_hat,
        b_bar=b_bar,
        b_hat=b_hat,
        u_hat=[np.array(f) for f in fs][: data.n_modes],
        v_hat=np.array(fs[data.n_modes]),
        b_fit_ratio=ratio,
        shrinkage=shrink,
        traces={"sigma": tr_sigma, "omega": tr_omega, "beta_mean": tr_beta},
        ess=ess_out,
        y_mean=y_mean,
        y_scale=y_scale,
    )
