"""Gibbs samplers for Bayesian multilinear normal models.

Two prior regimes are supported:

* hierarchical: each mode's factor rows are exchangeable draws from a
  mode-level multivariate normal whose mean and covariance are themselves
  sampled, giving data-driven shrinkage;
* flat: factor entries are independent normal(0, tau2) with fixed tau2.

One hierarchical sweep, given current factors and noise variance:

1. for each mode k in random order:
   (a) Psi_k ~ inverse-Wishart([U_k' U_k + tau0^2 I]^-1, m_k + nu_wish)
   (b) mu_k  ~ MVN((U_k' 1 + kappa0 mu0) / (m_k + kappa0), Psi_k / (m_k + kappa0))
   (c) U_k   ~ matrix normal(M_k~, Psi_k~, I) from the likelihood kernel
2. sigma2 ~ inverse-gamma(nu~/2, (nu0 s0^2 + ||Y - Theta||^2)/2),
   nu~ = nu0 + #observed cells.

The sweep follows this scheme as printed; note that step (a) uses the
uncentered gram of the factor rows rather than the fully marginalized
normal-inverse-Wishart scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .als import AlsConfig, als_fit, gram_hadamard, cross_moment, _gram_matrix
from .arrays import MultiwayArray, as_multiway, compose_values, khatri_rao_skip, unfold_values
from .linalg import Spd
from .rng import RngStream, invgamma_sample, invwishart_sample, matnorm_sample, mvn_sample

__all__ = [
    "ChainError",
    "HierPrior",
    "HierarchicalState",
    "ChainConfig",
    "ChainOutput",
    "unit_information_prior",
    "factor_full_conditional",
    "draw_factor",
    "gibbs_sweep_hier",
    "gibbs_sweep_flat",
    "run_chain",
    "posterior_theta",
    "neg2_loglik",
    "dic",
    "ess",
]


class ChainError(RuntimeError):
    pass


@dataclass
class HierPrior:
    """Hyperparameters for the hierarchical factor prior.

    ``nu0_wish=None`` resolves to rank+1 at sampling time.  ``tau20``
    scales the inverse-Wishart prior on the mode covariances; ``nu0_sigma``
    and ``sigma20`` parameterize the inverse-gamma prior on the noise
    variance.
    """

    mu0: float = 0.0
    kappa0: float = 1.0
    nu0_wish: int | None = None
    tau20: float = 1.0
    nu0_sigma: float = 1.0
    sigma20: float = 1.0

    def __post_init__(self):
        if self.tau20 <= 0:
            raise ValueError("tau20 must be positive")
        if self.nu0_sigma <= 0 or self.sigma20 <= 0:
            raise ValueError("noise-variance prior parameters must be positive")

    def wishart_dof(self, rank):
        nu = self.nu0_wish if self.nu0_wish is not None else rank + 1
        if nu < rank + 1:
            raise ValueError(f"nu0_wish must be >= rank + 1 = {rank + 1}, got {nu}")
        return nu


class HierarchicalState:
    """Current factors, per-mode hyperparameters, and noise variance."""

    def __init__(self, factors, mu, psi, sigma2, theta=None):
        self.factors = [np.asarray(f, dtype=float) for f in factors]
        self.mu = [np.asarray(m, dtype=float) for m in mu]
        self.psi = list(psi)
        if sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        self.sigma2 = float(sigma2)
        self._theta = theta

    @property
    def rank(self):
        return self.factors[0].shape[1]

    @property
    def theta(self):
        """Composed mean array for the current factors (cached)."""
        if self._theta is None:
            self._theta = compose_values(self.factors)
        return self._theta

    def copy(self):
        return HierarchicalState(
            [f.copy() for f in self.factors],
            [m.copy() for m in self.mu],
            list(self.psi),
            self.sigma2,
            theta=None if self._theta is None else self._theta.copy(),
        )


def unit_information_prior(a, ls_result):
    """Prior weakly centered on a least-squares fit of the data.

    tau0^2 is the pooled variance of all factor entries from the fit and
    the noise-variance prior centers on the fit's residual mean square
    with weight nu0=1.
    """
    a = as_multiway(a)
    entries = np.concatenate([f.ravel() for f in ls_result.factors])
    tau20 = float(np.var(entries))
    sigma20 = ls_result.rss / a.n_observed
    return HierPrior(
        mu0=0.0,
        kappa0=1.0,
        nu0_wish=None,
        tau20=max(tau20, 1e-12),
        nu0_sigma=1.0,
        sigma20=max(sigma20, 1e-12),
    )


def _masked_rss(a, theta):
    d = a.values - theta
    if a.mask is None:
        return float(np.sum(d * d))
    return float(np.sum(d[~a.mask] ** 2))


def factor_full_conditional(a, state, mode):
    """Matrix-normal full conditional (M~, Psi~) of one factor matrix.

    Requires fully observed data; masked arrays have row-specific
    conditionals and are handled inside :func:`draw_factor`.
    """
    a = as_multiway(a)
    if a.mask is not None:
        raise ChainError("factor_full_conditional requires a fully observed array")
    Q = gram_hadamard(state.factors, mode)
    L = cross_moment(a, state.factors, mode)
    psi = state.psi[mode]
    psi_inv = psi.inv()
    prec = Q.matrix / state.sigma2 + psi_inv
    psi_tilde = Spd(Spd(prec).inv())
    m = a.dims[mode]
    prior_term = np.outer(np.ones(m), psi_inv @ state.mu[mode])
    m_tilde = (L / state.sigma2 + prior_term) @ psi_tilde.matrix
    return m_tilde, psi_tilde


def draw_factor(a, factors, mode, mu, psi, sigma2, rng):
    """Sample one factor matrix from its full conditional.

    Fully observed arrays use the shared matrix-normal conditional; with
    missing cells each row gets its own normal equations, assembled from
    the observed fiber entries only.
    """
    a = as_multiway(a)
    psi_inv = psi.inv()
    if a.mask is None:
        G = _gram_matrix(factors, mode)
        L = cross_moment(a, factors, mode)
        prec = G / sigma2 + psi_inv
        try:
            Lp = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError:
            Lp = Spd(prec).chol
        m = a.dims[mode]
        rhs = L / sigma2 + np.outer(np.ones(m), psi_inv @ mu)
        m_tilde = cho_solve((Lp, True), rhs.T).T
        Z = rng.standard_normal(rhs.shape)
        # rows get covariance prec^-1 via a triangular backsolve
        return m_tilde + solve_triangular(Lp.T, Z.T, lower=False).T
    Z = khatri_rao_skip(factors, mode)
    L = cross_moment(a, factors, mode)
    W = unfold_values((~a.mask).astype(float), mode)
    grams = np.einsum("ic,cr,cs->irs", W, Z, Z, optimize=True)
    prior_rhs = psi_inv @ mu
    m, R = L.shape
    out = np.empty((m, R))
    noise = rng.standard_normal((m, R))
    for i in range(m):
        prec = Spd(grams[i] / sigma2 + psi_inv)
        mean = prec.solve(L[i] / sigma2 + prior_rhs)
        out[i] = mean + solve_triangular(prec.chol.T, noise[i], lower=False)
    return out


def _draw_mode_hyper(U, prior, rank, rng, psi_scale="gram"):
    m = U.shape[0]
    if psi_scale == "gram":
        scale = U.T @ U + prior.tau20 * np.eye(rank)
    elif psi_scale == "conjugate":
        ubar = U.mean(axis=0)
        centered = U - ubar
        dev = ubar - prior.mu0
        w = prior.kappa0 * m / (prior.kappa0 + m)
        scale = (
            centered.T @ centered + w * np.outer(dev, dev) + prior.tau20 * np.eye(rank)
        )
    else:
        raise ValueError(f"unknown psi_scale {psi_scale!r}")
    try:
        scale_spd = Spd._wrap(scale, np.linalg.cholesky(scale))
    except np.linalg.LinAlgError:
        scale_spd = Spd(scale)
    psi = invwishart_sample(rng, scale_spd.inv_spd(), m + prior.wishart_dof(rank))
    denom = m + prior.kappa0
    mean = (U.sum(axis=0) + prior.kappa0 * prior.mu0) / denom
    mu = mean + (psi.chol @ rng.standard_normal(rank)) / np.sqrt(denom)
    return mu, psi


def _draw_sigma2(a, theta, prior, rng):
    rss = _masked_rss(a, theta)
    nu = prior.nu0_sigma + a.n_observed
    return invgamma_sample(rng, nu / 2.0, (prior.nu0_sigma * prior.sigma20 + rss) / 2.0)


def gibbs_sweep_hier(a, state, prior, rng, psi_scale="gram"):
    """One full hierarchical sweep; returns a new state.

    ``psi_scale`` selects the scale matrix of the mode-covariance draw:
    ``"gram"`` uses the uncentered factor gram ``U'U + tau0^2 I`` and is
    the default; ``"conjugate"`` uses the exact marginalized
    normal-inverse-Wishart scale (centered gram plus a shrunk mean
    deviation term), which makes the sweep leave the stated joint model
    invariant.  The two differ by one rank-one term and behave almost
    identically when conditioned on fixed data.
    """
    a = as_multiway(a)
    new = state.copy()
    rank = new.rank
    for k in rng.permutation(len(new.factors)):
        k = int(k)
        mu_k, psi_k = _draw_mode_hyper(
            new.factors[k], prior, rank, rng, psi_scale=psi_scale
        )
        new.mu[k] = mu_k
        new.psi[k] = psi_k
        new.factors[k] = draw_factor(
            a, new.factors, k, mu_k, psi_k, new.sigma2, rng
        )
    new._theta = compose_values(new.factors)
    new.sigma2 = _draw_sigma2(a, new.theta, prior, rng)
    return new


def gibbs_sweep_flat(a, state, tau2, rng, sigma_prior=None):
    """One sweep under the fixed flat prior: mu_k = 0, Psi_k = tau2 I."""
    a = as_multiway(a)
    if sigma_prior is None:
        sigma_prior = HierPrior()
    new = state.copy()
    rank = new.rank
    flat_psi = Spd(tau2 * np.eye(rank))
    zero = np.zeros(rank)
    for k in rng.permutation(len(new.factors)):
        k = int(k)
        new.mu[k] = zero
        new.psi[k] = flat_psi
        new.factors[k] = draw_factor(a, new.factors, k, zero, flat_psi, new.sigma2, rng)
    new._theta = compose_values(new.factors)
    new.sigma2 = _draw_sigma2(a, new.theta, sigma_prior, rng)
    return new


@dataclass
class ChainConfig:
    rank: int
    n_burn: int = 1000
    n_iter: int = 10000
    thin: int = 1
    mode: str = "hier"
    tau2_flat: float = 100.0
    prior: HierPrior | None = None
    seed: int = 0
    save_factors: bool = False
    als_starts: int = 20
    psi_scale: str = "gram"

    def __post_init__(self):
        if self.mode not in ("hier", "flat"):
            raise ValueError(f"mode must be 'hier' or 'flat', got {self.mode!r}")
        if self.psi_scale not in ("gram", "conjugate"):
            raise ValueError(f"psi_scale must be 'gram' or 'conjugate', got {self.psi_scale!r}")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_burn < 0:
            raise ValueError("n_burn must be >= 0")


@dataclass
class ChainOutput:
    """Saved draws and running sums from one Markov chain."""

    dims: tuple
    rank: int
    mode: str
    n_burn: int
    n_iter: int
    thin: int
    count: int
    theta_sum: np.ndarray = field(repr=False)
    theta_sumsq: np.ndarray = field(repr=False)
    sigma2: np.ndarray = field(repr=False)
    theta_norm2: np.ndarray = field(repr=False)
    neg2loglik: np.ndarray = field(repr=False)
    prior: HierPrior = None
    factor_snapshots: list = field(repr=False, default=None)

    def trace_columns(self):
        """Column schema used by the CSV serialization."""
        iters = self.n_burn + self.thin * np.arange(1, self.count + 1)
        return {
            "iteration": iters,
            "sigma2": self.sigma2,
            "theta_norm2": self.theta_norm2,
            "neg2loglik": self.neg2loglik,
        }


def _init_state(a, rank, prior, ls_result):
    factors = [f.copy() for f in ls_result.factors]
    mu = []
    psi = []
    for U in factors:
        m = U.shape[0]
        mu.append(U.mean(axis=0))
        scale = (U.T @ U + prior.tau20 * np.eye(rank)) / (m + 1)
        psi.append(Spd(scale))
    sigma2 = max(ls_result.rss / a.n_observed, prior.sigma20, 1e-12)
    return HierarchicalState(factors, mu, psi, sigma2)


def run_chain(a, cfg, rng=None, ls_init=None):
    """Run a Gibbs chain and accumulate posterior summaries.

    The chain is initialized from a multi-start ALS fit (``ls_init`` may
    supply one already computed at the same rank), which also supplies
    the unit-information prior when ``cfg.prior`` is None.  Draws are
    recorded every ``thin``-th iteration after ``n_burn``.
    """
    a = as_multiway(a)
    if cfg.n_iter < 1:
        raise ChainError("n_iter must be >= 1 (empty chain)")
    if rng is None:
        rng = RngStream(cfg.seed)
    if ls_init is not None and ls_init.factors.rank != cfg.rank:
        raise ChainError(
            f"ls_init rank {ls_init.factors.rank} != chain rank {cfg.rank}"
        )
    ls = ls_init
    if ls is None:
        ls = als_fit(
            a,
            AlsConfig(rank=cfg.rank, n_starts=cfg.als_starts, seed=cfg.seed),
            rng=rng.substream("init"),
        )
    prior = cfg.prior if cfg.prior is not None else unit_information_prior(a, ls)
    state = _init_state(a, cfg.rank, prior, ls)

    count = cfg.n_iter // cfg.thin
    theta_sum = np.zeros(a.dims)
    theta_sumsq = np.zeros(a.dims)
    sigma2_tr = np.empty(count)
    norm2_tr = np.empty(count)
    n2ll_tr = np.empty(count)
    snapshots = [] if cfg.save_factors else None

    sweep_rng = rng.substream("sweeps")
    saved = 0
    for it in range(1, cfg.n_burn + cfg.n_iter + 1):
        if cfg.mode == "hier":
            state = gibbs_sweep_hier(a, state, prior, sweep_rng, psi_scale=cfg.psi_scale)
        else:
            state = gibbs_sweep_flat(
                a, state, cfg.tau2_flat, sweep_rng, sigma_prior=prior
            )
        post = it - cfg.n_burn
        if post >= 1 and post % cfg.thin == 0 and saved < count:
            theta = state.theta
            theta_sum += theta
            theta_sumsq += theta * theta
            sigma2_tr[saved] = state.sigma2
            norm2_tr[saved] = float(np.sum(theta * theta))
            n2ll_tr[saved] = neg2_loglik(a, theta, state.sigma2)
            if snapshots is not None:
                snapshots.append([f.copy() for f in state.factors])
            saved += 1

    return ChainOutput(
        dims=a.dims,
        rank=cfg.rank,
        mode=cfg.mode,
        n_burn=cfg.n_burn,
        n_iter=cfg.n_iter,
        thin=cfg.thin,
        count=saved,
        theta_sum=theta_sum,
        theta_sumsq=theta_sumsq,
        sigma2=sigma2_tr,
        theta_norm2=norm2_tr,
        neg2loglik=n2ll_tr,
        prior=prior,
        factor_snapshots=snapshots,
    )


def posterior_theta(chain):
    """Elementwise posterior mean of the saved composed arrays."""
    if chain.count < 1:
        raise ChainError("chain holds no saved draws")
    return MultiwayArray(chain.theta_sum / chain.count)


def neg2_loglik(a, theta, sigma2):
    """-2 log Gaussian likelihood over observed cells, constants included."""
    a = as_multiway(a)
    n = a.n_observed
    rss = _masked_rss(a, np.asarray(theta))
    return n * np.log(2.0 * np.pi * sigma2) + rss / sigma2


def dic(chain, a, theta_hat=None, sigma2_hat=None):
    """Deviance information criterion and effective parameter count.

    ``theta_hat`` defaults to the posterior mean array and ``sigma2_hat``
    to its residual mean square on the observed cells.
    """
    a = as_multiway(a)
    if chain.count < 1:
        raise ChainError("chain holds no saved draws")
    if theta_hat is None:
        theta_hat = posterior_theta(chain).values
    else:
        theta_hat = np.asarray(theta_hat, dtype=float)
    if sigma2_hat is None:
        sigma2_hat = _masked_rss(a, theta_hat) / a.n_observed
    dbar = float(np.mean(chain.neg2loglik))
    dhat = neg2_loglik(a, theta_hat, sigma2_hat)
    p_eff = dbar - dhat
    return dbar + p_eff, p_eff


def ess(trace):
    """Effective sample size via initial-positive-sequence truncation.

    Autocovariance pairs (lag 2m, 2m+1) are summed while positive; the
    estimate is n / (1 + 2 sum of autocorrelations).  Negative lag-1
    correlation can push the result above n (antithetic chains).
    """
    x = np.asarray(trace, dtype=float)
    if x.ndim != 1 or x.size < 10:
        raise ValueError("trace must be 1-d with at least 10 points")
    n = x.size
    x = x - x.mean()
    gamma0 = float(np.dot(x, x)) / n
    if gamma0 == 0.0:
        return float(n)
    # autocovariances via FFT
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    pair_sum = 0.0
    m = 0
    while 2 * m < n:
        g = acov[2 * m]
        if 2 * m + 1 < n:
            g += acov[2 * m + 1]
        if g <= 0:
            break
        pair_sum += g
        m += 1
    tau = 2.0 * pair_sum / gamma0 - 1.0
    tau = max(tau, 1.0 / n)
    return float(n / tau)
