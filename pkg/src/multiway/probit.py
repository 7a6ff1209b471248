"""Ordered-probit model for longitudinal symmetric network data.

Each unordered dyad (i, j) at time t carries an ordinal response and a
covariate vector.  A latent Gaussian score combines a regression part
with a symmetric multiplicative effect:

    z_ijt = beta' x_ijt + <u_i, u_j, v_t> + e_ijt,   e ~ normal(0, 1)
    y_ijt = the highest category whose cutoff lies below z_ijt.

The per-time effect matrices U diag(v_t) U' share node vectors across
time, like an eigendecomposition with common eigenvectors and varying
eigenvalues.  Node and time factors get the same hierarchical priors as
the normal-model sampler; beta gets a diffuse normal prior; cutoffs get
uniform-interval updates within a bounded prior range.  Diagonal cells
are undefined and never touched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtri

from .als import AlsConfig, als_fit
from .arrays import MultiwayArray
from .gibbs import HierPrior, _draw_mode_hyper, ess
from .linalg import Spd
from .rng import RngStream, trunc_norm_sample

__all__ = [
    "OrdinalPanel",
    "ProbitPriors",
    "ProbitState",
    "ProbitConfig",
    "ProbitResult",
    "symmetric_compose",
    "probit_gibbs_sweep",
    "probit_fit",
    "symmetric_point_factors",
]


class OrdinalPanel:
    """Dyadic ordinal observations with covariates, stored once per
    unordered pair (i < j required)."""

    def __init__(self, i, j, t, y, x, n_nodes=None, n_times=None, labels=None):
        i = np.asarray(i, dtype=int)
        j = np.asarray(j, dtype=int)
        t = np.asarray(t, dtype=int)
        y = np.asarray(y)
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = len(i)
        if not (len(j) == len(t) == len(y) == x.shape[0] == n):
            raise ValueError("i, j, t, y, x must have matching lengths")
        if n == 0:
            raise ValueError("panel is empty")
        if (i >= j).any():
            raise ValueError("pairs must satisfy i < j (diagonal cells undefined)")
        if i.min() < 0 or t.min() < 0:
            raise ValueError("indices must be nonnegative")
        if labels is None:
            labels = sorted(set(int(v) for v in y))
        labels = [int(v) for v in labels]
        if labels != list(range(labels[0], labels[0] + len(labels))):
            raise ValueError(f"categories must be contiguous, got {labels}")
        lookup = {v: c for c, v in enumerate(labels)}
        try:
            codes = np.array([lookup[int(v)] for v in y], dtype=int)
        except KeyError as e:
            raise ValueError(f"response value {e} outside category set {labels}")
        self.i = i
        self.j = j
        self.t = t
        self.y = codes
        self.x = x
        self.labels = labels
        self.n_nodes = int(n_nodes) if n_nodes is not None else int(j.max()) + 1
        self.n_times = int(n_times) if n_times is not None else int(t.max()) + 1
        if j.max() >= self.n_nodes or t.max() >= self.n_times:
            raise ValueError("node or time index out of declared range")
        # adjacency: for each node, the rows it appears in and its partner
        rows_of = [[] for _ in range(self.n_nodes)]
        partner = [[] for _ in range(self.n_nodes)]
        for r in range(n):
            rows_of[i[r]].append(r)
            partner[i[r]].append(j[r])
            rows_of[j[r]].append(r)
            partner[j[r]].append(i[r])
        self.node_rows = [np.array(r, dtype=int) for r in rows_of]
        self.node_partner = [np.array(p, dtype=int) for p in partner]
        self.time_rows = [np.flatnonzero(t == s) for s in range(self.n_times)]

    @property
    def n_obs(self):
        return len(self.i)

    @property
    def n_categories(self):
        return len(self.labels)

    @property
    def n_covariates(self):
        return self.x.shape[1]

    def __repr__(self):
        return (
            f"OrdinalPanel(nodes={self.n_nodes}, times={self.n_times}, "
            f"obs={self.n_obs}, categories={self.labels})"
        )


@dataclass
class ProbitPriors:
    beta_var: float = 100.0
    tau20: float = 1.0
    kappa0: float = 1.0
    nu0_wish: int | None = None
    cutoff_lo: float = -20.0
    cutoff_hi: float = 20.0

    def factor_prior(self):
        return HierPrior(
            mu0=0.0, kappa0=self.kappa0, nu0_wish=self.nu0_wish, tau20=self.tau20
        )


class ProbitState:
    def __init__(self, z, beta, cutoffs, u, v, mu_u, psi_u, mu_v, psi_v):
        self.z = np.asarray(z, dtype=float)
        self.beta = np.asarray(beta, dtype=float)
        self.cutoffs = np.asarray(cutoffs, dtype=float)
        if not (np.diff(self.cutoffs) > 0).all():
            raise ValueError("cutoffs must be strictly increasing")
        self.u = np.asarray(u, dtype=float)
        self.v = np.asarray(v, dtype=float)
        self.mu_u = np.asarray(mu_u, dtype=float)
        self.psi_u = psi_u
        self.mu_v = np.asarray(mu_v, dtype=float)
        self.psi_v = psi_v

    @property
    def rank(self):
        return self.u.shape[1]

    def factor_effect(self, panel):
        """<u_i, u_j, v_t> per observed dyad row."""
        return np.sum(
            self.u[panel.i] * self.u[panel.j] * self.v[panel.t], axis=1
        )

    def copy(self):
        return ProbitState(
            self.z.copy(),
            self.beta.copy(),
            self.cutoffs.copy(),
            self.u.copy(),
            self.v.copy(),
            self.mu_u.copy(),
            self.psi_u,
            self.mu_v.copy(),
            self.psi_v,
        )


def symmetric_compose(u, v_t):
    """Symmetric effect matrix ``U diag(v_t) U'`` with the diagonal masked."""
    u = np.asarray(u, dtype=float)
    v_t = np.asarray(v_t, dtype=float)
    g = (u * v_t) @ u.T
    g = (g + g.T) / 2.0
    return MultiwayArray(g, mask=np.eye(len(g), dtype=bool))


def _compose_panel(u, v):
    """Dense (m, m, T) effect array with diagonals masked."""
    m = u.shape[0]
    T = v.shape[0]
    out = np.empty((m, m, T))
    for t in range(T):
        g = (u * v[t]) @ u.T
        out[:, :, t] = (g + g.T) / 2.0
    mask = np.broadcast_to(np.eye(m, dtype=bool)[:, :, None], out.shape)
    return MultiwayArray(out, mask=np.array(mask))


def probit_gibbs_sweep(panel, state, priors, rng):
    """One sweep over (z, beta, cutoffs, U and its hyperparameters, V and
    its hyperparameters)."""
    new = state.copy()
    R = new.rank
    fprior = priors.factor_prior()

    # (a) latent scores, truncated to their category intervals
    effect = new.factor_effect(panel)
    mean = panel.x @ new.beta + effect
    lo = new.cutoffs[panel.y]
    hi = new.cutoffs[panel.y + 1]
    new.z = trunc_norm_sample(rng, mean, lo, hi)

    # (b) regression coefficients
    resid = new.z - effect
    prec = panel.x.T @ panel.x + np.eye(panel.n_covariates) / priors.beta_var
    prec = Spd(prec)
    bmean = prec.solve(panel.x.T @ resid)
    new.beta = bmean + solve_triangular(
        prec.chol.T, rng.standard_normal(panel.n_covariates), lower=False
    )

    # (c) cutoffs: uniform between the neighboring latent scores
    C = panel.n_categories
    for k in range(1, C):
        below = new.z[panel.y == k - 1]
        above = new.z[panel.y == k]
        lo_k = max(
            below.max() if below.size else priors.cutoff_lo,
            new.cutoffs[k - 1],
            priors.cutoff_lo,
        )
        hi_k = min(
            above.min() if above.size else priors.cutoff_hi,
            new.cutoffs[k + 1],
            priors.cutoff_hi,
        )
        if hi_k <= lo_k:
            hi_k = lo_k + 1e-8
        new.cutoffs[k] = lo_k + rng.random() * (hi_k - lo_k)

    # (d) node factors and their hyperparameters
    reg_resid = new.z - panel.x @ new.beta
    new.mu_u, new.psi_u = _draw_mode_hyper(new.u, fprior, R, rng)
    psi_u_inv = new.psi_u.inv()
    prior_rhs_u = psi_u_inv @ new.mu_u
    for node in rng.permutation(panel.n_nodes):
        node = int(node)
        rows = panel.node_rows[node]
        if rows.size == 0:
            new.u[node] = new.mu_u + new.psi_u.chol @ rng.standard_normal(R)
            continue
        design = new.u[panel.node_partner[node]] * new.v[panel.t[rows]]
        prec = Spd(design.T @ design + psi_u_inv)
        mean = prec.solve(design.T @ reg_resid[rows] + prior_rhs_u)
        new.u[node] = mean + solve_triangular(
            prec.chol.T, rng.standard_normal(R), lower=False
        )

    # (e) time factors and their hyperparameters
    new.mu_v, new.psi_v = _draw_mode_hyper(new.v, fprior, R, rng)
    psi_v_inv = new.psi_v.inv()
    prior_rhs_v = psi_v_inv @ new.mu_v
    for s in range(panel.n_times):
        rows = panel.time_rows[s]
        if rows.size == 0:
            new.v[s] = new.mu_v + new.psi_v.chol @ rng.standard_normal(R)
            continue
        design = new.u[panel.i[rows]] * new.u[panel.j[rows]]
        prec = Spd(design.T @ design + psi_v_inv)
        mean = prec.solve(design.T @ reg_resid[rows] + prior_rhs_v)
        new.v[s] = mean + solve_triangular(
            prec.chol.T, rng.standard_normal(R), lower=False
        )
    return new


@dataclass
class ProbitConfig:
    rank: int = 2
    n_burn: int = 500
    n_iter: int = 50000
    thin: int = 10
    seed: int = 0
    priors: ProbitPriors | None = None

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class ProbitResult:
    beta_draws: np.ndarray
    beta_mean: np.ndarray
    beta_sd: np.ndarray
    beta_interval: np.ndarray
    beta_ess: np.ndarray
    cutoffs_mean: np.ndarray
    theta_bar: MultiwayArray
    u_hat: np.ndarray
    v_hat: np.ndarray
    labels: list


def _init_state(panel, rank, priors, rng):
    C = panel.n_categories
    freqs = np.bincount(panel.y, minlength=C) / panel.n_obs
    cum = np.concatenate([[0.0], np.cumsum(freqs)])
    cum = np.clip(cum, 1e-4, 1 - 1e-4)
    cutoffs = np.empty(C + 1)
    cutoffs[0] = -np.inf
    cutoffs[C] = np.inf
    cutoffs[1:C] = ndtri(cum[1:C])
    cutoffs[1:C] = np.maximum.accumulate(cutoffs[1:C] + 1e-8 * np.arange(C - 1))
    # start z at the center of mass of each category interval
    mid = (cum[panel.y] + cum[panel.y + 1]) / 2.0
    z = ndtri(mid)
    u = 0.1 * rng.standard_normal((panel.n_nodes, rank))
    v = 0.1 * rng.standard_normal((panel.n_times, rank))
    eye = Spd(np.eye(rank))
    return ProbitState(
        z,
        np.zeros(panel.n_covariates),
        cutoffs,
        u,
        v,
        np.zeros(rank),
        eye,
        np.zeros(rank),
        eye,
    )


def _solve_time_factors(theta_vals, u, rank):
    m = u.shape[0]
    pair = (u[:, None, :] * u[None, :, :]).reshape(m * m, rank)
    off = ~np.eye(m, dtype=bool).reshape(-1)
    pair = pair[off]
    G = Spd(pair.T @ pair)
    T = theta_vals.shape[2]
    vals = theta_vals.reshape(m * m, T)[off]
    return G.solve(pair.T @ vals).T


def symmetric_point_factors(theta_bar, rank, rng=None, refine_sweeps=50):
    """Factor point estimates from a posterior-mean symmetric array.

    Starts from a generic rank-R fit, then alternates least-squares
    updates of the node and time factors under the symmetry constraint
    (both dyad modes share the node factors).  Node-factor columns are
    normalized to unit length, time factors rescaled accordingly, and
    columns ordered by decreasing time-factor magnitude.
    """
    if rng is None:
        rng = RngStream(0)
    fit = als_fit(theta_bar, AlsConfig(rank=rank, n_starts=10, rel_tol=1e-10), rng=rng)
    u = np.array(fit.factors[0])
    norms = np.linalg.norm(u, axis=0)
    norms[norms == 0] = 1.0
    u = u / norms
    m = u.shape[0]
    vals = theta_bar.values
    v = _solve_time_factors(vals, u, rank)
    for _ in range(refine_sweeps):
        u_prev = u
        # row-wise node update: responses theta[i, j, t] over j != i
        new_u = np.empty_like(u)
        for i in range(m):
            others = np.delete(np.arange(m), i)
            design = (u[others, None, :] * v[None, :, :]).reshape(-1, rank)
            resp = vals[i, others, :].reshape(-1)
            new_u[i] = Spd(design.T @ design).solve(design.T @ resp)
        norms = np.linalg.norm(new_u, axis=0)
        norms[norms == 0] = 1.0
        u = new_u / norms
        v = _solve_time_factors(vals, u, rank)
        if np.max(np.abs(u - u_prev)) < 1e-13:
            break
    order = np.argsort(-np.linalg.norm(v, axis=0))
    return u[:, order], v[:, order]


def probit_fit(panel, cfg=None):
    """Run the Gibbs sampler and summarize the posterior.

    Reports per-coefficient posterior means, standard deviations, 95%
    intervals and effective sample sizes, posterior-mean cutoffs, the
    posterior-mean effect array, and normalized factor point estimates.
    """
    cfg = cfg or ProbitConfig()
    priors = cfg.priors if cfg.priors is not None else ProbitPriors()
    rng = RngStream(cfg.seed)
    state = _init_state(panel, cfg.rank, priors, rng.substream("init"))

    count = cfg.n_iter // cfg.thin
    beta_draws = np.empty((count, panel.n_covariates))
    cut_sum = np.zeros(panel.n_categories + 1)
    theta_sum = np.zeros((panel.n_nodes, panel.n_nodes, panel.n_times))
    sweep_rng = rng.substream("sweeps")
    saved = 0
    for it in range(1, cfg.n_burn + cfg.n_iter + 1):
        state = probit_gibbs_sweep(panel, state, priors, sweep_rng)
        post = it - cfg.n_burn
        if post >= 1 and post % cfg.thin == 0 and saved < count:
            beta_draws[saved] = state.beta
            cut_sum += np.where(np.isfinite(state.cutoffs), state.cutoffs, 0.0)
            theta_sum += _compose_panel(state.u, state.v).filled(0.0)
            saved += 1

    theta_bar_vals = theta_sum / saved
    m = panel.n_nodes
    mask = np.array(
        np.broadcast_to(np.eye(m, dtype=bool)[:, :, None], theta_bar_vals.shape)
    )
    theta_bar = MultiwayArray(theta_bar_vals, mask=mask)
    u_hat, v_hat = symmetric_point_factors(
        theta_bar, cfg.rank, rng=rng.substream("point")
    )
    cut_mean = cut_sum / saved
    cut_mean[0] = -np.inf
    cut_mean[-1] = np.inf
    q = panel.n_covariates
    interval = np.column_stack(
        [np.quantile(beta_draws, 0.025, axis=0), np.quantile(beta_draws, 0.975, axis=0)]
    )
    return ProbitResult(
        beta_draws=beta_draws,
        beta_mean=beta_draws.mean(axis=0),
        beta_sd=beta_draws.std(axis=0, ddof=1),
        beta_interval=interval,
        beta_ess=np.array(
            [ess(beta_draws[:, d]) if saved >= 10 else float("nan") for d in range(q)]
        ),
        cutoffs_mean=cut_mean,
        theta_bar=theta_bar,
        u_hat=u_hat,
        v_hat=v_hat,
        labels=panel.labels,
    )
