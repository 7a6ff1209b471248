"""Scikit-learn style estimator fronts for the package's model fitters.

All estimators follow the usual conventions: hyperparameters are stored
verbatim in ``__init__``, learned quantities carry trailing underscores,
``get_params``/``set_params`` come from ``BaseEstimator``, and inputs are
validated in ``fit``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .als import AlsConfig, als_fit, rank_r_approx
from .arrays import compose_values, sq_norm
from .gibbs import ChainConfig, dic, ess, posterior_theta, run_chain
from .means import CrossTabData, MeansConfig, means_fit
from .probit import OrdinalPanel, ProbitConfig, probit_fit
from .validation import check_matrix, check_positive, check_rng, check_tensor

__all__ = [
    "CPDecomposition",
    "MultilinearBayes",
    "CrossClassifiedMeans",
    "OrdinalNetworkProbit",
]


def _require_fitted(est, attr):
    if not hasattr(est, attr):
        raise NotFittedError(
            f"{type(est).__name__} is not fitted yet; call fit first"
        )


class CPDecomposition(BaseEstimator):
    """Rank-R multilinear decomposition by multi-start alternating least
    squares.

    Parameters mirror the fitting configuration: ``rank``, number of
    random starts, convergence tolerance on the squared relative change
    of the composed estimate, and the per-start sweep cap.
    """

    def __init__(self, rank=2, n_starts=20, tol=1e-6, max_sweeps=5000, random_state=None):
        self.rank = rank
        self.n_starts = n_starts
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.random_state = random_state

    def fit(self, X, y=None, mask=None):
        a = check_tensor(X, mask=mask)
        check_positive("rank", self.rank)
        cfg = AlsConfig(
            rank=self.rank,
            n_starts=self.n_starts,
            rel_tol=self.tol,
            max_sweeps=self.max_sweeps,
        )
        res = als_fit(a, cfg, rng=check_rng(self.random_state))
        self.factors_ = list(res.factors)
        self.rss_ = res.rss
        self.n_sweeps_ = res.sweeps
        self.converged_ = res.converged
        self.dims_ = a.dims
        self.relative_residual_ = res.relative_residual(a)
        return self

    def reconstruct(self):
        """Dense array composed from the fitted factors."""
        _require_fitted(self, "factors_")
        return compose_values(self.factors_)

    def score(self, X, y=None, mask=None):
        """Fraction of squared norm explained (1 - RSS/|X|^2)."""
        _require_fitted(self, "factors_")
        a = check_tensor(X, mask=mask)
        resid = a.values - self.reconstruct()
        if a.mask is not None:
            resid = resid[~a.mask]
        return 1.0 - float(np.sum(resid**2)) / sq_norm(a)


class MultilinearBayes(BaseEstimator):
    """Posterior-mean estimation of a reduced-rank array by Gibbs sampling.

    ``prior='hierarchical'`` learns per-mode factor means and covariances
    from the data; ``prior='flat'`` fixes independent normal(0, tau2)
    factor entries.
    """

    def __init__(
        self,
        rank=2,
        prior="hierarchical",
        n_burn=1000,
        n_iter=10000,
        thin=1,
        tau2=100.0,
        psi_scale="gram",
        random_state=None,
    ):
        self.rank = rank
        self.prior = prior
        self.n_burn = n_burn
        self.n_iter = n_iter
        self.thin = thin
        self.tau2 = tau2
        self.psi_scale = psi_scale
        self.random_state = random_state

    def fit(self, X, y=None, mask=None):
        a = check_tensor(X, mask=mask)
        mode = {"hierarchical": "hier", "flat": "flat"}.get(self.prior)
        if mode is None:
            raise ValueError(f"prior must be 'hierarchical' or 'flat', got {self.prior!r}")
        cfg = ChainConfig(
            rank=self.rank,
            n_burn=self.n_burn,
            n_iter=self.n_iter,
            thin=self.thin,
            mode=mode,
            tau2_flat=self.tau2,
            psi_scale=self.psi_scale,
        )
        chain = run_chain(a, cfg, rng=check_rng(self.random_state))
        self.chain_ = chain
        self.theta_ = posterior_theta(chain).values
        self.sigma2_trace_ = chain.sigma2
        self.dic_, self.p_eff_ = dic(chain, a)
        self.ess_theta_norm2_ = ess(chain.theta_norm2) if chain.count >= 10 else float("nan")
        self.dims_ = a.dims
        return self

    def point_factors(self, n_starts=10):
        """Rank-R factor point estimates extracted from the posterior mean."""
        _require_fitted(self, "theta_")
        return list(
            rank_r_approx(
                self.theta_, self.rank, n_starts=n_starts,
                rng=check_rng(self.random_state).substream("point"),
            )
        )

    def score(self, X, y=None, mask=None):
        _require_fitted(self, "theta_")
        a = check_tensor(X, mask=mask)
        resid = a.values - self.theta_
        if a.mask is not None:
            resid = resid[~a.mask]
        return 1.0 - float(np.sum(resid**2)) / sq_norm(a)


class CrossClassifiedMeans(BaseEstimator):
    """Hierarchical reduced-rank estimation of cell means for multivariate
    responses cross-classified by categorical variables."""

    def __init__(
        self,
        rank=2,
        n_burn=2000,
        n_iter=20000,
        thin=10,
        standardize=True,
        random_state=None,
    ):
        self.rank = rank
        self.n_burn = n_burn
        self.n_iter = n_iter
        self.thin = thin
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, y):
        """Fit from level codes ``X`` (n, K ints, 0-based) and responses
        ``y`` (n, p)."""
        X = check_matrix(X, "X", dtype=int)
        y = np.asarray(y, dtype=float)
        data = CrossTabData(y, X)
        seed = check_rng(self.random_state).seed
        cfg = MeansConfig(
            rank=self.rank,
            n_burn=self.n_burn,
            n_iter=self.n_iter,
            thin=self.thin,
            seed=seed,
            standardize=self.standardize,
        )
        res = means_fit(data, cfg)
        self.result_ = res
        self.levels_ = res.levels
        self.cell_means_ = res.mu_hat * res.y_scale + res.y_mean
        self.systematic_means_ = res.b_hat * res.y_scale + res.y_mean
        self.factors_ = res.u_hat
        self.variable_factors_ = res.v_hat
        self.shrinkage_ = res.shrinkage
        return self

    def predict(self, X):
        """Estimated mean response for each row of level codes."""
        _require_fitted(self, "cell_means_")
        X = check_matrix(X, "X", dtype=int)
        if X.shape[1] != len(self.levels_):
            raise ValueError(
                f"X has {X.shape[1]} columns; model was fit with {len(self.levels_)}"
            )
        cells = np.ravel_multi_index(tuple(X.T), self.levels_)
        return self.cell_means_[cells]


class OrdinalNetworkProbit(BaseEstimator):
    """Ordered-probit regression for symmetric dyadic panels with
    low-rank multiplicative residual structure."""

    def __init__(self, rank=2, n_burn=500, n_iter=50000, thin=10, random_state=None):
        self.rank = rank
        self.n_burn = n_burn
        self.n_iter = n_iter
        self.thin = thin
        self.random_state = random_state

    def fit(self, X, y):
        """Fit from dyad rows ``X`` = (i, j, t, covariates...) and ordinal
        labels ``y``.  Node/time indices are 0-based and require i < j."""
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] < 4:
            raise ValueError("X must have columns (i, j, t, x1, ...)")
        panel = OrdinalPanel(
            X[:, 0].astype(int),
            X[:, 1].astype(int),
            X[:, 2].astype(int),
            np.asarray(y),
            X[:, 3:].astype(float),
        )
        seed = check_rng(self.random_state).seed
        cfg = ProbitConfig(
            rank=self.rank,
            n_burn=self.n_burn,
            n_iter=self.n_iter,
            thin=self.thin,
            seed=seed,
        )
        res = probit_fit(panel, cfg)
        self.result_ = res
        self.beta_ = res.beta_mean
        self.beta_interval_ = res.beta_interval
        self.beta_ess_ = res.beta_ess
        self.cutoffs_ = res.cutoffs_mean
        self.u_ = res.u_hat
        self.v_ = res.v_hat
        self.labels_ = res.labels
        return self

    def predict_latent(self, X):
        """Regression part of the latent score for new dyad rows."""
        _require_fitted(self, "beta_")
        X = np.asarray(X)
        return X[:, 3:].astype(float) @ self.beta_
