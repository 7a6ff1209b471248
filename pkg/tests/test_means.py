import numpy as np
import pytest
from scipy.stats import spearmanr

from multiway.arrays import compose_values
from multiway.linalg import Spd
from multiway.means import (
    CrossTabData,
    MeansConfig,
    MeansPriors,
    MeansState,
    means_fit,
    means_gibbs_sweep,
)
from multiway.rng import RngStream


def simple_state(data, rank, g, omega_scale=1.0):
    factors = [0.3 * g.standard_normal((m, rank)) for m in data.levels]
    v = 0.3 * g.standard_normal((data.p, rank))
    fmu = [np.zeros(rank) for _ in data.levels]
    fpsi = [Spd(np.eye(rank)) for _ in data.levels]
    return MeansState(
        data.ybar.copy(),
        Spd(np.eye(data.p)),
        Spd(omega_scale * np.eye(data.p)),
        factors,
        v,
        fmu,
        fpsi,
    )


def synthetic_data(g, levels=(4, 3), p=2, rank=1, sigma=0.4, omega=0.3,
                   min_n=0, max_n=25):
    mats = [g.standard_normal((m, rank)) for m in levels]
    v = g.standard_normal((p, rank))
    B = compose_values(mats + [v]).reshape(-1, p)
    xs, ys = [], []
    n_cells = B.shape[0]
    for c in range(n_cells):
        lev = np.unravel_index(c, levels)
        gamma = omega * g.standard_normal(p)
        for _ in range(int(g.integers(min_n, max_n))):
            xs.append(lev)
            ys.append(B[c] + gamma + sigma * g.standard_normal(p))
    return CrossTabData(np.array(ys), np.array(xs), levels), B


class TestCrossTabData:
    def test_counts_and_cell_means(self):
        y = np.array([[1.0], [3.0], [10.0]])
        x = np.array([[0, 0], [0, 0], [1, 1]])
        data = CrossTabData(y, x, (2, 2))
        assert data.counts.tolist() == [2.0, 0.0, 0.0, 1.0]
        assert data.ybar[0, 0] == 2.0
        assert data.ybar[3, 0] == 10.0

    def test_level_codes_validated(self):
        with pytest.raises(ValueError):
            CrossTabData(np.zeros((2, 1)), np.array([[0], [5]]), (2,))

    def test_standardized(self):
        g = RngStream(1)
        data, _ = synthetic_data(g, min_n=1)
        std, mean, scale = data.standardized()
        np.testing.assert_allclose(std.y.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(std.y.std(axis=0), 1.0, rtol=1e-12)


class TestSweep:
    def test_vanishing_cell_noise_pins_means_to_systematic_part(self):
        g = RngStream(2)
        data, _ = synthetic_data(g, min_n=1)
        state = simple_state(data, 1, g, omega_scale=1e-14)
        out = means_gibbs_sweep(data, state, MeansPriors.from_data(data),
                                RngStream(3), update=("mu",))
        beta = state.beta(data.levels)
        np.testing.assert_allclose(out.mu, beta, atol=1e-5)

    def test_empty_cell_draws_around_systematic_mean(self):
        g = RngStream(4)
        y = np.array([[1.0], [2.0]])
        x = np.array([[0], [0]])
        data = CrossTabData(y, x, (3,))
        state = simple_state(data, 1, g, omega_scale=0.5)
        beta = state.beta(data.levels)
        draws = []
        for rep in range(4000):
            out = means_gibbs_sweep(data, state, MeansPriors.from_data(data),
                                    RngStream(5).substream(rep), update=("mu",))
            draws.append(out.mu[2, 0])
        draws = np.asarray(draws)
        assert draws.mean() == pytest.approx(beta[2, 0], abs=0.05)
        assert draws.std() == pytest.approx(np.sqrt(0.5), rel=0.1)

    def test_conjugate_oracle_single_variable(self):
        # p=1, K=1, two cells, everything but the cell means clamped:
        # the Gibbs draws are iid from the closed-form normal posterior
        g = RngStream(6)
        sigma2, omega2 = 0.8, 0.5
        y = np.concatenate([1.0 + np.sqrt(sigma2) * g.standard_normal(12),
                            -2.0 + np.sqrt(sigma2) * g.standard_normal(4)])
        x = np.array([[0]] * 12 + [[1]] * 4)
        data = CrossTabData(y[:, None], x, (2,))
        state = simple_state(data, 1, g)
        state.sigma = Spd(np.array([[sigma2]]))
        state.omega = Spd(np.array([[omega2]]))
        beta = state.beta(data.levels)
        draws = []
        for rep in range(6000):
            out = means_gibbs_sweep(data, state, MeansPriors.from_data(data),
                                    RngStream(7).substream(rep), update=("mu",))
            draws.append(out.mu[:, 0])
        draws = np.asarray(draws)
        for c, n_c in enumerate(data.counts):
            prec = n_c / sigma2 + 1.0 / omega2
            post_mean = (data.ybar[c, 0] * n_c / sigma2 + beta[c, 0] / omega2) / prec
            mcse = draws[:, c].std() / np.sqrt(len(draws))
            assert abs(draws[:, c].mean() - post_mean) < 3 * mcse
            assert draws[:, c].var() == pytest.approx(1.0 / prec, rel=0.1)

    def test_sweep_deterministic(self):
        g = RngStream(8)
        data, _ = synthetic_data(g, min_n=1)
        state = simple_state(data, 1, g)
        priors = MeansPriors.from_data(data)
        a = means_gibbs_sweep(data, state, priors, RngStream(9))
        b = means_gibbs_sweep(data, state, priors, RngStream(9))
        np.testing.assert_array_equal(a.mu, b.mu)
        np.testing.assert_array_equal(a.v, b.v)

    def test_update_subset_leaves_rest_clamped(self):
        g = RngStream(10)
        data, _ = synthetic_data(g, min_n=1)
        state = simple_state(data, 1, g)
        out = means_gibbs_sweep(data, state, MeansPriors.from_data(data),
                                RngStream(11), update=("sigma",))
        np.testing.assert_array_equal(out.mu, state.mu)
        np.testing.assert_array_equal(out.v, state.v)
        assert not np.allclose(out.sigma.matrix, state.sigma.matrix)


class TestMeansFit:
    def test_defaults_match_documented_schedule(self):
        cfg = MeansConfig()
        assert cfg.rank == 2 and cfg.n_burn == 2000
        assert cfg.n_iter == 20000 and cfg.thin == 10

    def test_shrinkage_decreases_with_sample_size(self):
        g = RngStream(12)
        data, _ = synthetic_data(g, levels=(5, 4), min_n=0, max_n=40)
        res = means_fit(data, MeansConfig(rank=1, n_burn=200, n_iter=1200,
                                          thin=3, seed=1))
        table = res.shrinkage_table()
        rho = spearmanr(table[:, 0], table[:, 1]).statistic
        assert rho < 0

    def test_systematic_part_nearly_rank_r(self):
        g = RngStream(13)
        data, _ = synthetic_data(g, min_n=2)
        res = means_fit(data, MeansConfig(rank=1, n_burn=150, n_iter=900,
                                          thin=3, seed=2))
        assert res.b_fit_ratio < 0.01

    def test_standardization_recorded(self):
        g = RngStream(14)
        data, _ = synthetic_data(g, min_n=1)
        res = means_fit(data, MeansConfig(rank=1, n_burn=60, n_iter=240,
                                          thin=3, seed=3))
        np.testing.assert_allclose(res.y_mean, data.y.mean(axis=0))
        np.testing.assert_allclose(res.y_scale, data.y.std(axis=0))
        raw = means_fit(data, MeansConfig(rank=1, n_burn=60, n_iter=240, thin=3,
                                          seed=3, standardize=False))
        np.testing.assert_array_equal(raw.y_mean, np.zeros(data.p))

    def test_recovers_systematic_structure_better_than_raw_cell_fit(self):
        # with sparse cells, posterior shrinkage should beat a plain
        # least-squares fit of the empirical cell means
        from multiway.als import rank_r_approx
        from multiway.arrays import MultiwayArray

        g = RngStream(15)
        data, B = synthetic_data(g, levels=(5, 4), rank=1, min_n=0, max_n=8,
                                 sigma=0.8, omega=0.1)
        std, mean, scale = data.standardized()
        B_std = (B - mean) / scale
        res = means_fit(data, MeansConfig(rank=1, n_burn=300, n_iter=1800,
                                          thin=3, seed=4))
        err_hb = float(np.sum((res.b_hat - B_std) ** 2))
        ybar = std.ybar.copy()
        ybar[std.counts == 0] = std.y.mean(axis=0)
        arr = MultiwayArray(ybar.reshape(std.levels + (std.p,)))
        fs = rank_r_approx(arr, 1, n_starts=10, rng=RngStream(16))
        err_ls = float(np.sum(
            (compose_values(fs).reshape(-1, std.p) - B_std) ** 2
        ))
        assert err_hb < err_ls
