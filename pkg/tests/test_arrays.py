import numpy as np
import pytest

from multiway.arrays import (
    FactorSet,
    MultiwayArray,
    ShapeError,
    compose,
    compose_values,
    fibers,
    hadamard,
    khatri_rao_skip,
    refold,
    sq_norm,
)
from multiway.rng import RngStream


def brute_compose(mats):
    dims = tuple(m.shape[0] for m in mats)
    rank = mats[0].shape[1]
    out = np.zeros(dims)
    for idx in np.ndindex(*dims):
        out[idx] = sum(
            np.prod([mats[k][idx[k], r] for k in range(len(mats))])
            for r in range(rank)
        )
    return out


class TestCompose:
    def test_rank_one_outer_product(self):
        a = compose([[[1.0], [2.0]], [[3.0], [4.0]]])
        np.testing.assert_array_equal(a.values, [[3.0, 4.0], [6.0, 8.0]])

    def test_all_ones_rank_one(self):
        mats = [np.ones((2, 1))] * 3
        np.testing.assert_array_equal(compose(mats).values, np.ones((2, 2, 2)))

    def test_matches_brute_force_on_integer_factors(self):
        g = RngStream(3)
        mats = [
            g.integers(-3, 4, size=(3, 2)).astype(float),
            g.integers(-3, 4, size=(2, 2)).astype(float),
            g.integers(-3, 4, size=(2, 2)).astype(float),
        ]
        np.testing.assert_allclose(compose(mats).values, brute_compose(mats))

    def test_matrix_case_is_uvt(self):
        g = RngStream(4)
        U = g.standard_normal((5, 3))
        V = g.standard_normal((4, 3))
        np.testing.assert_allclose(compose([U, V]).values, U @ V.T, rtol=1e-13)

    def test_multilinear_rescaling_invariance(self):
        g = RngStream(5)
        for trial in range(5):
            mats = [g.standard_normal((m, 3)) for m in (4, 3, 5)]
            base = compose_values(mats)
            c = 10.0 ** g.uniform(-3, 3)
            scaled = [m.copy() for m in mats]
            scaled[0][:, 1] *= c
            scaled[2][:, 1] /= c
            np.testing.assert_allclose(compose_values(scaled), base, rtol=1e-12)

    def test_joint_column_permutation_invariance(self):
        g = RngStream(6)
        mats = [g.standard_normal((m, 4)) for m in (3, 4, 2)]
        perm = g.permutation(4)
        permuted = [m[:, perm] for m in mats]
        np.testing.assert_allclose(
            compose_values(permuted), compose_values(mats), rtol=1e-12, atol=1e-14
        )


class TestFibers:
    def test_matrix_mode0_is_identity(self):
        a = MultiwayArray([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(fibers(a, 0), a.values)

    def test_matrix_mode1_is_transpose(self):
        a = MultiwayArray([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(fibers(a, 1), a.values.T)

    def test_canonical_order_matches_enumeration(self):
        # canonical column order for mode k cycles through the other modes
        # starting at k+1, first of those fastest
        dims = (2, 3, 2)
        a = MultiwayArray(np.arange(12, dtype=float).reshape(dims))
        M = fibers(a, 1)
        assert M.shape == (3, 4)
        cols = [(i3, i1) for i1 in range(2) for i3 in range(2)]
        # i3 (the mode after 1) varies fastest
        expected = np.empty((3, 4))
        for c, (i3, i1) in enumerate(cols):
            for i2 in range(3):
                expected[i2, c] = a.values[i1, i2, i3]
        np.testing.assert_array_equal(M, expected)

    def test_invalid_mode_raises(self):
        a = MultiwayArray(np.zeros((2, 2)))
        with pytest.raises(ShapeError):
            fibers(a, 2)

    def test_refold_round_trip_every_mode(self):
        g = RngStream(7)
        vals = g.standard_normal((3, 4, 2, 3))
        a = MultiwayArray(vals)
        for k in range(4):
            back = refold(fibers(a, k), a.dims, k)
            np.testing.assert_array_equal(back, vals)

    def test_khatri_rao_pairs_with_fibers(self):
        # with Y = compose(f), every mode satisfies fibers(Y,k) = U_k Z'
        g = RngStream(8)
        mats = [g.standard_normal((m, 3)) for m in (4, 2, 3, 2)]
        y = compose(mats)
        for k in range(4):
            Z = khatri_rao_skip(mats, k)
            np.testing.assert_allclose(
                fibers(y, k), mats[k] @ Z.T, rtol=1e-10, atol=1e-12
            )


class TestNormsAndHadamard:
    def test_sq_norm_zero(self):
        assert sq_norm(MultiwayArray(np.zeros((2, 3)))) == 0.0

    def test_sq_norm_arithmetic(self):
        assert sq_norm(MultiwayArray([[1.0, 2.0], [3.0, 4.0]])) == 30.0

    def test_sq_norm_excludes_masked(self):
        mask = np.array([[True, False], [False, False]])
        a = MultiwayArray([[1.0, 2.0], [3.0, 4.0]], mask=mask)
        assert sq_norm(a) == 29.0

    def test_hadamard_with_ones(self):
        g = RngStream(9)
        A = g.standard_normal((3, 4))
        np.testing.assert_array_equal(hadamard(A, np.ones((3, 4))), A)

    def test_hadamard_arithmetic(self):
        out = hadamard([[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(out, [[5.0, 12.0], [21.0, 32.0]])

    def test_hadamard_scalar_loop_oracle(self):
        g = RngStream(10)
        A = g.standard_normal((3, 3))
        B = g.standard_normal((3, 3))
        out = hadamard(A, B)
        for i in range(3):
            for j in range(3):
                assert out[i, j] == A[i, j] * B[i, j]

    def test_hadamard_shape_mismatch(self):
        with pytest.raises(ShapeError):
            hadamard(np.zeros((2, 2)), np.zeros((2, 3)))


class TestTypes:
    def test_needs_two_modes(self):
        with pytest.raises(ShapeError):
            MultiwayArray([1.0, 2.0])

    def test_mask_shape_checked(self):
        with pytest.raises(ShapeError):
            MultiwayArray(np.zeros((2, 2)), mask=np.zeros((2, 3), bool))

    def test_observed_nan_rejected(self):
        with pytest.raises(ValueError):
            MultiwayArray([[np.nan, 1.0], [0.0, 0.0]])

    def test_masked_nan_allowed(self):
        mask = np.array([[True, False], [False, False]])
        a = MultiwayArray([[np.nan, 1.0], [2.0, 3.0]], mask=mask)
        assert a.n_observed == 3
        np.testing.assert_array_equal(a.observed_values(), [1.0, 2.0, 3.0])
        assert a.filled(0.0)[0, 0] == 0.0

    def test_values_read_only(self):
        a = MultiwayArray(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            a.values[0, 0] = 1.0

    def test_from_missing_cells(self):
        a = MultiwayArray.from_missing_cells(np.ones((2, 2)), [(0, 1)])
        assert a.mask[0, 1] and a.n_observed == 3

    def test_degenerate_length_one_mode_allowed(self):
        a = MultiwayArray(np.ones((1, 3)))
        assert a.dims == (1, 3)

    def test_factor_rank_mismatch(self):
        with pytest.raises(ShapeError):
            FactorSet([np.zeros((2, 2)), np.zeros((3, 1))])

    def test_factor_replace(self):
        fs = FactorSet([np.zeros((2, 2)), np.zeros((3, 2))])
        fs2 = fs.replace(0, np.ones((2, 2)))
        assert fs2[0].sum() == 4.0 and fs[0].sum() == 0.0
