import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import crandn, leibniz_det
from grtf.errors import DataError
from grtf.plucker import (Normalization, PluckerVector, combinations, count_sources,
                          count_sources_all, det_batch, det_small, grtf, normalize,
                          numerical_rank, plucker_transform)
from grtf.spectral import MultiFrameBlock, SpectrogramTensor, StftConfig


# ---------------------------------------------------------------- combinations


def test_combinations_m4_k2():
    idx = combinations(4, 2)
    assert idx.subsets == ((1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4))
    assert idx.L == 6


def test_combinations_edge_cases():
    assert combinations(3, 3).subsets == ((1, 2, 3),)
    assert combinations(5, 1).subsets == ((1,), (2,), (3,), (4,), (5,))


@pytest.mark.parametrize("M,K", [(m, k) for m in range(1, 8) for k in range(1, m + 1)])
def test_combinations_invariants(M, K):
    idx = combinations(M, K)
    assert idx.L == math.comb(M, K)
    assert list(idx.subsets) == sorted(idx.subsets)
    assert all(all(a < b for a, b in zip(s, s[1:])) for s in idx.subsets)
    assert idx.subsets[0] == tuple(range(1, K + 1))
    np.testing.assert_array_equal(idx.rows + 1, np.array(idx.subsets))


@pytest.mark.parametrize("M,K", [(3, 4), (3, 0)])
def test_combinations_errors(M, K):
    with pytest.raises(DataError):
        combinations(M, K)


# ---------------------------------------------------------------- determinants


def test_det_small_trivial():
    assert det_small([[1]]) == 1
    assert det_small([[0, 1], [1, 0]]) == -1


@pytest.mark.parametrize("n", range(1, 7))
def test_det_matches_leibniz(rng, n):
    for _ in range(5):
        A = crandn(rng, n, n)
        assert abs(det_small(A) - leibniz_det(A)) <= 1e-10 * max(1, abs(leibniz_det(A)))


def test_det_multiplicative_3x3(rng):
    for _ in range(50):
        A, B = crandn(rng, 3, 3), crandn(rng, 3, 3)
        lhs = det_small(A @ B)
        rhs = det_small(A) * det_small(B)
        assert abs(lhs - rhs) <= 1e-10 * abs(rhs)


def test_det_elimination_handles_zero_pivots():
    A = np.zeros((4, 4), complex)
    A[0, 1] = A[1, 0] = A[2, 3] = A[3, 2] = 1
    assert det_small(A) == pytest.approx(1)
    assert det_small(np.zeros((5, 5))) == 0
    singular = np.ones((4, 4))
    assert abs(det_small(singular)) < 1e-12


def test_det_batch_shapes(rng):
    A = crandn(rng, 3, 2, 4, 4)
    d = det_batch(A)
    assert d.shape == (3, 2)
    assert abs(d[1, 0] - leibniz_det(A[1, 0])) < 1e-10 * abs(d[1, 0])


def test_det_non_square():
    with pytest.raises(DataError):
        det_small(np.zeros((2, 3)))


# ---------------------------------------------------------------- transform


def test_plucker_k1_is_observation():
    X = np.array([[2 + 1j], [3], [0]])
    p = plucker_transform(X)
    np.testing.assert_array_equal(p.coords, [2 + 1j, 3, 0])


def test_plucker_full_identity():
    np.testing.assert_array_equal(plucker_transform(np.eye(2)).coords, [0.5])


def test_plucker_m3_k2_hand_values():
    X = np.array([[1, 0], [0, 1], [1, 1]])
    np.testing.assert_allclose(plucker_transform(X).coords, [0.5, 0.5, -0.5], atol=1e-15)


def test_plucker_against_leibniz_minors(rng):
    X = crandn(rng, 5, 3)
    ref = [leibniz_det(X[list(rows)]) / 6 for rows in itertools.combinations(range(5), 3)]
    np.testing.assert_allclose(plucker_transform(X).coords, ref, rtol=1e-12)


def test_plucker_accepts_block_and_checks_index():
    X = np.arange(6).reshape(3, 2) + 0j
    blk = MultiFrameBlock(X, 0, 0)
    np.testing.assert_array_equal(plucker_transform(blk).coords, plucker_transform(X).coords)
    with pytest.raises(DataError):
        plucker_transform(X, combinations(4, 2))
    with pytest.raises(DataError):
        plucker_transform(np.zeros((2, 3)))


def test_grassmann_plucker_relation_m4_k2(rng):
    for _ in range(20):
        p = plucker_transform(crandn(rng, 4, 2)).coords
        # coordinates ordered (12, 13, 14, 23, 24, 34)
        rel = p[0] * p[5] - p[1] * p[4] + p[2] * p[3]
        assert abs(rel) <= 1e-12 * np.max(np.abs(p)) ** 2


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.data())
def test_plucker_identity_property(seed, M, data):
    K = data.draw(st.integers(1, M - 1))
    rng = np.random.default_rng(seed)
    A, S = crandn(rng, M, K), crandn(rng, K, K)
    lhs = plucker_transform(A @ S).coords
    rhs = plucker_transform(A).coords * det_small(S)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 6))
def test_column_swap_negates(seed, M):
    rng = np.random.default_rng(seed)
    X = crandn(rng, M, 2)
    np.testing.assert_allclose(plucker_transform(X[:, ::-1]).coords,
                               -plucker_transform(X).coords, rtol=1e-13, atol=1e-15)


# ---------------------------------------------------------------- normalization


def test_normalize_first_entry():
    g = normalize(PluckerVector(np.array([2, 4, 6], complex), 3, 1))
    assert g.valid and g.anchor_index == 0
    np.testing.assert_array_equal(g.values, [1, 2, 3])


def test_normalize_first_entry_zero_anchor_invalid():
    g = normalize(PluckerVector(np.array([0, 1, 1], complex), 3, 1))
    assert not g.valid


def test_normalize_zero_vector_invalid_both():
    for s in Normalization:
        assert not normalize(PluckerVector(np.zeros(3, complex), 3, 1), s).valid


def test_normalize_anchor_max():
    g = normalize(PluckerVector(np.array([1, -4j, 2], complex), 3, 1), Normalization.ANCHOR_MAX)
    assert g.valid and g.anchor_index == 1
    assert g.values[1] == 1
    np.testing.assert_allclose(g.values, [1 / -4j, 1, 2 / -4j])


def test_normalize_scale_invariance(rng):
    p = crandn(rng, 6)
    alpha = 3 - 2j
    for s in Normalization:
        a = normalize(PluckerVector(p, 4, 2), s)
        b = normalize(PluckerVector(alpha * p, 4, 2), s)
        np.testing.assert_allclose(a.values, b.values, rtol=1e-12)
        assert a.anchor_index == b.anchor_index


# ---------------------------------------------------------------- grtf


def test_grtf_k1_recovers_rtf(rng):
    a = crandn(rng, 2)
    s = 0.7 - 1.3j
    g = grtf((a * s)[:, None])
    assert g.valid
    np.testing.assert_allclose(g.values, [1, a[1] / a[0]], rtol=1e-14)


def test_grtf_signal_invariance_k2(rng):
    for _ in range(50):
        A, S = crandn(rng, 4, 2), crandn(rng, 2, 2)
        ga, gx = grtf(A), grtf(A @ S)
        assert ga.valid and gx.valid
        assert np.linalg.norm(ga.values - gx.values) <= 1e-9 * np.linalg.norm(ga.values)


def test_grtf_identical_columns_invalid(rng):
    x = crandn(rng, 4)
    assert not grtf(np.stack([x, x], axis=1)).valid
    assert not grtf(np.stack([x, (2 - 1j) * x], axis=1)).valid


def test_grtf_rank_deficient_k3_invalid(rng):
    A = crandn(rng, 4, 2)
    S = crandn(rng, 2, 3)
    assert not grtf(A @ S).valid


def test_grtf_requires_k_below_m():
    with pytest.raises(DataError):
        grtf(np.eye(3))


def test_grtf_single_column_scaling_invariance(rng):
    X = crandn(rng, 5, 3)
    Y = X.copy()
    Y[:, 1] *= -0.2 + 4j
    np.testing.assert_allclose(grtf(X).values, grtf(Y).values, rtol=1e-12)


def test_grtf_source_permutation_invariance(rng):
    A = crandn(rng, 5, 3)
    for perm in itertools.permutations(range(3)):
        np.testing.assert_allclose(grtf(A[:, perm]).values, grtf(A).values, rtol=1e-12)


def test_instantaneous_rtf_not_signal_invariant(rng):
    A = crandn(rng, 4, 2)
    x1, x2 = A @ crandn(rng, 2), A @ crandn(rng, 2)
    assert np.abs(x1 / x1[0] - x2 / x2[0]).max() > 1e-3


# ---------------------------------------------------------------- rank


def test_rank_outer_product(rng):
    assert numerical_rank(np.outer(crandn(rng, 4), crandn(rng, 3))) == 1


def test_rank_zero():
    assert numerical_rank(np.zeros((4, 3))) == 0


def test_rank_generic_product(rng):
    A, S = crandn(rng, 4, 3), crandn(rng, 3, 3)
    assert numerical_rank(A @ S) == 3


def test_rank_tolerance_domain():
    with pytest.raises(DataError):
        numerical_rank(np.eye(2), 0)
    with pytest.raises(DataError):
        numerical_rank(np.eye(2), 1.5)


def _model_tensor(rng, P, M=4, F=8, T=6):
    A = crandn(rng, F, M, P)
    S = crandn(rng, F, T, P)
    bins = np.einsum("fmp,ftp->ftm", A, S)
    return SpectrogramTensor(bins, 8000, StftConfig(2 * F, F))


@pytest.mark.parametrize("P", [1, 2, 3])
def test_count_sources_noiseless(rng, P):
    spec = _model_tensor(rng, P)
    assert count_sources(spec, 3, 1) == P
    assert np.all(count_sources_all(spec) == P)


def test_count_sources_zero_tensor():
    spec = SpectrogramTensor(np.zeros((4, 5, 4)), 8000, StftConfig(8, 4))
    assert count_sources(spec, 0, 0) == 0


def test_rank_monotone_in_k(rng):
    spec = _model_tensor(rng, 2, M=5, T=8)
    ranks = [numerical_rank(spec.bins[2, 0:K, :].T) for K in range(1, 6)]
    assert ranks == sorted(ranks)
    assert max(ranks) <= 2


def test_count_sources_errors(rng):
    spec = _model_tensor(rng, 1, M=4, T=3)
    with pytest.raises(DataError):
        count_sources(spec, 0, 1)
    mono = SpectrogramTensor(np.ones((4, 5, 1)), 8000, StftConfig(8, 4))
    with pytest.raises(DataError):
        count_sources(mono, 0, 0)
