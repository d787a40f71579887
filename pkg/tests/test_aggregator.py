import numpy as np
import pytest
from numpy.polynomial import chebyshev as npcheb

from chebmixer import autodiff as ad
from chebmixer.aggregator import (
    aggregate,
    baseline_aggregate,
    cheb_interp_weights,
    init_gamma,
    interp_matrix,
)
from chebmixer.spectral import cheb_nodes, cheb_polynomial_matrix


def test_zero_gamma_gives_zero_weights():
    np.testing.assert_array_equal(cheb_interp_weights(np.zeros((4, 3))).data, 0.0)


def test_k2_first_order_profile():
    x = cheb_nodes(2)
    W = cheb_interp_weights(np.tile(x[:, None], (1, 3))).data
    np.testing.assert_allclose(W, np.tile([[0.0], [1.0], [0.0]], (1, 3)), atol=1e-15)


def test_k2_constant_profile():
    np.testing.assert_allclose(cheb_interp_weights(np.ones((3, 2))).data, [[2, 2], [0, 0], [0, 0]], atol=1e-15)


@pytest.mark.parametrize("K", range(1, 13))
def test_discrete_orthogonality(K):
    T = cheb_polynomial_matrix(K, cheb_nodes(K))
    G = T @ T.T
    off = G - np.diag(np.diag(G))
    assert np.abs(off).max() < 1e-9


@pytest.mark.parametrize("K", range(1, 9))
def test_round_trip_one_hot(K):
    T = cheb_polynomial_matrix(K, cheb_nodes(K))
    for m in range(K + 1):
        W = cheb_interp_weights(np.tile(T[m][:, None], (1, 2))).data
        want = np.zeros(K + 1)
        want[m] = 2.0 if m == 0 else 1.0
        assert np.abs(W - want[:, None]).max() < 1e-10


@pytest.mark.parametrize("K", [1, 3, 7, 12])
def test_halved_mode_is_exact_interpolation(rng, K):
    # independent route: solve the collocation system with numpy's Vandermonde matrix
    x = cheb_nodes(K)
    gamma = rng.standard_normal((K + 1, 3))
    coeffs = np.linalg.solve(npcheb.chebvander(x, K), gamma)
    np.testing.assert_allclose(cheb_interp_weights(gamma, halved_c0=True).data, coeffs, atol=1e-12)
    full = cheb_interp_weights(gamma).data
    np.testing.assert_allclose(full[0], 2 * coeffs[0], atol=1e-12)
    np.testing.assert_allclose(full[1:], coeffs[1:], atol=1e-12)


def test_interp_matrix_entries():
    M = interp_matrix(3)
    x = cheb_nodes(3)
    for k in range(4):
        for j in range(4):
            assert M[k, j] == pytest.approx(0.5 * np.cos(k * np.arccos(x[j])), abs=1e-14)


def test_aggregate_examples(rng):
    xg = rng.standard_normal((5, 3, 4))
    np.testing.assert_allclose(aggregate(xg, np.ones((3, 4))).data, xg.sum(axis=1), atol=1e-14)
    W = cheb_interp_weights(np.tile(cheb_nodes(2)[:, None], (1, 4))).data
    np.testing.assert_allclose(aggregate(xg, W).data, xg[:, 1, :], atol=1e-14)


def test_aggregate_is_bilinear(rng):
    xg, xg2 = rng.standard_normal((2, 6, 4, 3))
    W1, W2 = rng.standard_normal((2, 4, 3))
    assert np.abs(aggregate(xg, W1 + W2).data - aggregate(xg, W1).data - aggregate(xg, W2).data).max() < 1e-12
    assert np.abs(aggregate(xg + xg2, W1).data - aggregate(xg, W1).data - aggregate(xg2, W1).data).max() < 1e-12


def test_aggregate_shape_mismatch():
    with pytest.raises(ValueError):
        aggregate(np.zeros((2, 3, 4)), np.zeros((2, 4)))


def test_gamma_gradient(rng):
    for _ in range(10):
        xg = rng.standard_normal((4, 5, 3))
        rep = ad.grad_check(lambda g: ad.sum_all(aggregate(xg, cheb_interp_weights(g))), [rng.standard_normal((5, 3))])
        assert rep.passed, rep


def test_shared_gamma_broadcasts(rng):
    xg = rng.standard_normal((4, 3, 5))
    gamma = rng.standard_normal((3, 1))
    W = cheb_interp_weights(gamma).data
    np.testing.assert_allclose(aggregate(xg, W).data, aggregate(xg, np.tile(W, (1, 5))).data, atol=1e-14)


def test_permutation_equivariance(rng):
    xg = rng.standard_normal((6, 3, 2))
    W = rng.standard_normal((3, 2))
    perm = rng.permutation(6)
    np.testing.assert_array_equal(aggregate(xg[perm], W).data, aggregate(xg, W).data[perm])


def test_baselines():
    a = np.array([[[1.5, -2.0]], [[1.5, -2.0]]]).transpose(1, 0, 2)  # one node, hops [a, a]
    np.testing.assert_array_equal(baseline_aggregate(a, "mean").data, [[1.5, -2.0]])
    hops = np.array([1.0, 3.0, 2.0])[None, :, None] * np.ones((1, 3, 2))
    np.testing.assert_array_equal(baseline_aggregate(hops, "max").data, [[3.0, 3.0]])
    xg = np.random.default_rng(0).standard_normal((4, 3, 2))
    np.testing.assert_allclose(baseline_aggregate(xg, "sum").data, aggregate(xg, np.ones((3, 2))).data, atol=1e-15)
    with pytest.raises(ValueError):
        baseline_aggregate(xg, "median")


def test_init_gamma():
    p = init_gamma(2, 1, seed=5)
    np.testing.assert_array_equal(p.gamma, [[1], [1], [1]])
    np.testing.assert_allclose(cheb_interp_weights(p.gamma).data[:, 0], [2, 0, 0], atol=1e-15)
    np.testing.assert_array_equal(init_gamma(4, 3, 1).gamma, init_gamma(4, 3, 1).gamma)
