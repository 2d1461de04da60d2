"""The reference computations themselves, frozen before any sampler ran."""

import numpy as np

from oracles import (
    ar1_covariance,
    constrained_covariance,
    gauss_hermite_posterior_means,
    path_structure,
    sum_to_zero_basis,
)

N_OBS = np.full((3, 2), 30)
N_YES = np.array([[15, 18], [10, 19], [21, 19]])
FROZEN_ALPHA = np.array([0.16873354, -0.28756134, 0.97806919])
FROZEN_GAMMA = np.array([0.07418438, 0.43710061, -0.51128499])


def test_frozen_quadrature_means():
    a, g = gauss_hermite_posterior_means(N_OBS, N_YES, path_structure(3), 1.0, 1000.0)
    np.testing.assert_allclose(a, FROZEN_ALPHA, atol=1e-6)
    np.testing.assert_allclose(g, FROZEN_GAMMA, atol=1e-6)
    assert abs(g.sum()) < 1e-12


def test_quadrature_gaussian_limit():
    # huge counts make the posterior nearly Gaussian; means then approach the empirical logits
    n = np.full((3, 2), 10**6)
    y = (n * np.array([[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]])).astype(int)
    a, g = gauss_hermite_posterior_means(n, y, path_structure(3), 1.0, 1000.0, points=5)
    np.testing.assert_allclose(a, 0.0, atol=1e-4)
    np.testing.assert_allclose(g, 0.0, atol=1e-4)


def test_small_helpers():
    assert ar1_covariance(3, 0.5, 2.0)[0, 2] == 0.125
    B = sum_to_zero_basis(4)
    np.testing.assert_allclose(B.T @ B, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(B.sum(axis=0), 0, atol=1e-12)
    C = constrained_covariance(path_structure(3), np.ones((1, 3)))
    np.testing.assert_allclose(C @ np.ones(3), 0, atol=1e-12)
    np.testing.assert_allclose(C, np.linalg.pinv(path_structure(3)), atol=1e-12)
