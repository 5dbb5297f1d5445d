import numpy as np
import pytest

from fos.kernels import (GaussianKernel, default_deformation_kernel,
                         scalar_gaussian)


def test_eval_matches_formula():
    k = GaussianKernel(sigma=2.0)
    x = np.array([1.0, 0.0, 0.0])
    y = np.array([0.0, 2.0, 0.0])
    assert np.isclose(k.eval(x, y), np.exp(-5.0 / 8.0))


def test_two_kernel_sum():
    k = GaussianKernel(sigma=2.0, sigma2=0.5, weight=0.7)
    x = np.zeros(3)
    y = np.array([1.0, 0.0, 0.0])
    expected = np.exp(-1.0 / 8.0) + 0.7 * np.exp(-1.0 / 0.5)
    assert np.isclose(k.eval(x, y), expected)


def test_gram_symmetric_psd():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(40, 3))
    g = GaussianKernel(sigma=1.3).gram(pts)
    assert np.allclose(g, g.T)
    assert np.linalg.eigvalsh(g).min() > -1e-10
    assert np.allclose(np.diag(g), 1.0)


def test_gram_cross_shape():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(7, 3))
    assert GaussianKernel(sigma=1.0).gram(a, b).shape == (5, 7)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    k = GaussianKernel(sigma=0.9, sigma2=0.3, weight=0.5)
    x, y = rng.normal(size=3), rng.normal(size=3)
    g = k.gradient(x, y)
    eps = 1e-6
    for d in range(3):
        dx = np.zeros(3)
        dx[d] = eps
        fd = (k.eval(x + dx, y) - k.eval(x - dx, y)) / (2 * eps)
        assert np.isclose(g[d], fd, rtol=1e-6, atol=1e-9)


def test_grad_factor_consistent_with_gradient():
    rng = np.random.default_rng(3)
    k = GaussianKernel(sigma=1.1)
    x, y = rng.normal(size=3), rng.normal(size=3)
    d2 = np.sum((x - y) ** 2)
    assert np.allclose(k.grad_factor(d2) * (x - y), k.gradient(x, y))


def test_grad_factor2_is_radial_derivative():
    k = GaussianKernel(sigma=0.8, sigma2=0.4, weight=2.0)
    d2 = 0.73
    eps = 1e-6
    fd = (k.grad_factor(d2 + eps) - k.grad_factor(d2 - eps)) / (2 * eps)
    assert np.isclose(k.grad_factor2(d2), fd, rtol=1e-6)


def test_gram_pair_and_triple_agree_with_gram():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(9, 3))
    k = GaussianKernel(sigma=1.0, sigma2=0.2, weight=0.3)
    g1, f1 = k.gram_pair(pts)
    g2, f2, h2 = k.gram_triple(pts)
    assert np.allclose(g1, k.gram(pts))
    assert np.allclose(g1, g2)
    assert np.allclose(f1, f2)


def test_invalid_parameters_raise():
    with pytest.raises(ValueError):
        GaussianKernel(sigma=0.0)
    with pytest.raises(ValueError):
        GaussianKernel(sigma=1.0, sigma2=-1.0)
    with pytest.raises(ValueError):
        GaussianKernel(sigma=1.0, weight=-0.1)
    with pytest.raises(ValueError):
        scalar_gaussian(-2.0)


def test_scalar_gaussian_infinite_width_is_one():
    k = scalar_gaussian(np.inf)
    assert np.all(k(np.array([1.0, -3.0]), np.array([5.0, 5.0])) == 1.0)


def test_scalar_gaussian_finite():
    k = scalar_gaussian(2.0)
    assert np.isclose(k(1.0, 3.0), np.exp(-0.5))


def test_default_deformation_kernel_scales_with_mesh():
    from fos.synthdata import icosphere
    mesh = icosphere(1, radius=5.0)
    k = default_deformation_kernel(mesh)
    assert k.sigma > k.sigma2 > 0
