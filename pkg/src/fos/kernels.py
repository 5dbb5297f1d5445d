"""Gaussian kernels for the deformation RKHS, the current metric and the
functional-current weighting.

Isotropic matrix kernels are stored as their scalar factor; the implicit
3x3-identity structure is applied in matrix-vector products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _sqdist(a, b):
    """Pairwise squared distances via the matmul expansion (BLAS-fast)."""
    aa = np.sum(a * a, axis=1)
    bb = np.sum(b * b, axis=1)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


@dataclass(frozen=True)
class GaussianKernel:
    """exp(-|x-y|^2 / (2 sigma^2)), optionally plus a weighted second kernel."""

    sigma: float
    sigma2: float | None = None
    weight: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.sigma2 is not None and self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.weight < 0:
            raise ValueError("weight must be non-negative")

    def eval(self, x, y):
        """Kernel value between two 3-vectors (or broadcastable arrays)."""
        d2 = np.sum((np.asarray(x, float) - np.asarray(y, float)) ** 2, axis=-1)
        return self._from_sqdist(d2)

    def _from_sqdist(self, d2):
        k = np.exp(-d2 / (2.0 * self.sigma ** 2))
        if self.sigma2 is not None:
            k = k + self.weight * np.exp(-d2 / (2.0 * self.sigma2 ** 2))
        return k

    def gram(self, points_a, points_b=None):
        """Dense |a| x |b| matrix of kernel values."""
        a = np.asarray(points_a, float)
        b = a if points_b is None else np.asarray(points_b, float)
        return self._from_sqdist(_sqdist(a, b))

    def grad_factor(self, d2):
        """Radial factor gamma(d2) with grad_1 K(x, y) = gamma * (x - y)."""
        g = -np.exp(-d2 / (2.0 * self.sigma ** 2)) / self.sigma ** 2
        if self.sigma2 is not None:
            g = g - self.weight * np.exp(-d2 / (2.0 * self.sigma2 ** 2)) \
                / self.sigma2 ** 2
        return g

    def gram_pair(self, points_a, points_b=None):
        """(gram, grad_factor) evaluated from a single distance computation."""
        a = np.asarray(points_a, float)
        b = a if points_b is None else np.asarray(points_b, float)
        d2 = _sqdist(a, b)
        return self._from_sqdist(d2), self.grad_factor(d2)

    def grad_factor2(self, d2):
        """Radial derivative gamma'(d2) of grad_factor; appears in the
        kernel Hessian grad1 grad1 K = 2 gamma' (x-y)(x-y)^T + gamma I."""
        g2 = np.exp(-d2 / (2.0 * self.sigma ** 2)) / (2.0 * self.sigma ** 4)
        if self.sigma2 is not None:
            g2 = g2 + self.weight * np.exp(-d2 / (2.0 * self.sigma2 ** 2)) \
                / (2.0 * self.sigma2 ** 4)
        return g2

    def gram_triple(self, points_a, points_b=None):
        """(gram, grad_factor, grad_factor2) from one distance computation."""
        a = np.asarray(points_a, float)
        b = a if points_b is None else np.asarray(points_b, float)
        d2 = _sqdist(a, b)
        return self._from_sqdist(d2), self.grad_factor(d2), self.grad_factor2(d2)

    def gradient(self, x, y):
        """Gradient of eval with respect to x."""
        diff = np.asarray(x, float) - np.asarray(y, float)
        d2 = np.sum(diff ** 2, axis=-1)
        g = -np.exp(-d2 / (2.0 * self.sigma ** 2)) / self.sigma ** 2
        if self.sigma2 is not None:
            g = g - self.weight * np.exp(-d2 / (2.0 * self.sigma2 ** 2)) / self.sigma2 ** 2
        return diff * np.expand_dims(g, -1)

    def gram_gradient(self, points_a, points_b):
        """(|a|, |b|, 3) array of gradients wrt the first argument."""
        a = np.asarray(points_a, float)
        b = np.asarray(points_b, float)
        diff = a[:, None, :] - b[None, :, :]
        g = self.grad_factor(np.sum(diff ** 2, axis=-1))
        return diff * g[..., None]


def scalar_gaussian(sigma):
    """Scalar kernel on function values, exp(-(x-y)^2 / (2 sigma^2)).

    sigma may be inf, in which case the kernel is identically 1 and the
    functional-current metric degenerates to the plain current metric.
    """
    if sigma != np.inf and sigma <= 0:
        raise ValueError("sigma must be positive or inf")

    def k(x, y):
        if np.isinf(sigma):
            return np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        d = np.asarray(x, float) - np.asarray(y, float)
        return np.exp(-d ** 2 / (2.0 * sigma ** 2))

    return k


def default_deformation_kernel(mesh, large=0.4, small=0.1):
    """Two-kernel sum sized relative to the template bounding-box diagonal."""
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    return GaussianKernel(sigma=large * diag, sigma2=small * diag, weight=1.0)
