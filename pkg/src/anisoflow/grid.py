"""Discrete calculus on 2-D grids.

Conventions
-----------
* A scalar grid is a float64 array of shape ``(height, width)`` indexed
  ``(row, col)``; spacing is 1.
* A vector field is an array of shape ``(2, height, width)``; component 0 is
  the x (column) direction, component 1 the y (row) direction.
* A tensor field holds the three distinct entries of a symmetric 2x2 matrix
  per pixel (see :class:`TensorField`).

The gradient uses forward differences with a zero last difference (Neumann
for ``u``); the divergence is its exact negative adjoint (Dirichlet for the
dual field).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

PSD_EPS = 1e-12


class GridError(ValueError):
    """Invalid grid shape, dimensions or contents."""


def as_scalar(u, name: str = "u") -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2:
        raise GridError(f"{name} must be 2-D, got shape {u.shape}")
    if u.shape[0] < 2 or u.shape[1] < 2:
        raise GridError(f"{name} must be at least 2x2, got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise GridError(f"{name} contains non-finite values")
    return u


def as_vector(v, name: str = "v") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 3 or v.shape[0] != 2:
        raise GridError(f"{name} must have shape (2, H, W), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise GridError(f"{name} contains non-finite values")
    return v


@dataclass(frozen=True)
class TensorField:
    """Per-pixel symmetric 2x2 matrix ``[[a11, a12], [a12, a22]]``."""

    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray

    def __post_init__(self):
        a11, a12, a22 = (np.asarray(x, dtype=np.float64) for x in (self.a11, self.a12, self.a22))
        if not (a11.shape == a12.shape == a22.shape) or a11.ndim != 2:
            raise GridError("tensor entries must be 2-D arrays of equal shape")
        object.__setattr__(self, "a11", a11)
        object.__setattr__(self, "a12", a12)
        object.__setattr__(self, "a22", a22)

    @classmethod
    def identity(cls, shape) -> "TensorField":
        return cls(np.ones(shape), np.zeros(shape), np.ones(shape))

    @classmethod
    def scaled_identity(cls, shape, s: float) -> "TensorField":
        return cls(np.full(shape, float(s)), np.zeros(shape), np.full(shape, float(s)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.a11.shape

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Per-pixel matrix-vector product ``A(x) v(x)``."""
        v = as_vector(v)
        _check_shape(self.shape, v.shape[1:])
        return np.stack([self.a11 * v[0] + self.a12 * v[1], self.a12 * v[0] + self.a22 * v[1]])

    def eigenvalues(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel eigenvalues ``(mu1, mu2)`` with ``mu1 >= mu2``."""
        half_tr = 0.5 * (self.a11 + self.a22)
        rad = np.hypot(0.5 * (self.a11 - self.a22), self.a12)
        return half_tr + rad, half_tr - rad

    def is_psd(self, eps: float = PSD_EPS) -> bool:
        det = self.a11 * self.a22 - self.a12**2
        return bool(np.all(self.a11 >= -eps) and np.all(self.a22 >= -eps) and np.all(det >= -eps))

    def stack(self) -> np.ndarray:
        return np.stack([self.a11, self.a12, self.a22])


def _check_shape(expected, got):
    if tuple(expected) != tuple(got):
        raise GridError(f"dimension mismatch: {tuple(expected)} vs {tuple(got)}")


def gradient(u) -> np.ndarray:
    """Forward-difference gradient with a zero difference on the last column/row."""
    u = as_scalar(u)
    g = np.zeros((2,) + u.shape)
    g[0, :, :-1] = u[:, 1:] - u[:, :-1]
    g[1, :-1, :] = u[1:, :] - u[:-1, :]
    return g


def divergence(v) -> np.ndarray:
    """Backward-difference divergence, the exact negative adjoint of :func:`gradient`."""
    v = as_vector(v)
    vx, vy = v
    d = np.zeros(vx.shape)
    d[:, 0] = vx[:, 0]
    d[:, 1:-1] = vx[:, 1:-1] - vx[:, :-2]
    d[:, -1] = -vx[:, -2]
    d[0, :] += vy[0, :]
    d[1:-1, :] += vy[1:-1, :] - vy[:-2, :]
    d[-1, :] -= vy[-2, :]
    return d


def grad_a(u, A: TensorField) -> np.ndarray:
    """Adapted gradient ``A grad u``."""
    u = as_scalar(u)
    _check_shape(A.shape, u.shape)
    return A.apply(gradient(u))


def div_a(v, A: TensorField) -> np.ndarray:
    """Adapted divergence ``div(A v)``; negative adjoint of :func:`grad_a`."""
    v = as_vector(v)
    _check_shape(A.shape, v.shape[1:])
    return divergence(A.apply(v))


def magnitude(v) -> np.ndarray:
    v = np.asarray(v)
    return np.sqrt(v[0] ** 2 + v[1] ** 2)


def a2tv_energy(u, A: TensorField | None = None) -> float:
    """Sum over pixels of ``|A grad u|`` (isotropic TV when ``A`` is None or identity)."""
    u = as_scalar(u)
    g = gradient(u) if A is None else grad_a(u, A)
    return float(magnitude(g).sum())


def tv_energy(u) -> float:
    return a2tv_energy(u, None)


def inner(x, y) -> float:
    """Plain grid inner product (sum of elementwise products)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise GridError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.sum(x * y))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled 1-D Gaussian truncated at +-ceil(4 sigma), normalized to unit sum."""
    radius = int(math.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_convolve(u, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with replicate boundary; ``sigma == 0`` is the identity."""
    u = as_scalar(u)
    if sigma < 0:
        raise GridError("sigma must be >= 0")
    if sigma == 0:
        return u.copy()
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(u, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")
