"""Anisotropy tensors: Weickert structure-tensor route and the set-based route."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridError, TensorField, as_scalar, gaussian_convolve

TIE_EPS = 1e-14


@dataclass(frozen=True)
class StructureTensorParams:
    sigma: float = 1.0  # pre-smoothing std-dev
    rho: float = 4.0  # tensor smoothing std-dev

    def __post_init__(self):
        if self.sigma < 0 or self.rho < 0:
            raise ValueError("sigma and rho must be >= 0")


@dataclass(frozen=True)
class WeickertParams:
    k: float = 1.0
    m: float = 4.0
    c_m: float = 3.3

    def __post_init__(self):
        if not (self.k > 0 and self.m >= 1 and self.c_m > 0):
            raise ValueError("need k > 0, m >= 1, c_m > 0")


@dataclass(frozen=True)
class EigenPair2:
    mu1: float
    mu2: float
    v1: tuple[float, float]
    v2: tuple[float, float]


def eig2x2(a11: float, a12: float, a22: float) -> EigenPair2:
    """Closed-form eigendecomposition of ``[[a11, a12], [a12, a22]]``.

    Eigenvalues are ordered ``mu1 >= mu2``; for a repeated eigenvalue the
    basis is ``v1 = (1, 0)``, ``v2 = (0, 1)``. ``v2`` is ``v1`` rotated by +90
    degrees.
    """
    mu1, mu2, v1x, v1y = eig_field(np.array(a11, float), np.array(a12, float), np.array(a22, float))
    mu1, mu2, v1x, v1y = float(mu1), float(mu2), float(v1x), float(v1y)
    return EigenPair2(mu1, mu2, (v1x, v1y), (-v1y, v1x))


def eig_field(a11, a12, a22):
    """Vectorized :func:`eig2x2`: returns ``(mu1, mu2, v1x, v1y)`` arrays."""
    a11 = np.asarray(a11, dtype=np.float64)
    a12 = np.asarray(a12, dtype=np.float64)
    a22 = np.asarray(a22, dtype=np.float64)
    half_tr = 0.5 * (a11 + a22)
    half_diff = 0.5 * (a11 - a22)
    rad = np.hypot(half_diff, a12)
    mu1 = half_tr + rad
    mu2 = half_tr - rad
    # Eigenvector of mu1 from whichever row of (M - mu2 I) is better conditioned.
    r1x, r1y = a11 - mu2, a12
    r2x, r2y = a12, a22 - mu2
    n1 = np.hypot(r1x, r1y)
    n2 = np.hypot(r2x, r2y)
    use1 = n1 >= n2
    vx = np.where(use1, r1x, r2x)
    vy = np.where(use1, r1y, r2y)
    nrm = np.where(use1, n1, n2)
    tie = (mu1 - mu2) <= TIE_EPS * np.maximum(1.0, np.abs(half_tr))
    safe = np.where(tie | (nrm == 0), 1.0, nrm)
    v1x = np.where(tie, 1.0, vx / safe)
    v1y = np.where(tie, 0.0, vy / safe)
    return mu1, mu2, v1x, v1y


def tensor_from_eigen(v1x, v1y, lam1, lam2) -> TensorField:
    """``V diag(lam1, lam2) V^T`` with ``V = [v1, v1 rotated by 90 degrees]``."""
    a11 = lam1 * v1x * v1x + lam2 * v1y * v1y
    a22 = lam1 * v1y * v1y + lam2 * v1x * v1x
    a12 = (lam1 - lam2) * v1x * v1y
    return TensorField(a11, a12, a22)


def central_gradient(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences (one-sided at the border); returns ``(d/dx, d/dy)``."""
    gy, gx = np.gradient(u)
    return gx, gy


def structure_tensor(u, params: StructureTensorParams = StructureTensorParams()) -> TensorField:
    u = as_scalar(u)
    # shift to a zero minimum first so constant offsets cancel before any rounding in the blur
    gx, gy = central_gradient(gaussian_convolve(u - u.min(), params.sigma))
    return TensorField(
        gaussian_convolve(gx * gx, params.rho),
        gaussian_convolve(gx * gy, params.rho),
        gaussian_convolve(gy * gy, params.rho),
    )


def diffusivity(s, params: WeickertParams = WeickertParams()):
    """Weickert's edge-stopping function: 1 for ``s <= 0``, else ``1 - exp(-C_m / (s/K)^m)``."""
    s_arr = np.asarray(s, dtype=np.float64)
    out = np.ones_like(s_arr)
    pos = s_arr > 0
    with np.errstate(over="ignore", divide="ignore"):
        out[pos] = -np.expm1(-params.c_m / (s_arr[pos] / params.k) ** params.m)
    return float(out) if out.ndim == 0 else out


def build_weickert_tensor(
    u,
    st: StructureTensorParams = StructureTensorParams(),
    wp: WeickertParams = WeickertParams(),
) -> TensorField:
    """Image-driven tensor ``A = V diag(c(mu1 / mean(mu1)), 1) V^T``.

    A constant image has ``mu1 == 0`` everywhere and yields the identity.
    """
    J = structure_tensor(u, st)
    mu1, _, v1x, v1y = eig_field(J.a11, J.a12, J.a22)
    mu1 = np.maximum(mu1, 0.0)  # rounding can leave -0-ish values
    mean = float(mu1.mean())
    s = mu1 / mean if mean > 0 else np.zeros_like(mu1)
    c = diffusivity(s, wp)
    return tensor_from_eigen(v1x, v1y, c, np.ones_like(c))


BOUNDARY_SIGMA = 1.5
BAND_FRACTION = 0.05


def boundary_band(mask, sigma_b: float = BOUNDARY_SIGMA, fraction: float = BAND_FRACTION):
    """Band around a mask boundary and the unit normals of the smoothed indicator there.

    Returns ``(band, nx, ny)``; the band is where the smoothed-indicator
    gradient magnitude exceeds ``fraction`` of its maximum.
    """
    chi = np.asarray(mask, dtype=np.float64)
    gx, gy = central_gradient(gaussian_convolve(chi, sigma_b))
    mag = np.hypot(gx, gy)
    peak = float(mag.max())
    if peak == 0:
        z = np.zeros(chi.shape, dtype=bool)
        return z, np.ones(chi.shape), np.zeros(chi.shape)
    band = mag > fraction * peak
    safe = np.where(mag > 0, mag, 1.0)
    nx = np.where(mag > 0, gx / safe, 1.0)
    ny = np.where(mag > 0, gy / safe, 0.0)
    return band, nx, ny


def build_set_tensor(mask, a: float, sigma_b: float = BOUNDARY_SIGMA, fraction: float = BAND_FRACTION) -> TensorField:
    """Single-parameter tensor: eigenvalue ``a`` along the boundary normal, 1 elsewhere.

    ``mask`` may be a boolean array or anything with a ``mask`` attribute.
    """
    if not (0 < a <= 1):
        raise ValueError(f"anisotropy a must lie in (0, 1], got {a}")
    mask = getattr(mask, "mask", mask)
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise GridError("mask must be 2-D")
    band, nx, ny = boundary_band(mask, sigma_b, fraction)
    lam1 = np.where(band, a, 1.0)
    A = tensor_from_eigen(nx, ny, lam1, np.ones(mask.shape))
    # Off the band the reconstruction is I up to rounding; make it exact.
    a11 = np.where(band, A.a11, 1.0)
    a12 = np.where(band, A.a12, 0.0)
    a22 = np.where(band, A.a22, 1.0)
    return TensorField(a11, a12, a22)


def minor_eigenvalue(A: TensorField) -> np.ndarray:
    return A.eigenvalues()[1]


def weickert_diffusivity_at(s: float, k: float = 1.0, m: float = 4.0, c_m: float = 3.3) -> float:
    """Scalar convenience wrapper used by the CLI diagnostics."""
    if s <= 0:
        return 1.0
    return -math.expm1(-c_m / (s / k) ** m)
