"""Nonlinear spectral transform over a flow trajectory.

For snapshots ``u_0 .. u_K`` at ``t_k = k dt`` the bands are

    phi_k = t_k (u_{k+1} - 2 u_k + u_{k-1}) / dt^2,   k = 1 .. K-1,

stored as densities so that ``sum_k phi_k dt`` integrates over time. Summation
by parts gives

    sum_k phi_k dt = u_0 - u_K + K (u_K - u_{K-1}),

so with ``residual = u_K - K (u_K - u_{K-1})`` the reconstruction
``sum_k phi_k dt + residual`` returns ``u_0`` exactly, whatever the horizon.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .solvers import FlowTrajectory

KINDS = ("LPF", "HPF", "BPF")


class SpectralError(ValueError):
    pass


@dataclass
class SpectralDecomposition:
    times: np.ndarray
    bands: np.ndarray  # (K-1, H, W)
    residual: np.ndarray
    dt: float
    source_mean: float


@dataclass(frozen=True)
class SpectralFilter:
    kind: str
    tc: Optional[float] = None
    t1: Optional[float] = None
    t2: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpectralError(f"filter kind must be one of {KINDS}")
        if self.kind == "BPF":
            if self.t1 is None or self.t2 is None or not (0 <= self.t1 <= self.t2):
                raise SpectralError("BPF needs 0 <= t1 <= t2")
        elif self.tc is None or self.tc < 0:
            raise SpectralError(f"{self.kind} needs tc >= 0")

    def response(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "LPF":
            return (t >= self.tc).astype(np.float64)
        if self.kind == "HPF":
            return (t <= self.tc).astype(np.float64)
        return ((t >= self.t1) & (t <= self.t2)).astype(np.float64)

    @property
    def passes_residual(self) -> bool:
        return self.kind == "LPF"


@dataclass
class Spectrum:
    times: np.ndarray
    values: np.ndarray


def decompose(traj: FlowTrajectory, rtol: float = 1e-9) -> SpectralDecomposition:
    snaps = traj.snapshots
    if len(snaps) < 3:
        raise SpectralError("need at least 3 snapshots")
    steps = np.diff(np.asarray(traj.times, dtype=np.float64))
    dt = float(steps[0])
    if dt <= 0 or not np.allclose(steps, dt, rtol=rtol, atol=0):
        raise SpectralError("trajectory time step is not uniform")
    U = np.stack(snaps)
    K = len(snaps) - 1
    k = np.arange(1, K, dtype=np.float64)
    bands = (k * dt)[:, None, None] * (U[2:] - 2.0 * U[1:-1] + U[:-2]) / dt**2
    residual = U[K] - K * (U[K] - U[K - 1])
    return SpectralDecomposition(k * dt, bands, residual, dt, float(U[0].mean()))


def spectrum(dec: SpectralDecomposition) -> Spectrum:
    return Spectrum(dec.times.copy(), np.abs(dec.bands).sum(axis=(1, 2)))


def apply_filter(dec: SpectralDecomposition, H: SpectralFilter, with_residual: Optional[bool] = None) -> np.ndarray:
    """``sum_k H(t_k) phi_k dt``, plus the residual for low-pass filters (or when forced)."""
    w = H.response(dec.times) * dec.dt
    out = np.tensordot(w, dec.bands, axes=1)
    keep = H.passes_residual if with_residual is None else with_residual
    if keep:
        out = out + dec.residual
    return out


def reconstruct(dec: SpectralDecomposition) -> np.ndarray:
    return dec.bands.sum(axis=0) * dec.dt + dec.residual


def concentration(spec: Spectrum, t_center: float, rel_width: float = 0.1) -> float:
    """Fraction of spectral mass with ``|t - t_center| <= rel_width * t_center``."""
    total = float(spec.values.sum())
    if total == 0:
        return 0.0
    near = np.abs(spec.times - t_center) <= rel_width * t_center
    return float(spec.values[near].sum() / total)


def peak_times(spec: Spectrum, n: int = 2, min_separation: int = 3) -> list:
    """Times of the ``n`` largest local maxima of the spectrum, ascending."""
    v = spec.values
    idx = [i for i in range(len(v)) if (i == 0 or v[i] >= v[i - 1]) and (i == len(v) - 1 or v[i] >= v[i + 1])]
    idx.sort(key=lambda i: -v[i])
    chosen = []
    for i in idx:
        if all(abs(i - j) >= min_separation for j in chosen):
            chosen.append(i)
        if len(chosen) == n:
            break
    return sorted(float(spec.times[i]) for i in chosen)


__all__ = [
    "SpectralError", "SpectralDecomposition", "SpectralFilter", "Spectrum", "decompose", "spectrum",
    "apply_filter", "reconstruct", "concentration", "peak_times",
]
