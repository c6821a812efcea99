"""Eigenfunction diagnostics and shape-preservation predictors.

Includes the eigenvalue formulas ``P/|C|`` and ``a P/|C|``, the ratio image
``p/u``, the ellipse score ``T(u)``, linear-decay fits, the ``a_max`` bounds
and the curvature-conjecture sweep over ellipses.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .grid import TensorField, _check_shape, a2tv_energy, as_scalar
from .shapes import Ellipse, RasterShape, ShapeError, ShapeSpec, convexity_measure, max_curvature_point, rasterize
from .solvers import FlowParams, FlowTrajectory, SolverParams, a2tv_flow
from .tensors import build_set_tensor

log = logging.getLogger(__name__)

SCORE_BAR = 0.0017
EPS_FRACTION = 0.05
SUPPORT_FLOOR = 0.1


class EigenError(ValueError):
    pass


def lambda_tv(shape: RasterShape) -> float:
    if shape.area <= 0:
        raise EigenError("empty shape")
    return shape.perimeter / shape.area


def lambda_a2tv(shape: RasterShape, a: float) -> float:
    if not (0 < a <= 1):
        raise EigenError(f"a must lie in (0, 1], got {a}")
    return a * lambda_tv(shape)


def lambda_estimate(u, A: Optional[TensorField] = None) -> float:
    """Rayleigh-type estimate J_A(u) / |u|^2."""
    u = as_scalar(u)
    nrm = float(np.sum(u * u))
    if nrm == 0:
        raise EigenError("zero input")
    return a2tv_energy(u, A) / nrm


def ratio_image(u, p, support_floor: float = SUPPORT_FLOOR) -> np.ndarray:
    """``p / u`` where ``|u| >= support_floor * max|u|``; NaN elsewhere."""
    u = as_scalar(u, "u")
    p = as_scalar(p, "p")
    _check_shape(u.shape, p.shape)
    if not support_floor > 0:
        raise EigenError("support_floor must be > 0")
    peak = float(np.abs(u).max())
    support = np.abs(u) >= support_floor * peak
    if peak == 0 or not support.any():
        raise EigenError("empty support")
    r = np.full(u.shape, np.nan)
    r[support] = p[support] / u[support]
    return r


def ratio_stats(r, region=None) -> tuple[float, float]:
    """Mean and standard deviation of a ratio image over its support (optionally within ``region``)."""
    vals = r[np.isfinite(r)] if region is None else r[np.asarray(region, bool) & np.isfinite(r)]
    if vals.size == 0:
        raise EigenError("empty support")
    return float(vals.mean()), float(vals.std())


def lambda_hat(traj: FlowTrajectory, region, k: int = 2) -> tuple[float, float]:
    """Eigenvalue of the initial datum from the ratio image at step ``k``.

    ``p_k`` belongs to ``u_{k+1}``, whose eigenvalue is ``lam / (1 - t_{k+1} lam)``
    for an eigenfunction; inverting gives ``1 / lam = t_{k+1} + 1 / mean(r)``.
    Returns ``(lam, std(r) / mean(r))``.
    """
    if not 0 <= k < len(traj.subgradients):
        raise EigenError(f"step {k} outside the trajectory")
    r = ratio_image(traj.snapshots[k + 1], traj.subgradients[k])
    m, sd = ratio_stats(r, region)
    if not m > 0:
        raise EigenError("non-positive mean ratio")
    return 1.0 / (traj.times[k + 1] + 1.0 / m), sd / m


def interior(mask, erode: int = 2) -> np.ndarray:
    return ndimage.binary_erosion(mask, iterations=erode)


def exterior(mask, dilate: int = 2) -> np.ndarray:
    return ~ndimage.binary_dilation(mask, iterations=dilate)


def contrast(u, mask, margin: int = 2) -> float:
    """Mean inside the eroded shape minus mean outside the dilated shape."""
    return float(u[interior(mask, margin)].mean() - u[exterior(mask, margin)].mean())


def half_max_set(u) -> np.ndarray:
    """Level set ``{u >= max(u) / 2}``."""
    return u >= 0.5 * float(u.max())


def iou(m1, m2) -> float:
    union = np.logical_or(m1, m2).sum()
    return float(np.logical_and(m1, m2).sum() / union) if union else 1.0


# --- ellipse score --------------------------------------------------------------

def _probe_points(shape: RasterShape) -> tuple[tuple[float, float], tuple[float, float]]:
    """Centre and probe location (row, col) for the score T(u)."""
    spec = shape.spec
    if spec is None:
        raise EigenError("shape carries no spec; cannot locate centre")
    cy, cx = spec.resolved_center()
    v = spec.variant
    if isinstance(v, Ellipse):
        eps = EPS_FRACTION * v.Ra
        d = v.Ra - eps
        return (cy, cx), (cy + d * math.sin(spec.angle), cx + d * math.cos(spec.angle))
    (py, px), _ = max_curvature_point(shape.mask)
    dy, dx = py - cy, px - cx
    dist = math.hypot(dx, dy)
    if dist == 0:
        raise EigenError("max-curvature point coincides with the centre")
    step = EPS_FRACTION * dist
    return (cy, cx), (py - step * dy / dist, px - step * dx / dist)


def _sample(u, pt) -> float:
    return float(ndimage.map_coordinates(u, [[pt[0]], [pt[1]]], order=1, mode="nearest")[0])


def score_T(u, shape: RasterShape) -> float:
    """``(u(centre) - u(probe)) / u(centre)``."""
    c, q = _probe_points(shape)
    u0 = _sample(u, c)
    if u0 == 0:
        raise EigenError("u vanishes at the centre")
    return (u0 - _sample(u, q)) / u0


def eigen_score(traj: FlowTrajectory, shape: RasterShape, lam: float) -> float:
    """Score of the snapshot nearest ``t = 1 / (10 lam)`` (lower is more eigenfunction-like)."""
    t_eval = 1.0 / (10.0 * lam)
    if traj.times[-1] < t_eval - 0.5 * traj.dt:
        raise EigenError(f"trajectory ends at t={traj.times[-1]:.4g} before t={t_eval:.4g}")
    _, u = traj.snapshot_at(t_eval)
    return score_T(u, shape)


# --- decay ------------------------------------------------------------------------

@dataclass
class DecayFit:
    slope: float
    r_squared: float
    extinction: float  # inf if the contrast never drops below the floor
    contrast0: float
    n_points: int


def decay_fit(traj: FlowTrajectory, shape: RasterShape, window: float = 0.6, floor: float = 0.02) -> DecayFit:
    """Least-squares line through contrast(t) over the first ``window`` of the decay.

    Extinction is the (linearly interpolated) time at which the contrast
    first drops below ``floor`` times its initial value.
    """
    c = np.array([contrast(u, shape.mask) for u in traj.snapshots])
    c0 = c[0]
    if not c0 > 0:
        raise EigenError("degenerate input: no initial contrast")
    t = traj.times
    below = np.nonzero(c < floor * c0)[0]
    if below.size:
        k = int(below[0])
        c1, c2 = c[k - 1], c[k]
        extinction = float(t[k - 1] + (c1 - floor * c0) / (c1 - c2) * (t[k] - t[k - 1]))
    else:
        extinction = math.inf
    # leading run of snapshots that have lost at most ``window`` of the contrast
    n = 0
    while n < len(c) and c[n] >= (1.0 - window) * c0:
        n += 1
    run = np.arange(n)
    if run.size < 5:
        raise EigenError(f"need >= 5 snapshots before extinction, got {run.size}")
    tt, cc = t[run], c[run]
    slope, intercept = np.polyfit(tt, cc, 1)
    pred = slope * tt + intercept
    ss_res = float(np.sum((cc - pred) ** 2))
    ss_tot = float(np.sum((cc - cc.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(slope), float(r2), extinction, float(c0), int(run.size))


# --- a_max family -----------------------------------------------------------------------

def a_max_nonconvex(shape: RasterShape) -> float:
    return convexity_measure(shape)


def a_max_curvature(shape: RasterShape, kappa_max: float) -> float:
    if not kappa_max > 0:
        raise EigenError("kappa_max must be > 0")
    return min((lambda_tv(shape) / kappa_max) ** (1.0 / 3.0), 1.0)


def a_max_combined(shape: RasterShape, kappa_max: float) -> float:
    return min(a_max_nonconvex(shape), a_max_curvature(shape, kappa_max))


def f_cr_theory(shape: RasterShape, kappa_max: float) -> float:
    return max(kappa_max / lambda_tv(shape), 1.0)


def f_cr_exp(a_cr: float) -> float:
    return 1.0 / a_cr**3


def xi_tilde(xi, A: TensorField) -> np.ndarray:
    """``A xi`` per pixel."""
    return A.apply(xi)


# --- reports ----------------------------------------------------------------------------

@dataclass
class EigenReport:
    lambda_theory: float
    lambda_estimate: float
    lambda_hat: float  # from the ratio image of the flow
    score_T: Optional[float]
    ratio_mean: float
    ratio_std: float
    decay_slope: float
    decay_r_squared: float
    extinction: float
    is_eigen: bool
    resolution: tuple = (256, 256)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        if math.isinf(d["extinction"]):
            d["extinction"] = None
        return d


def ellipse_flow_params(lam: float, steps: int = 4, tol: float = 1e-6, max_iters: int = 5000) -> FlowParams:
    """Flow reaching ``t = 1/(10 lam)`` in ``steps`` accelerated primal-dual steps."""
    return FlowParams(dt=1.0 / (10.0 * lam * steps), steps=steps,
                      inner=SolverParams(max_iters=max_iters, tol=tol), solver="chambolle_pock")


def eigen_report(shape: RasterShape, a: float, params: Optional[FlowParams] = None, score_bar: float = SCORE_BAR) -> EigenReport:
    """Flow the shape's indicator under the set tensor and collect all diagnostics."""
    lam = lambda_a2tv(shape, a)
    A = build_set_tensor(shape.mask, a)
    if params is None:
        params = FlowParams(dt=1.0 / (20.0 * lam), steps=24, inner=SolverParams(max_iters=5000, tol=1e-6),
                            solver="chambolle_pock")
    traj = a2tv_flow(shape.indicator, A, params)
    f = shape.indicator
    inner = interior(shape.mask)
    # p_k is the implicit-step subgradient, so it pairs with u_{k+1}; skip the first steps' transient
    k = min(2, len(traj.subgradients) - 1)
    r = ratio_image(traj.snapshots[k + 1], traj.subgradients[k])
    rm, rs = ratio_stats(r, inner)
    lam_hat, _ = lambda_hat(traj, inner, k)
    try:
        fit = decay_fit(traj, shape)
        slope, r2, ext = fit.slope, fit.r_squared, fit.extinction
    except EigenError:
        slope, r2, ext = float("nan"), float("nan"), math.inf
    score = None
    if traj.times[-1] >= 1.0 / (10.0 * lam) - 0.5 * params.dt:
        try:
            score = eigen_score(traj, shape, lam)
        except EigenError:
            score = None
    is_eigen = score <= score_bar if score is not None else abs(rs / rm) <= 0.05
    return EigenReport(lam, lambda_estimate(f, A), lam_hat, score, rm, rs, slope, r2, ext, bool(is_eigen), tuple(f.shape))


# --- curvature-conjecture sweep ------------------------------------------------------------

@dataclass
class ConjectureSweep:
    ratios: list
    a_values: list
    scores: np.ndarray  # (len(ratios), len(a_values))
    a_cr: list  # per ratio; None when no a passes
    a_cr_interp: list
    f_cr_exp: list
    f_cr_theory: list
    Ra: float
    score_bar: float
    grid: tuple = (256, 256)

    def to_dict(self) -> dict:
        return {
            "ratios": list(map(float, self.ratios)),
            "a_values": list(map(float, self.a_values)),
            "scores": [[float(x) for x in row] for row in self.scores],
            "a_cr": self.a_cr,
            "a_cr_interp": self.a_cr_interp,
            "f_cr_exp": self.f_cr_exp,
            "f_cr_theory": self.f_cr_theory,
            "Ra": self.Ra,
            "score_bar": self.score_bar,
            "grid": list(self.grid),
        }


def ellipse_score(ratio: float, a: float, Ra: float = 100.0, grid=(256, 256), steps: int = 4,
                  tol: float = 1e-6, max_iters: int = 5000) -> float:
    """Score T(u) of the A2TV flow of an ellipse with ``Rb = ratio * Ra`` at ``t = 1/(10 lambda^A)``."""
    shape = rasterize(ShapeSpec(Ellipse(Ra, ratio * Ra), shape=tuple(grid)))
    lam = lambda_a2tv(shape, a)
    A = build_set_tensor(shape.mask, a)
    traj = a2tv_flow(shape.indicator, A, ellipse_flow_params(lam, steps, tol, max_iters))
    return eigen_score(traj, shape, lam)


def _cell(args):
    ratio, a, Ra, grid, steps = args
    return ellipse_score(ratio, a, Ra, grid, steps)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("ANISOFLOW_THREADS", "1")))
    except ValueError:
        return 1


def _a_cr(a_values, scores, bar):
    """Largest passing a (grid value) and the bar crossing interpolated above it."""
    order = np.argsort(a_values)
    av = np.asarray(a_values, float)[order]
    sc = np.asarray(scores, float)[order]
    passing = np.nonzero(sc <= bar)[0]
    if passing.size == 0:
        return None, None
    i = int(passing[-1])
    grid_val = float(av[i])
    if i == len(av) - 1:
        return grid_val, grid_val
    s1, s2 = sc[i], sc[i + 1]
    frac = (bar - s1) / (s2 - s1) if s2 != s1 else 0.0
    return grid_val, float(av[i] + frac * (av[i + 1] - av[i]))


def conjecture_sweep(ratios, a_values, Ra: float = 100.0, score_bar: float = SCORE_BAR,
                     grid=(256, 256), steps: int = 4, workers: Optional[int] = None) -> ConjectureSweep:
    """Score every (ratio, a) cell and extract the critical anisotropy per ratio."""
    for x in list(ratios) + list(a_values):
        if not (0 < x <= 1):
            raise EigenError("ratios and a values must lie in (0, 1]")
    cells = [(float(r), float(a), float(Ra), tuple(grid), steps) for r in ratios for a in a_values]
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            flat = list(ex.map(_cell, cells))
    else:
        flat = [_cell(c) for c in cells]
    scores = np.array(flat, dtype=np.float64).reshape(len(ratios), len(a_values))
    a_cr, a_interp, f_exp, f_th = [], [], [], []
    for i, r in enumerate(ratios):
        g, it = _a_cr(a_values, scores[i], score_bar)
        a_cr.append(g)
        a_interp.append(it)
        f_exp.append(None if g is None else f_cr_exp(g))
        shape = rasterize(ShapeSpec(Ellipse(Ra, r * Ra), shape=tuple(grid)))
        f_th.append(f_cr_theory(shape, shape.kappa_max))
    return ConjectureSweep(list(ratios), list(a_values), scores, a_cr, a_interp, f_exp, f_th, Ra, score_bar, tuple(grid))


__all__ = [
    "SCORE_BAR", "EigenError", "lambda_tv", "lambda_a2tv", "lambda_estimate", "ratio_image", "ratio_stats", "lambda_hat",
    "score_T", "eigen_score", "DecayFit", "decay_fit", "a_max_nonconvex", "a_max_curvature", "a_max_combined",
    "f_cr_theory", "f_cr_exp", "xi_tilde", "EigenReport", "eigen_report", "ConjectureSweep", "conjecture_sweep",
    "ellipse_score", "half_max_set", "iou", "contrast", "interior", "exterior",
]
