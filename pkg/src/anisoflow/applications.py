"""Guide-driven applications: depth inpainting and functional/structural image fusion."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .grid import GridError, TensorField, _check_shape, as_scalar, div_a
from .io import luma
from .solvers import RofProblem, RofSolution, SolverParams, chambolle_project, rof_energy
from .tensors import StructureTensorParams, WeickertParams, build_weickert_tensor

log = logging.getLogger(__name__)
RANGE_SLACK = 0.05


def guide_intensity(guide) -> np.ndarray:
    """Reduce an RGB guide (H, W, 3) to BT.601 luma; pass 2-D guides through."""
    g = np.asarray(guide, dtype=np.float64)
    if g.ndim == 3 and g.shape[2] >= 3:
        g = luma(g[..., :3])
    return as_scalar(g, "guide")


@dataclass
class InpaintProblem:
    f: np.ndarray
    known_mask: np.ndarray
    guide: np.ndarray
    mu: float = 80.0
    theta: float = 5.0
    tau: float = 1.0 / 8.0
    outer_iters: int = 6000
    inner_proj: int = 5
    k: float = 1.0
    structure: StructureTensorParams = field(default_factory=lambda: StructureTensorParams(sigma=1.0, rho=2.0))
    tensor: Optional[TensorField] = None  # overrides the guide-built tensor

    def __post_init__(self):
        self.f = as_scalar(self.f, "f")
        self.known_mask = np.asarray(self.known_mask).astype(bool)
        _check_shape(self.f.shape, self.known_mask.shape)
        self.guide = guide_intensity(self.guide)
        _check_shape(self.f.shape, self.guide.shape)
        if not (self.mu > 0 and self.theta > 0):
            raise ValueError("mu and theta must be > 0")
        if not (0 < self.tau < 0.25):
            raise ValueError("tau must lie in (0, 1/4)")
        if self.outer_iters < 1 or self.inner_proj < 1:
            raise ValueError("iteration counts must be >= 1")
        if not self.known_mask.any():
            raise GridError("known_mask is empty")


@dataclass
class InpaintResult:
    u: np.ndarray
    v: np.ndarray
    tensor: TensorField
    range_excursion: float = 0.0  # largest step outside the known-data range, as a fraction of that range


def range_excursion(u, known_values) -> float:
    lo, hi = float(known_values.min()), float(known_values.max())
    span = hi - lo
    over = max(float(u.max()) - hi, lo - float(u.min()), 0.0)
    return over / span if span > 0 else over


def inpaint_tensor(prob: InpaintProblem) -> TensorField:
    if prob.tensor is not None:
        _check_shape(prob.f.shape, prob.tensor.shape)
        return prob.tensor
    return build_weickert_tensor(prob.guide, prob.structure, WeickertParams(k=prob.k))


def inpaint(prob: InpaintProblem) -> InpaintResult:
    """Alternating minimization of ``J_A(v) + |u - v|^2/(2 theta) + (mu/2) |M (u - f)|^2``.

    The v-step runs ``inner_proj`` warm-started projection iterations of the
    ROF problem with data ``u``; the u-step is the closed form
    ``u = (mu_hat theta f + v) / (1 + mu_hat theta)`` with ``mu_hat = mu M``.
    """
    A = inpaint_tensor(prob)
    known = prob.known_mask
    f = prob.f
    mu_hat = prob.mu * known.astype(np.float64)
    u = np.where(known, f, float(f[known].mean()))
    xi = np.zeros((2,) + f.shape)
    px, py = xi[0], xi[1]
    e = np.empty(prob.inner_proj)
    res = np.empty(prob.inner_proj)
    v = u
    for _ in range(prob.outer_iters):
        _kernels.chambolle_loop(u, A.a11, A.a12, A.a22, prob.theta, px, py, prob.tau,
                                prob.inner_proj, 0.0, False, e, res)
        v = u - prob.theta * div_a(xi, A)
        u = (mu_hat * prob.theta * f + v) / (1.0 + mu_hat * prob.theta)
    exc = range_excursion(u, f[known])
    if exc > RANGE_SLACK:
        log.warning("inpaint output leaves the known-data range by %.1f%% of the range", 100 * exc)
    return InpaintResult(u, v, A, exc)


@dataclass
class FusionProblem:
    f: np.ndarray
    guide: np.ndarray
    mu: float = 5.0 / 3.0
    k: float = 0.1
    structure: StructureTensorParams = field(default_factory=StructureTensorParams)
    solver: SolverParams = field(default_factory=lambda: SolverParams(max_iters=5000, tol=1e-6))

    def __post_init__(self):
        self.f = as_scalar(self.f, "f")
        self.guide = guide_intensity(self.guide)
        _check_shape(self.f.shape, self.guide.shape)
        if not (self.mu > 0 and self.k > 0):
            raise ValueError("mu and k must be > 0")


@dataclass
class FusionResult:
    u: np.ndarray
    tensor: TensorField
    solution: RofSolution
    energy_in: float
    energy_out: float


def fuse(prob: FusionProblem) -> FusionResult:
    """ROF-A2TV of ``f`` with the tensor taken from the structural guide."""
    A = build_weickert_tensor(prob.guide, prob.structure, WeickertParams(k=prob.k))
    rp = RofProblem(prob.f, A, prob.mu)
    sol = chambolle_project(rp, prob.solver)
    return FusionResult(sol.u, A, sol, rof_energy(prob.f, rp), rof_energy(sol.u, rp))


__all__ = ["InpaintProblem", "InpaintResult", "inpaint", "inpaint_tensor", "FusionProblem", "FusionResult",
           "fuse", "guide_intensity", "range_excursion"]
