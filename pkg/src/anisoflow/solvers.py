"""ROF-A2TV minimization and the A2TV gradient flow.

Convention: for fidelity weight ``w`` the ROF problem is

    min_u  J_A(u) + (w / 2) |u - f|^2,

with solution ``u = f - (1/w) div_A(xi)`` for a dual field ``|xi| <= 1``.
The subgradient is ``p = div_A(xi)``; at the optimum ``<p, u> = J_A(u)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .grid import GridError, TensorField, _check_shape, as_scalar, as_vector, div_a, magnitude

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
SOLVERS = ("chambolle", "chambolle_pock")


class SolverError(RuntimeError):
    """Raised for infeasible inputs to the subgradient routines."""


@dataclass(frozen=True)
class SolverParams:
    tau: float = 1.0 / 8.0
    max_iters: int = 3000
    tol: float = 1e-6
    paper_literal_grad: bool = False

    def __post_init__(self):
        if not (0 < self.tau < 0.25):
            raise ValueError(f"tau must lie in (0, 1/4), got {self.tau}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")


@dataclass
class RofProblem:
    f: np.ndarray
    A: TensorField
    fid_weight: float

    def __post_init__(self):
        self.f = as_scalar(self.f, "f")
        _check_shape(self.A.shape, self.f.shape)
        if not self.fid_weight > 0:
            raise ValueError("fid_weight must be > 0")


@dataclass
class RofSolution:
    u: np.ndarray
    xi: np.ndarray
    p: np.ndarray
    energy_trace: np.ndarray
    residual_trace: np.ndarray
    iterations: int
    converged: bool

    @property
    def final_residual(self) -> float:
        return float(self.residual_trace[-1]) if self.residual_trace.size else 0.0


def _initial_dual(shape, xi0):
    if xi0 is None:
        return np.zeros((2,) + tuple(shape))
    xi0 = as_vector(xi0, "xi0")
    _check_shape(shape, xi0.shape[1:])
    return np.array(xi0, dtype=np.float64, copy=True)


def rof_energy(u, prob: RofProblem) -> float:
    from .grid import a2tv_energy

    return a2tv_energy(u, prob.A) + 0.5 * prob.fid_weight * float(np.sum((u - prob.f) ** 2))


def chambolle_project(prob: RofProblem, params: SolverParams = SolverParams(), xi0=None) -> RofSolution:
    """Chambolle's dual projection adapted to the tensor A.

    Parameters
    ----------
    prob : RofProblem
    params : SolverParams
        ``paper_literal_grad`` swaps the adapted gradient inside the update
        for the plain one.
    xi0 : array (2, H, W), optional
        Warm start for the dual field.
    """
    theta = 1.0 / prob.fid_weight
    xi = _initial_dual(prob.f.shape, xi0)
    px, py = xi[0], xi[1]
    A = prob.A
    energy = np.empty(params.max_iters)
    resid = np.empty(params.max_iters)
    n = _kernels.chambolle_loop(
        prob.f, A.a11, A.a12, A.a22, theta, px, py,
        params.tau, params.max_iters, params.tol, params.paper_literal_grad, energy, resid,
    )
    p = div_a(xi, A)
    u = prob.f - theta * p
    converged = n < params.max_iters or resid[n - 1] < params.tol
    if not converged:
        log.debug("chambolle: no convergence in %d iterations (residual %.3g)", n, resid[n - 1])
    return RofSolution(u, xi, p, energy[:n].copy(), resid[:n].copy(), int(n), bool(converged))


def chambolle_pock_rof(prob: RofProblem, params: SolverParams = SolverParams(), xi0=None, tau0: float = 0.25) -> RofSolution:
    """Accelerated primal-dual (Chambolle-Pock, uniformly convex variant) ROF solver.

    ``params.tau`` is unused; the primal step starts at ``tau0`` and the dual
    step at ``1 / (8 tau0)``, which respects ``|grad_A|^2 <= 8``.
    """
    theta = 1.0 / prob.fid_weight
    A = prob.A
    y = -_initial_dual(prob.f.shape, xi0)
    energy = np.empty(params.max_iters)
    resid = np.empty(params.max_iters)
    u, n = _kernels.chambolle_pock_loop(
        prob.f, A.a11, A.a12, A.a22, theta, y[0], y[1], tau0, params.max_iters, params.tol, energy, resid,
    )
    xi = -y
    p = div_a(xi, A)
    converged = n < params.max_iters or resid[n - 1] < params.tol
    return RofSolution(u, xi, p, energy[:n].copy(), resid[:n].copy(), int(n), bool(converged))


def solve_rof(prob: RofProblem, params: SolverParams = SolverParams(), solver: str = "chambolle", xi0=None) -> RofSolution:
    if solver == "chambolle":
        return chambolle_project(prob, params, xi0)
    if solver == "chambolle_pock":
        return chambolle_pock_rof(prob, params, xi0)
    raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")


def duality_gap(prob: RofProblem, sol: RofSolution) -> float:
    """Primal minus dual objective (>= 0 for feasible ``xi``)."""
    d = div_a(sol.xi, prob.A)
    theta = 1.0 / prob.fid_weight
    dual = float(np.sum(prob.f * d)) - 0.5 * theta * float(np.sum(d * d))
    return rof_energy(sol.u, prob) - dual


@dataclass(frozen=True)
class FlowParams:
    dt: float
    steps: int
    inner: SolverParams = field(default_factory=SolverParams)
    solver: str = "chambolle"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")


@dataclass
class FlowTrajectory:
    times: np.ndarray
    snapshots: list
    subgradients: list
    duals: list
    iterations: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def __len__(self):
        return len(self.snapshots)

    def snapshot_at(self, t: float) -> tuple[int, np.ndarray]:
        """Index and snapshot nearest to time ``t``."""
        k = int(np.argmin(np.abs(self.times - t)))
        return k, self.snapshots[k]


def a2tv_flow(f, A: TensorField, params: FlowParams) -> FlowTrajectory:
    """Implicit (proximal) time stepping of ``u_t = -p``, ``p`` in the subdifferential of J_A.

    Each step solves an ROF problem with ``fid_weight = 1/dt`` started from
    the previous step's dual field.
    """
    f = as_scalar(f, "f")
    _check_shape(A.shape, f.shape)
    u = f.copy()
    snaps = [u]
    subs, duals, iters, resids = [], [], [], []
    xi = None
    for k in range(params.steps):
        sol = solve_rof(RofProblem(u, A, 1.0 / params.dt), params.inner, params.solver, xi)
        xi = sol.xi
        u_next = sol.u
        subs.append((u - u_next) / params.dt)
        duals.append(sol.xi.copy())
        iters.append(sol.iterations)
        resids.append(sol.final_residual)
        snaps.append(u_next)
        u = u_next
    times = params.dt * np.arange(params.steps + 1, dtype=np.float64)
    return FlowTrajectory(times, snaps, subs, duals, iters, resids)


def subgradient_of(u, xi, A: TensorField) -> np.ndarray:
    """``p = div_A(xi)``; ``xi`` must be dual-feasible (``|xi| <= 1``)."""
    as_scalar(u, "u")
    xi = as_vector(xi, "xi")
    _check_shape(np.shape(u), xi.shape[1:])
    worst = float(magnitude(xi).max())
    if worst > 1.0 + FEAS_TOL:
        raise SolverError(f"dual field violates |xi| <= 1 (max {worst:.6g})")
    return div_a(xi, A)


__all__ = [
    "GridError", "SolverError", "SolverParams", "RofProblem", "RofSolution", "FlowParams",
    "FlowTrajectory", "chambolle_project", "chambolle_pock_rof", "solve_rof", "a2tv_flow",
    "subgradient_of", "rof_energy", "duality_gap",
]
