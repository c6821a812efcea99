"""Tests for the ROF solvers, the proximal flow and subgradient recovery."""
import numpy as np
import pytest

from anisoflow.grid import TensorField, a2tv_energy, div_a, inner, magnitude
from anisoflow.shapes import Disk, ShapeSpec, analytic_disk, rasterize
from anisoflow.solvers import (
    FlowParams,
    RofProblem,
    SolverError,
    SolverParams,
    a2tv_flow,
    chambolle_pock_rof,
    chambolle_project,
    duality_gap,
    solve_rof,
    subgradient_of,
)
from anisoflow.tensors import boundary_band, build_set_tensor, build_weickert_tensor
from conftest import random_psd_tensor

SOLVERS = ["chambolle", "chambolle_pock"]


@pytest.fixture(scope="module")
def weickert_problem():
    rng = np.random.default_rng(7)
    f = rng.normal(size=(64, 64))
    return RofProblem(f, build_weickert_tensor(f), 4.0)


@pytest.fixture(scope="module")
def weickert_chambolle(weickert_problem):
    return chambolle_project(weickert_problem, SolverParams(max_iters=3000, tol=1e-7))


class TestParams:
    @pytest.mark.parametrize("tau", [0.0, 0.25, -0.1, 1.0])
    def test_tau_range(self, tau):
        with pytest.raises(ValueError):
            SolverParams(tau=tau)

    def test_problem_validation(self):
        with pytest.raises(ValueError):
            RofProblem(np.zeros((4, 4)), TensorField.identity((4, 4)), 0.0)
        with pytest.raises(Exception):
            RofProblem(np.zeros((4, 4)), TensorField.identity((4, 5)), 1.0)

    def test_flow_params(self):
        with pytest.raises(ValueError):
            FlowParams(dt=0.0, steps=3)
        with pytest.raises(ValueError):
            FlowParams(dt=1.0, steps=0)
        with pytest.raises(ValueError):
            FlowParams(dt=1.0, steps=1, solver="gradient_descent")

    def test_unknown_solver(self):
        prob = RofProblem(np.zeros((4, 4)), TensorField.identity((4, 4)), 1.0)
        with pytest.raises(ValueError):
            solve_rof(prob, solver="nope")


class TestRof:
    @pytest.mark.parametrize("solver", SOLVERS)
    def test_constant_input_is_fixed(self, solver, rng):
        f = np.full((16, 16), 2.5)
        sol = solve_rof(RofProblem(f, random_psd_tensor(rng, f.shape), 1.0), solver=solver)
        np.testing.assert_allclose(sol.u, f, atol=1e-12)
        assert np.abs(sol.xi).max() <= 1e-12

    def test_cross_solver_agreement(self, weickert_problem, weickert_chambolle):
        cp = chambolle_pock_rof(weickert_problem, SolverParams(max_iters=20000, tol=1e-7))
        f = weickert_problem.f
        assert np.linalg.norm(cp.u - weickert_chambolle.u) / np.linalg.norm(f) <= 1e-3

    def test_energy_trace_nonincreasing_after_burn_in(self, weickert_chambolle):
        e = weickert_chambolle.energy_trace[10:]
        assert np.all(np.diff(e) <= 1e-9 * np.abs(e[:-1]))

    def test_residual_trace_nonincreasing_after_burn_in(self, weickert_chambolle):
        r = weickert_chambolle.residual_trace[10:]
        assert np.all(np.diff(r) <= 0)

    def test_dual_feasible(self, weickert_chambolle):
        assert magnitude(weickert_chambolle.xi).max() <= 1 + 1e-9

    def test_p_is_recomputable(self, weickert_problem, weickert_chambolle):
        np.testing.assert_array_equal(weickert_chambolle.p, div_a(weickert_chambolle.xi, weickert_problem.A))

    def test_mean_reproduced(self, weickert_problem, weickert_chambolle):
        assert weickert_chambolle.u.mean() == pytest.approx(weickert_problem.f.mean(), abs=1e-10)

    def test_duality_gap_small_and_nonnegative(self, weickert_problem, weickert_chambolle):
        gap = duality_gap(weickert_problem, weickert_chambolle)
        e = a2tv_energy(weickert_chambolle.u, weickert_problem.A)
        assert -1e-9 <= gap <= 1e-3 * e

    def test_pairing_equals_energy(self, weickert_problem, weickert_chambolle):
        sol = weickert_chambolle
        p = subgradient_of(sol.u, sol.xi, weickert_problem.A)
        assert 0.99 <= inner(p, sol.u) / a2tv_energy(sol.u, weickert_problem.A) <= 1.01

    def test_zero_homogeneity_of_dual(self, weickert_problem):
        # ROF of 2f at half the fidelity weight is 2u, whose subgradient equals that of u
        params = SolverParams(max_iters=3000, tol=1e-7)
        f, A = weickert_problem.f, weickert_problem.A
        s1 = chambolle_project(RofProblem(f, A, 4.0), params)
        s2 = chambolle_project(RofProblem(2 * f, A, 2.0), params)
        assert np.abs(s2.xi - s1.xi).max() <= 1e-3
        np.testing.assert_allclose(s2.u, 2 * s1.u, atol=1e-3 * np.abs(f).max())

    def test_paper_literal_mode_runs(self, weickert_problem):
        sol = chambolle_project(weickert_problem, SolverParams(max_iters=200, paper_literal_grad=True))
        assert np.isfinite(sol.u).all()
        assert magnitude(sol.xi).max() <= 1 + 1e-9

    def test_nonconvergence_is_reported(self, weickert_problem):
        sol = chambolle_project(weickert_problem, SolverParams(max_iters=5, tol=0.0))
        assert not sol.converged and sol.iterations == 5 and sol.final_residual > 0


@pytest.fixture(scope="module")
def disk40():
    return rasterize(ShapeSpec(Disk(40), shape=(256, 256)))


class TestDiskEigenfunction:
    @pytest.mark.parametrize("solver", SOLVERS)
    def test_contrast_reduction(self, disk40, solver):
        a = 0.5
        lam = 2 * a / 40
        w = lam / 0.2
        A = build_set_tensor(disk40.mask, a)
        sol = solve_rof(RofProblem(disk40.mask.astype(float), A, w), SolverParams(max_iters=20000, tol=1e-7), solver)
        # compared where the tensor is the identity: the rim band carries the discretized jump
        band = boundary_band(disk40.mask)[0]
        inside = disk40.mask & ~band
        assert np.abs(sol.u[inside] / (1 - lam / w) - 1).max() <= 0.02


class TestFlow:
    def test_constant_flow(self):
        f = np.full((12, 12), -1.5)
        traj = a2tv_flow(f, TensorField.identity(f.shape), FlowParams(dt=1.0, steps=4))
        for u in traj.snapshots:
            np.testing.assert_allclose(u, f, atol=1e-12)

    @pytest.fixture(scope="class")
    @classmethod
    def traj(cls):
        rng = np.random.default_rng(3)
        f = rng.normal(size=(32, 32))
        A = build_weickert_tensor(f)
        return f, A, a2tv_flow(f, A, FlowParams(dt=0.5, steps=8, inner=SolverParams(max_iters=4000, tol=1e-8)))

    def test_times_and_shapes(self, traj):
        f, _, t = traj
        np.testing.assert_allclose(np.diff(t.times), 0.5)
        assert t.times[0] == 0 and len(t.snapshots) == 9 and len(t.subgradients) == 8
        assert all(u.shape == f.shape for u in t.snapshots)
        assert t.snapshot_at(1.1)[0] == 2

    def test_mean_conserved(self, traj):
        f, _, t = traj
        for u in t.snapshots:
            assert u.mean() == pytest.approx(f.mean(), abs=1e-8)

    def test_energy_dissipation(self, traj):
        _, A, t = traj
        e = [a2tv_energy(u, A) for u in t.snapshots]
        assert all(e[k + 1] <= e[k] + 1e-8 for k in range(len(e) - 1))

    def test_step_norm_nonincreasing(self, traj):
        _, _, t = traj
        d = [np.linalg.norm(t.snapshots[k + 1] - t.snapshots[k]) for k in range(len(t.snapshots) - 1)]
        assert all(d[k + 1] <= d[k] * (1 + 1e-4) for k in range(len(d) - 1))

    def test_subgradients_match_differences(self, traj):
        _, A, t = traj
        for k, p in enumerate(t.subgradients):
            np.testing.assert_allclose(p, (t.snapshots[k] - t.snapshots[k + 1]) / t.dt)
            np.testing.assert_allclose(p, div_a(t.duals[k], A), atol=1e-10)


class TestSubgradient:
    def test_zero_dual(self):
        A = TensorField.identity((6, 6))
        assert np.all(subgradient_of(np.zeros((6, 6)), np.zeros((2, 6, 6)), A) == 0)

    def test_infeasible_dual(self):
        xi = np.zeros((2, 6, 6))
        xi[0, 2, 2] = 1.01
        with pytest.raises(SolverError):
            subgradient_of(np.zeros((6, 6)), xi, TensorField.identity((6, 6)))

    @pytest.mark.parametrize("a", [0.25, 0.5, 1.0])
    def test_analytic_disk_field(self, a):
        d = analytic_disk(40, 120, a)
        p = subgradient_of(d.indicator, d.xi, d.tensor)
        far = (np.abs(d.radius - 40) > 2) & (np.abs(d.radius - 120) > 2) & (d.radius < 120)
        inside = far & (d.radius < 40)
        outside = far & (d.radius > 40)
        assert np.abs(p[inside] / (2 * a / 40) - 1).max() <= 0.05
        assert np.abs(p[outside] / (-2 * a * 40 / (d.c0 * 120**2)) - 1).max() <= 0.05
