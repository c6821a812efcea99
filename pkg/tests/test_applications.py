"""Tests for guided inpainting and guided fusion."""
import numpy as np
import pytest

from anisoflow.applications import FusionProblem, InpaintProblem, fuse, guide_intensity, inpaint
from anisoflow.grid import GridError, TensorField
from anisoflow.solvers import RofProblem, SolverParams, chambolle_project
from conftest import corner_scene, falling_crossing, radial_blur_scene


@pytest.fixture(scope="module")
def corner_runs():
    truth, known, guide = corner_scene()
    f = truth * known
    guided = inpaint(InpaintProblem(f, known, guide, outer_iters=1000, k=0.2))
    iso = inpaint(InpaintProblem(f, known, guide, outer_iters=1000, tensor=TensorField.identity(f.shape)))
    return truth, known, guided, iso


def hole_rmse(u, truth, known):
    return float(np.sqrt(np.mean((u - truth)[~known] ** 2)))


class TestInpaint:
    def test_no_holes_large_weight(self, rng):
        f = rng.uniform(0, 1, size=(24, 24))
        res = inpaint(InpaintProblem(f, np.ones(f.shape, bool), f, outer_iters=50))
        assert np.linalg.norm(res.u - f) / np.linalg.norm(f) <= 1 / (80 * 5) + 1e-3

    def test_guided_beats_isotropic(self, corner_runs):
        truth, known, guided, iso = corner_runs
        assert hole_rmse(guided.u, truth, known) < hole_rmse(iso.u, truth, known)

    @pytest.mark.parametrize("line", [50, 55])
    def test_edge_location(self, corner_runs, line):
        truth, _, guided, _ = corner_runs
        level = 0.6
        # vertical edge crossed along a row, horizontal edge along a column
        for prof_u, prof_t in ((guided.u[line], truth[line]), (guided.u[:, line], truth[:, line])):
            assert abs(falling_crossing(prof_u, level) - falling_crossing(prof_t, level)) <= 1.0

    def test_known_pixels_kept(self, corner_runs):
        truth, known, guided, _ = corner_runs
        rng_f = truth[known].max() - truth[known].min()
        assert np.abs(guided.u - truth)[known].mean() <= 3 / (80 * 5) * rng_f

    def test_range_bounded_isotropic(self, corner_runs):
        truth, known, _, iso = corner_runs
        assert iso.range_excursion <= 0.05
        lo, hi = truth[known].min(), truth[known].max()
        assert lo - 0.05 * (hi - lo) <= iso.u.min() and iso.u.max() <= hi + 0.05 * (hi - lo)

    def test_range_excursion_is_reported(self, corner_runs, caplog):
        # the anisotropic scheme has no discrete maximum principle; excursions are diagnostics
        truth, known, guided, _ = corner_runs
        lo, hi = truth[known].min(), truth[known].max()
        expected = max(guided.u.max() - hi, lo - guided.u.min(), 0) / (hi - lo)
        assert guided.range_excursion == pytest.approx(expected)
        if guided.range_excursion > 0.05:
            with caplog.at_level("WARNING", logger="anisoflow.applications"):
                inpaint(InpaintProblem(truth * known, known, guided.tensor.a11, outer_iters=1000,
                                       tensor=guided.tensor))
            assert any("known-data range" in r.message for r in caplog.records)

    def test_deterministic(self):
        truth, known, guide = corner_scene(48)
        a = inpaint(InpaintProblem(truth * known, known, guide, outer_iters=20))
        b = inpaint(InpaintProblem(truth * known, known, guide, outer_iters=20))
        assert np.array_equal(a.u, b.u)

    def test_rgb_guide(self):
        truth, known, guide = corner_scene(48)
        rgb = np.repeat(guide[..., None], 3, axis=2)
        np.testing.assert_allclose(guide_intensity(rgb), guide)
        a = inpaint(InpaintProblem(truth * known, known, rgb, outer_iters=5))
        b = inpaint(InpaintProblem(truth * known, known, guide, outer_iters=5))
        np.testing.assert_allclose(a.u, b.u, atol=1e-12)

    @pytest.mark.parametrize("kw,err", [
        (dict(mu=0.0), ValueError), (dict(theta=-1.0), ValueError), (dict(tau=0.3), ValueError),
        (dict(outer_iters=0), ValueError), (dict(known_mask=np.zeros((8, 8), bool)), GridError),
        (dict(guide=np.zeros((8, 9))), GridError),
    ])
    def test_invalid(self, kw, err):
        base = dict(f=np.zeros((8, 8)), known_mask=np.ones((8, 8), bool), guide=np.zeros((8, 8)))
        base.update(kw)
        with pytest.raises(err):
            InpaintProblem(**base)


class TestFuse:
    def test_constant_guide_is_plain_rof(self, rng):
        f = rng.normal(size=(32, 32))
        res = fuse(FusionProblem(f, np.full(f.shape, 7.0)))
        plain = chambolle_project(RofProblem(f, TensorField.identity(f.shape), 5 / 3), SolverParams(max_iters=5000))
        np.testing.assert_allclose(res.u, plain.u, atol=1e-12)

    def test_large_weight(self, rng):
        f = rng.uniform(0, 1, size=(32, 32))
        res = fuse(FusionProblem(f, f, mu=1000.0))
        assert np.linalg.norm(res.u - f) / np.linalg.norm(f) <= 0.01

    def test_energy_not_worse_than_input(self, rng):
        f = rng.normal(size=(32, 32))
        res = fuse(FusionProblem(f, rng.normal(size=f.shape)))
        assert res.energy_out <= res.energy_in

    def test_sharper_than_plain_rof(self):
        f, guide = radial_blur_scene()
        res = fuse(FusionProblem(f, guide))
        plain = chambolle_project(RofProblem(f, TensorField.identity(f.shape), 5 / 3), SolverParams(max_iters=5000))
        c = f.shape[0] // 2
        sharp = lambda u: np.abs(np.diff(u[c, c:])).max()
        assert sharp(res.u) > sharp(plain.u)

    def test_invalid(self):
        with pytest.raises(ValueError):
            FusionProblem(np.zeros((4, 4)), np.zeros((4, 4)), mu=0.0)
        with pytest.raises(ValueError):
            FusionProblem(np.zeros((4, 4)), np.zeros((4, 4)), k=-1.0)
        with pytest.raises(GridError):
            FusionProblem(np.zeros((4, 4)), np.zeros((5, 4)))
