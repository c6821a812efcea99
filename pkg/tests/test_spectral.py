"""Tests for the nonlinear spectral transform, filters and reconstruction."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anisoflow.eigen import interior, lambda_hat, lambda_tv
from anisoflow.grid import TensorField
from anisoflow.shapes import Disk, ShapeSpec, rasterize
from anisoflow.solvers import FlowParams, FlowTrajectory, SolverParams, a2tv_flow
from anisoflow.spectral import (
    SpectralDecomposition,
    SpectralError,
    SpectralFilter,
    apply_filter,
    concentration,
    decompose,
    peak_times,
    reconstruct,
    spectrum,
)


def synthetic_traj(snaps, dt=0.5):
    times = dt * np.arange(len(snaps))
    return FlowTrajectory(times, list(snaps), [], [])


@pytest.fixture(scope="module")
def random_dec():
    rng = np.random.default_rng(11)
    f = rng.normal(size=(32, 32))
    traj = a2tv_flow(f, TensorField.identity(f.shape), FlowParams(dt=0.2, steps=30, inner=SolverParams(max_iters=100)))
    return f, decompose(traj)


@pytest.fixture(scope="module")
def disk_eigen():
    shape = rasterize(ShapeSpec(Disk(16), shape=(96, 96), zero_mean=True))
    lam0 = 2 / 16
    traj = a2tv_flow(shape.indicator, TensorField.identity(shape.mask.shape),
                     FlowParams(dt=1 / (40 * lam0), steps=60, inner=SolverParams(max_iters=3000, tol=1e-7),
                                solver="chambolle_pock"))
    return shape, traj


@pytest.fixture(scope="module")
def two_disks():
    specs = [ShapeSpec(Disk(10), shape=(128, 128), center=(36, 36)),
             ShapeSpec(Disk(20), shape=(128, 128), center=(84, 84))]
    shapes = [rasterize(s) for s in specs]
    f = sum(s.mask.astype(float) for s in shapes)
    traj = a2tv_flow(f, TensorField.identity(f.shape),
                     FlowParams(dt=0.25, steps=56, inner=SolverParams(max_iters=3000, tol=1e-7), solver="chambolle_pock"))
    return shapes, decompose(traj)


class TestDecompose:
    def test_constant_flow(self):
        f = np.full((6, 6), 3.0)
        dec = decompose(synthetic_traj([f] * 5))
        assert np.all(dec.bands == 0)
        np.testing.assert_array_equal(dec.residual, f)

    def test_band_formula_on_quadratic_history(self):
        # u(t) = t^2 g has u_tt = 2 g exactly under the second difference
        g = np.arange(6.0).reshape(2, 3)
        dt = 0.5
        dec = decompose(synthetic_traj([(k * dt) ** 2 * g for k in range(5)], dt))
        for k, t in enumerate(dec.times):
            np.testing.assert_allclose(dec.bands[k], t * 2 * g)

    def test_too_few_snapshots(self):
        with pytest.raises(SpectralError):
            decompose(synthetic_traj([np.zeros((2, 2))] * 2))

    def test_nonuniform_dt(self):
        traj = FlowTrajectory(np.array([0.0, 1.0, 2.5]), [np.zeros((2, 2))] * 3, [], [])
        with pytest.raises(SpectralError):
            decompose(traj)

    def test_truncated_linear_decay_is_exact(self):
        # truncation before extinction: the residual carries the remainder
        f = np.array([[1.0, -1.0], [0.5, -0.5]])
        snaps = [(1 - 0.1 * k) * f for k in range(6)]
        dec = decompose(synthetic_traj(snaps, 1.0))
        np.testing.assert_allclose(reconstruct(dec), f, atol=1e-14)


class TestReconstruction:
    def test_random_flow(self, random_dec):
        f, dec = random_dec
        assert np.linalg.norm(reconstruct(dec) - f) / np.linalg.norm(f) <= 1e-6

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 12), dt=st.floats(1e-3, 10.0))
    def test_any_history(self, seed, n, dt):
        rng = np.random.default_rng(seed)
        snaps = list(rng.normal(size=(n, 4, 5)))
        dec = decompose(synthetic_traj(snaps, dt))
        err = np.linalg.norm(reconstruct(dec) - snaps[0]) / np.linalg.norm(snaps[0])
        assert err <= 1e-6

    def test_source_mean(self, random_dec):
        f, dec = random_dec
        assert dec.source_mean == pytest.approx(f.mean())


class TestFilters:
    def test_all_pass_reconstructs(self, random_dec):
        f, dec = random_dec
        out = apply_filter(dec, SpectralFilter("BPF", t1=0.0, t2=1e9), with_residual=True)
        assert np.linalg.norm(out - f) / np.linalg.norm(f) <= 1e-6

    def test_lpf_and_hpf_at_zero(self, random_dec):
        f, dec = random_dec
        lpf = apply_filter(dec, SpectralFilter("LPF", tc=0.0))
        hpf = apply_filter(dec, SpectralFilter("HPF", tc=0.0))
        assert np.linalg.norm(lpf - f) / np.linalg.norm(f) <= 1e-6
        assert np.all(hpf == 0)

    def test_lpf_hpf_complement(self, random_dec):
        f, dec = random_dec
        tc = float(dec.times[7]) + 0.5 * dec.dt  # between bands so the supports are disjoint
        total = apply_filter(dec, SpectralFilter("LPF", tc=tc)) + apply_filter(dec, SpectralFilter("HPF", tc=tc))
        np.testing.assert_allclose(total, reconstruct(dec), atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(split=st.floats(0.05, 0.95), lo=st.floats(0.0, 0.5))
    def test_linearity_on_disjoint_supports(self, random_dec, split, lo):
        _, dec = random_dec
        T = float(dec.times[-1])
        t1, t2, t3 = lo * T, lo * T + split * (1 - lo) * T, T
        mid = t2 + 1e-9
        h1 = apply_filter(dec, SpectralFilter("BPF", t1=t1, t2=t2))
        h2 = apply_filter(dec, SpectralFilter("BPF", t1=mid, t2=t3))
        both = np.tensordot((((dec.times >= t1) & (dec.times <= t2)) | ((dec.times >= mid) & (dec.times <= t3)))
                            * dec.dt, dec.bands, axes=1)
        np.testing.assert_allclose(h1 + h2, both, atol=1e-10)

    def test_residual_handling(self, random_dec):
        _, dec = random_dec
        assert SpectralFilter("LPF", tc=1.0).passes_residual
        assert not SpectralFilter("HPF", tc=1.0).passes_residual
        assert not SpectralFilter("BPF", t1=0.0, t2=1.0).passes_residual

    @pytest.mark.parametrize("kw", [
        dict(kind="XPF", tc=1.0), dict(kind="LPF"), dict(kind="HPF", tc=-1.0),
        dict(kind="BPF", t1=2.0, t2=1.0), dict(kind="BPF", t1=1.0),
    ])
    def test_invalid_filters(self, kw):
        with pytest.raises(SpectralError):
            SpectralFilter(**kw)


class TestSpectrum:
    def test_zero_bands(self):
        dec = SpectralDecomposition(np.array([1.0, 2.0]), np.zeros((2, 3, 3)), np.zeros((3, 3)), 1.0, 0.0)
        sp = spectrum(dec)
        assert np.all(sp.values == 0) and concentration(sp, 1.0) == 0.0

    def test_nonnegative(self, random_dec):
        assert np.all(spectrum(random_dec[1]).values >= 0)

    def test_eigenfunction_concentration(self, disk_eigen):
        shape, traj = disk_eigen
        lam_hat, _ = lambda_hat(traj, interior(shape.mask))
        dec = decompose(traj)
        np.testing.assert_allclose(reconstruct(dec), shape.indicator, atol=1e-10)
        sp = spectrum(dec)
        assert concentration(sp, 1 / lam_hat) >= 0.8
        assert peak_times(sp, 1)[0] == pytest.approx(1 / lam_hat, rel=0.1)

    def test_two_disks_two_peaks(self, two_disks):
        shapes, dec = two_disks
        peaks = peak_times(spectrum(dec), 2)
        expected = sorted(1 / lambda_tv(s) for s in shapes)
        assert peaks[0] < peaks[1]
        for got, want in zip(peaks, expected):
            assert got == pytest.approx(want, rel=0.15)

    def test_band_pass_isolates_disk(self, two_disks):
        shapes, dec = two_disks
        for s in shapes:
            t = 1 / lambda_tv(s)
            g = apply_filter(dec, SpectralFilter("BPF", t1=0.8 * t, t2=1.2 * t))
            m = s.mask.astype(float)
            assert np.corrcoef(g.ravel(), m.ravel())[0, 1] >= 0.9
