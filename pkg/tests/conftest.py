import numpy as np
import pytest

from anisoflow.grid import TensorField


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run long-running experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running experiment, enabled with --run-slow")


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="long-running; use --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_psd_tensor(rng, shape):
    """Random symmetric tensor field with eigenvalues in [0, 1]."""
    theta = rng.uniform(0, np.pi, shape)
    l1 = rng.uniform(0, 1, shape)
    l2 = rng.uniform(0, 1, shape)
    c, s = np.cos(theta), np.sin(theta)
    return TensorField(l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c)


@pytest.fixture
def psd_tensor(rng):
    return lambda shape: random_psd_tensor(rng, shape)


def corner_scene(n=96):
    """Two-plane depth (bright square on a floor) with a round hole over one corner.

    Returns ``(truth, known_mask, guide)``; the guide carries the square's edges.
    """
    yy, xx = np.mgrid[0:n, 0:n]
    square = (yy >= 28) & (yy < 60) & (xx >= 28) & (xx < 60)
    truth = np.where(square, 1.0, 0.2)
    hole = (yy - 59.5) ** 2 + (xx - 59.5) ** 2 <= 12**2
    guide = np.where(square, 200.0, 40.0)
    return truth, ~hole, guide


def falling_crossing(profile, level):
    """Sub-pixel position where ``profile`` last falls through ``level`` (None if it never does)."""
    p = np.asarray(profile, dtype=np.float64)
    idx = np.nonzero((p[:-1] >= level) & (p[1:] < level))[0]
    if not idx.size:
        return None
    i = int(idx[-1])
    return i + (p[i] - level) / (p[i] - p[i + 1])


def radial_blur_scene(n=128, R=30, blur=4.0):
    """Blurred disk (functional image) and a sharp ring at its edge (structural guide)."""
    from anisoflow.grid import gaussian_convolve

    yy, xx = np.mgrid[0:n, 0:n]
    r = np.hypot(yy - n // 2, xx - n // 2)
    f = gaussian_convolve((r <= R).astype(float), blur)
    guide = ((r >= R - 2) & (r <= R + 2)) * 100.0
    return f, guide
