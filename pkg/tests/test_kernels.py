"""Compiled and pure-python kernel backends must agree on the same inputs."""

import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advsim import _kernels_py, kernels

compiled = pytest.importorskip("advsim._kernels", reason="compiled extension not built")

GRID = (0.0, -10.0, 24, 40, 0.5, 0.35, 1.4)  # x0, y0, nx, ny, cell, sigma, cutoff


def cloud(n, seed):
    rng = np.random.default_rng(seed)
    pts = np.empty((n, 3))
    pts[:, 0] = rng.uniform(-2.0, 14.0, n)
    pts[:, 1] = rng.uniform(-12.0, 12.0, n)
    pts[:, 2] = rng.uniform(-2.5, 0.5, n)
    return pts


def split(pts):
    return (
        np.ascontiguousarray(pts[:, 0]),
        np.ascontiguousarray(pts[:, 1]),
        np.ascontiguousarray(pts[:, 2]),
    )


@pytest.mark.parametrize("n", [1, 7, 500])
def test_density_backends_agree(n):
    px, py, _ = split(cloud(n, n))
    a = compiled.bev_density(px, py, *GRID)
    b = _kernels_py.bev_density(px, py, *GRID)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_moments_backends_agree():
    px, py, pz = split(cloud(400, 2))
    got = compiled.bev_moments(px, py, pz, *GRID)
    want = _kernels_py.bev_moments(px, py, pz, *GRID)
    for a, b in zip(got, want):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_point_gradient_backends_agree():
    px, py, _ = split(cloud(300, 3))
    coef = np.sin(np.arange(GRID[2] * GRID[3]))  # arbitrary anchor coefficients
    gxa, gya = compiled.bev_point_gradient(px, py, coef, *GRID)
    gxb, gyb = _kernels_py.bev_point_gradient(px, py, coef, *GRID)
    np.testing.assert_allclose(gxa, gxb, rtol=1e-11, atol=1e-14)
    np.testing.assert_allclose(gya, gyb, rtol=1e-11, atol=1e-14)


def test_cache_path_matches_direct_path():
    for impl in (compiled, _kernels_py):
        px, py, _ = split(cloud(250, 4))
        coef = np.cos(0.1 * np.arange(GRID[2] * GRID[3]))
        cache = impl.bev_cache(px, py, *GRID)
        np.testing.assert_array_equal(cache[0], impl.bev_density(px, py, *GRID))
        gx1, gy1 = impl.bev_gradient_from_cache(cache, coef, GRID[5])
        gx2, gy2 = impl.bev_point_gradient(px, py, coef, *GRID)
        np.testing.assert_allclose(gx1, gx2, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(gy1, gy2, rtol=1e-12, atol=1e-15)


def test_nearest_sq_backends_agree():
    a = cloud(120, 5)
    b = cloud(90, 6)
    da, ia = compiled.nearest_sq(a, b)
    db, ib = _kernels_py.nearest_sq(a, b)
    np.testing.assert_allclose(da, db, rtol=1e-12, atol=1e-14)
    np.testing.assert_array_equal(ia, ib)


def test_nearest_sq_brute_force_oracle():
    a = cloud(40, 7)
    b = cloud(25, 8)
    d, idx = kernels.nearest_sq(a, b)
    full = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
    np.testing.assert_array_equal(idx, np.argmin(full, axis=1))
    np.testing.assert_allclose(d, full.min(axis=1), rtol=0, atol=1e-12)


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 60))
def test_density_agreement_is_not_input_specific(seed, n):
    px, py, _ = split(cloud(n, seed))
    a = compiled.bev_density(px, py, *GRID)
    b = _kernels_py.bev_density(px, py, *GRID)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_density_empty_cloud():
    empty = np.empty(0)
    for impl in (compiled, _kernels_py):
        dens = impl.bev_density(empty, empty, *GRID)
        assert dens.shape == (GRID[2] * GRID[3],)
        assert not dens.any()


def test_cutoff_truncates_contributions():
    # one point far outside every anchor's cutoff window adds nothing
    x0, y0, nx, ny, cell, sigma, cutoff = GRID
    px = np.array([x0 - cutoff - 5 * cell])
    py = np.array([y0 - cutoff - 5 * cell])
    for impl in (compiled, _kernels_py):
        assert not impl.bev_density(px, py, *GRID).any()


def test_backend_env_var_selects_python():
    code = (
        "import advsim.kernels as k; print(k.BACKEND)"
    )
    out = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True, text=True, env={"ADVSIM_BACKEND": "python", "PATH": "/usr/bin:/bin"},
    )
    assert out.stdout.strip() == "python"


def test_backend_env_var_rejects_unknown():
    out = subprocess.run(
        [sys.executable, "-c", "import advsim.kernels"],
        capture_output=True, text=True, env={"ADVSIM_BACKEND": "gpu", "PATH": "/usr/bin:/bin"},
    )
    assert out.returncode != 0
    assert "ADVSIM_BACKEND" in out.stderr
