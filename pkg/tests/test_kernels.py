import math
import os
import subprocess
import sys

import numpy as np
import pytest

from geosmooth import kernels
from geosmooth.drivers import run_biaxial

BACKENDS = kernels.backends()
needs_compiled = pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")

TABLE = np.array([
    # E, nu, c, phi, psi, H, plastic
    [1e7, 0.3, 1e4, math.radians(30.0), math.radians(30.0), 0.0, 1.0],
    [2e7, 0.25, 5e3, math.radians(20.0), math.radians(5.0), 1e5, 1.0],
    [5e6, 0.35, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1e7, 0.3, 2e4, 0.0, 0.0, 0.0, 1.0],
])


def random_batch(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    stress = -np.abs(rng.normal(size=(n, 4))) * 1e5
    stress[:, 3] = rng.normal(size=n) * 3e4
    deps = rng.normal(size=(n, 4)) * 3e-3
    deps[:, 2] = 0.0
    kappa = np.abs(rng.normal(size=n)) * 1e3
    mat = rng.integers(0, len(TABLE), size=n)
    return stress, deps, kappa, mat


@needs_compiled
def test_material_update_parity():
    args = random_batch()
    ref = BACKENDS["python"].material_update(*args, TABLE)
    out = BACKENDS["compiled"].material_update(*args, TABLE)
    names = ["stress", "plastic strain", "kappa", "region", "dlambda", "tangent"]
    np.testing.assert_array_equal(out[3], ref[3])
    assert np.count_nonzero(ref[3] > 0) > 500
    for name, a, b in zip(names, out, ref):
        scale = max(np.abs(b).max(), 1e-300)
        assert np.abs(a - b).max() <= 1e-9 * scale, name


@needs_compiled
def test_cell_stiffness_parity():
    rng = np.random.default_rng(1)
    B = rng.normal(size=(50, 4, 3, 8))
    D = rng.normal(size=(50, 4, 3, 3))
    w = rng.uniform(0.1, 1.0, size=(50, 4))
    a = BACKENDS["compiled"].cell_stiffness(B, D, w)
    b = BACKENDS["python"].cell_stiffness(B, D, w)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12 * np.abs(b).max())


@needs_compiled
def test_benchmark_matches_across_backends(monkeypatch):
    results = {}
    for name in ("python", "compiled"):
        monkeypatch.setattr(kernels, "_impl", BACKENDS[name])
        r = run_biaxial()
        results[name] = np.array(r.stress_yy)
    np.testing.assert_allclose(results["compiled"], results["python"], rtol=1e-9)


def test_environment_forces_fallback():
    env = {**os.environ, "GEOSMOOTH_PURE_PYTHON": "1"}
    code = "import geosmooth.kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python", out.stderr


def test_fallback_is_always_available():
    assert "python" in BACKENDS
    assert kernels.BACKEND in BACKENDS
