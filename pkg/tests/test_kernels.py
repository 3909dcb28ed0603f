import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ksns import _kernels_py as pure
from ksns import kernels
from ksns.grid import make_grid
from ksns.ops import diffusion_stencil, velocity_stencil

compiled = pytest.importorskip("ksns._kernels", reason="compiled extension not built")


def _stencil(seed, kind):
    g = make_grid(1.1, 0.9, 11, 9, kind) if kind == "full" else make_grid(1, 1, 11, 11, kind)
    r = np.random.default_rng(seed)
    kx = r.uniform(0.5, 2, (g.ny, g.nx + 1))
    ky = r.uniform(0.5, 2, (g.ny + 1, g.nx))
    return g, diffusion_stencil(g, kx, ky).shifted(0.7, 0.3), r


@given(seed=st.integers(0, 2**31), kind=st.sampled_from(["full", "l_shape"]))
def test_stencil_apply_agrees(seed, kind):
    g, A, r = _stencil(seed, kind)
    x = r.standard_normal(g.shape)
    a = compiled.stencil_apply(A.diag, A.wx, A.wy, x)
    b = pure.stencil_apply(A.diag, A.wx, A.wy, x)
    assert np.allclose(a, b, rtol=1e-14, atol=1e-12)


@given(seed=st.integers(0, 2**31), kind=st.sampled_from(["full", "l_shape"]))
def test_pcg_agrees(seed, kind):
    g, A, r = _stencil(seed, kind)
    b = np.where(g.mask, r.standard_normal(g.shape), 0.0)
    x0 = np.zeros(g.shape)
    inv_m = 1.0 / A.diag
    ya, ka, ha = compiled.pcg_smoothed(A.diag, A.wx, A.wy, b, x0, inv_m, 1e-11, 500)
    yb, kb, hb = pure.pcg_smoothed(A.diag, A.wx, A.wy, b, x0, inv_m, 1e-11, 500)
    assert abs(ka - kb) <= 1
    assert np.abs(ya - yb).max() <= 1e-9
    assert np.all(np.diff(ha) <= 0) and np.all(np.diff(hb) <= 0)


@given(seed=st.integers(0, 2**31), axis=st.sampled_from([0, 1]))
def test_upwind_flux_agrees(seed, axis):
    r = np.random.default_rng(seed)
    q = r.standard_normal((7, 9))
    shape = (7, 10) if axis == 1 else (8, 9)
    vel = r.standard_normal(shape)
    vel[r.uniform(size=shape) < 0.2] = 0.0
    a = compiled.upwind_flux(vel, q, axis)
    b = pure.upwind_flux(vel, q, axis)
    assert np.array_equal(a, b)
    if axis == 1:
        assert (a[:, 0] == 0).all() and (a[:, -1] == 0).all()
    else:
        assert (a[0] == 0).all() and (a[-1] == 0).all()


def test_velocity_stencil_through_both_backends():
    g = make_grid(1, 1, 10, 10, "l_shape")
    A = velocity_stencil(g, "x")
    x = np.random.default_rng(3).standard_normal(A.diag.shape)
    assert np.allclose(compiled.stencil_apply(A.diag, A.wx, A.wy, x), pure.stencil_apply(A.diag, A.wx, A.wy, x),
                       rtol=1e-14, atol=1e-12)


def test_compiled_backend_selected_by_default():
    assert kernels.BACKEND == "cython"


def test_pure_python_forced_by_environment():
    env = dict(os.environ, KSNS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import ksns; print(ksns.BACKEND)"], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
