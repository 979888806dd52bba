import os
import subprocess
import sys

import numpy as np
import pytest

from dualoct import _pykernels, kernels
from oracles import direct_conv

HAVE_C = "cython" in kernels.available_backends()


def test_default_backend_is_compiled_when_built():
    assert kernels.BACKEND in kernels.available_backends()
    assert "numpy" in kernels.available_backends()
    if HAVE_C and not os.environ.get("DUALOCT_BACKEND"):
        assert kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    env = dict(os.environ, DUALOCT_BACKEND="numpy")
    r = subprocess.run([sys.executable, "-c", "import dualoct; print(dualoct.BACKEND)"],
                       capture_output=True, text=True, env=env)
    assert r.stdout.strip() == "numpy"
    env["DUALOCT_BACKEND"] = "fortran"
    r = subprocess.run([sys.executable, "-c", "import dualoct"], capture_output=True, text=True, env=env)
    assert r.returncode != 0 and "not available" in r.stderr


def test_set_backend_roundtrip():
    prev = kernels.set_backend("numpy")
    try:
        assert kernels.BACKEND == "numpy"
        with pytest.raises(ValueError):
            kernels.set_backend("fortran")
    finally:
        kernels.set_backend(prev)
    assert kernels.BACKEND == prev


@pytest.mark.parametrize("shape,k", [((2, 3, 7, 5), 3), ((1, 4, 8, 8), 1), ((1, 2, 6, 9), 5)])
def test_numpy_backend_matches_direct(shape, k):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(shape)
    w = rng.standard_normal((3, shape[1], k, k))
    got = _pykernels.conv2d_forward(x, w)
    want = np.stack([direct_conv(xi, w) for xi in x])
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


@pytest.mark.skipif(not HAVE_C, reason="compiled extension not built")
@pytest.mark.parametrize("shape,o,k", [((2, 3, 7, 5), 4, 3), ((1, 16, 16, 16), 16, 3), ((3, 1, 4, 6), 2, 5)])
def test_backends_agree(shape, o, k):
    from dualoct import _ckernels
    rng = np.random.default_rng(1)
    x = rng.standard_normal(shape)
    w = rng.standard_normal((o, shape[1], k, k))
    g = rng.standard_normal((shape[0], o) + shape[2:])
    for name in ("conv2d_forward", "conv2d_grad_input"):
        a = getattr(_ckernels, name)(*((x, w) if name == "conv2d_forward" else (g, w)))
        b = getattr(_pykernels, name)(*((x, w) if name == "conv2d_forward" else (g, w)))
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-11)
    np.testing.assert_allclose(_ckernels.conv2d_grad_weight(x, g, k),
                               _pykernels.conv2d_grad_weight(x, g, k), rtol=0, atol=1e-10)


def test_mac_counter():
    x = np.ones((2, 3, 4, 5))
    w = np.ones((6, 3, 3, 3))
    kernels.reset_mac_count()
    kernels.conv2d_forward(x, w)
    assert kernels.mac_count() == 2 * 6 * 3 * 9 * 20
    kernels.conv2d_grad_weight(x, np.ones((2, 6, 4, 5)), 3)
    assert kernels.mac_count() == 2 * 2 * 6 * 3 * 9 * 20
    kernels.reset_mac_count()
    assert kernels.mac_count() == 0
