"""Backend selection for the real-valued convolution kernels.

The compiled extension ``dualoct._ckernels`` is used when it was built;
otherwise the numpy implementation in ``dualoct._pykernels`` is used.
Setting ``DUALOCT_BACKEND=numpy`` forces the fallback.

Every kernel call adds its multiply-accumulate count to a process-wide
counter (see :func:`mac_count`), which the training loop uses to report
measured arithmetic cost per iteration.
"""

import os

import numpy as np

from dualoct import _pykernels

_BACKENDS = {"numpy": _pykernels}
try:
    from dualoct import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    _BACKENDS["cython"] = _ckernels


def _default_backend():
    forced = os.environ.get("DUALOCT_BACKEND", "").strip().lower()
    if forced:
        if forced not in _BACKENDS:
            raise RuntimeError(f"DUALOCT_BACKEND={forced!r} is not available; have {sorted(_BACKENDS)}")
        return forced
    return "cython" if "cython" in _BACKENDS else "numpy"


BACKEND = _default_backend()
_impl = _BACKENDS[BACKEND]
_macs = 0


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Switch the active kernel backend; returns the previous name."""
    global BACKEND, _impl
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; have {sorted(_BACKENDS)}")
    prev = BACKEND
    BACKEND, _impl = name, _BACKENDS[name]
    return prev


def mac_count():
    return _macs


def reset_mac_count():
    global _macs
    _macs = 0


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w):
    """Same-padded cross-correlation of ``x`` [N,C,H,W] with ``w`` [O,C,k,k]."""
    global _macs
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    _macs += n * o * c * k * k * h * wd
    return _impl.conv2d_forward(_c64(x), _c64(w))


def conv2d_grad_input(g, w):
    global _macs
    n, o, h, wd = g.shape
    _, c, k, _ = w.shape
    _macs += n * o * c * k * k * h * wd
    return _impl.conv2d_grad_input(_c64(g), _c64(w))


def conv2d_grad_weight(x, g, k):
    global _macs
    n, c, h, wd = x.shape
    o = g.shape[1]
    _macs += n * o * c * k * k * h * wd
    return _impl.conv2d_grad_weight(_c64(x), _c64(g), k)
