"""Centered, orthonormal 2-D discrete Fourier transforms.

k-space is stored with the zero frequency at index ``(H//2, W//2)``, and
image space has its origin at that same pixel. Both directions scale by
``1/sqrt(n)`` per axis, so the transforms are unitary and ``ifft2`` is the
adjoint of ``fft2``.

Power-of-two axes use an iterative radix-2 Cooley-Tukey FFT; other sizes
fall back to a direct O(n^2) DFT. ``method`` forces one path.
"""

from functools import lru_cache

import numpy as np

from dualoct.tensor import ComplexTensor


def _is_pow2(n):
    return n > 0 and n & (n - 1) == 0


@lru_cache(maxsize=None)
def _bitrev(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(size, inverse):
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.arange(size // 2) / size)


@lru_cache(maxsize=None)
def _dft_matrix(n, inverse):
    sign = 1.0 if inverse else -1.0
    jk = np.outer(np.arange(n), np.arange(n)) % n
    return np.exp(sign * 2j * np.pi * jk / n) / np.sqrt(n)


def _radix2_last(z, inverse):
    n = z.shape[-1]
    lead = z.shape[:-1]
    z = z[..., _bitrev(n)].reshape(-1, n)
    m = z.shape[0]
    size = 2
    while size <= n:
        # butterflies: each block of `size` combines its two halves
        half = size // 2
        blocks = z.reshape(m, n // size, 2, half)
        even = blocks[:, :, 0, :]
        odd = blocks[:, :, 1, :] * _twiddles(size, inverse)
        out = np.empty_like(blocks)
        np.add(even, odd, out=out[:, :, 0, :])
        np.subtract(even, odd, out=out[:, :, 1, :])
        z = out.reshape(m, n)
        size *= 2
    return z.reshape(*lead, n) * (1.0 / np.sqrt(n))


def _direct_last(z, inverse):
    return z @ _dft_matrix(z.shape[-1], inverse).T


def _transform_last(z, inverse, method):
    n = z.shape[-1]
    if method == "auto":
        method = "radix2" if _is_pow2(n) else "direct"
    if method == "radix2":
        if not _is_pow2(n):
            raise ValueError(f"radix-2 path needs a power-of-two length, got {n}")
        return _radix2_last(z, inverse)
    if method == "direct":
        return _direct_last(z, inverse)
    raise ValueError(f"unknown method {method!r}")


def _centered(z, inverse, method):
    for axis in (-1, -2):
        n = z.shape[axis]
        z = np.roll(z, -(n // 2), axis=axis)
        z = np.moveaxis(_transform_last(np.moveaxis(z, axis, -1), inverse, method), -1, axis)
        z = np.roll(z, n // 2, axis=axis)
    return z


def fft2c(z, method="auto"):
    """Centered unitary 2-D DFT of a complex numpy array over its last two axes."""
    return _centered(np.asarray(z, dtype=np.complex128), False, method)


def ifft2c(z, method="auto"):
    return _centered(np.asarray(z, dtype=np.complex128), True, method)


def fft2(x, method="auto"):
    """Centered unitary 2-D DFT of a ComplexTensor over its last two axes."""
    return ComplexTensor.from_complex(fft2c(x.to_complex(), method))


def ifft2(x, method="auto"):
    return ComplexTensor.from_complex(ifft2c(x.to_complex(), method))
