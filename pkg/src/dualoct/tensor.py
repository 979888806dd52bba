"""Complex tensors stored as separate real/imaginary float64 planes.

Layouts used throughout the package:

* features ``[C, H, W]`` or batches ``[N, C, H, W]``
* kernels ``[Cout, Cin, k, k]``; a complex kernel keeps the real kernel
  in its real plane and the imaginary kernel in its imag plane

Convolutions are "same"-padded stride-1 cross-correlations without bias.
"""

from dataclasses import dataclass

import numpy as np

from dualoct import kernels


class ShapeError(ValueError):
    """Raised when tensor dimensions are incompatible."""


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


class ComplexTensor:
    """Immutable dense complex array, ``real + 1j * imag``."""

    __slots__ = ("real", "imag")

    def __init__(self, real, imag=None):
        real = np.asarray(real, dtype=np.float64)
        if imag is None:
            imag = np.zeros_like(real)
        imag = np.asarray(imag, dtype=np.float64)
        if real.shape != imag.shape:
            raise ShapeError(f"real plane {real.shape} and imag plane {imag.shape} differ")
        if real.ndim == 0:
            real, imag = real.reshape(1), imag.reshape(1)
        if any(d < 1 for d in real.shape):
            raise ShapeError(f"all dimensions must be >= 1, got {real.shape}")
        self.real = _frozen(real)
        self.imag = _frozen(imag)

    @classmethod
    def from_complex(cls, z):
        z = np.asarray(z)
        return cls(z.real, z.imag)

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape))

    @property
    def shape(self):
        return self.real.shape

    @property
    def ndim(self):
        return self.real.ndim

    @property
    def size(self):
        return self.real.size

    def to_complex(self):
        return self.real + 1j * self.imag

    def abs(self):
        return np.hypot(self.real, self.imag)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __neg__(self):
        return ComplexTensor(-self.real, -self.imag)

    def __mul__(self, other):
        if isinstance(other, ComplexTensor):
            return multiply(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __repr__(self):
        return f"ComplexTensor(shape={self.shape})"

    def __eq__(self, other):
        if not isinstance(other, ComplexTensor):
            return NotImplemented
        return (self.shape == other.shape and np.array_equal(self.real, other.real)
                and np.array_equal(self.imag, other.imag))

    __hash__ = None


@dataclass(frozen=True)
class ConvSpec:
    kernel_size: int = 3

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")

    @property
    def stride(self):
        return 1

    @property
    def padding(self):
        return (self.kernel_size - 1) // 2


def _as_batch(a):
    """View a [C,H,W] or [N,C,H,W] array as 4-D; return (array, was_batched)."""
    if a.ndim == 3:
        return a[None], False
    if a.ndim == 4:
        return a, True
    raise ShapeError(f"expected [C,H,W] or [N,C,H,W], got shape {a.shape}")


def _check_conv(xshape, kshape, spec):
    if len(kshape) != 4:
        raise ShapeError(f"kernel must be [Cout,Cin,k,k], got {kshape}")
    if kshape[2] != kshape[3]:
        raise ShapeError(f"kernel must be square, got {kshape[2]}x{kshape[3]}")
    if spec is not None and kshape[2] != spec.kernel_size:
        raise ShapeError(f"kernel size {kshape[2]} does not match ConvSpec.kernel_size={spec.kernel_size}")
    if kshape[2] % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {kshape[2]}")
    cin = xshape[-3] if len(xshape) >= 3 else None
    if cin != kshape[1]:
        raise ShapeError(f"input has {cin} channels but kernel expects Cin={kshape[1]}")


def conv_planes(x, k):
    """Real cross-correlation on raw arrays, [C,H,W]/[N,C,H,W] with [O,C,k,k]."""
    xb, batched = _as_batch(x)
    out = kernels.conv2d_forward(xb, k)
    return out if batched else out[0]


def conv2d_real(x, k, spec=None):
    """Same-padded real cross-correlation of plane ``x`` with kernel ``k``.

    ``x`` and ``k`` are real numpy arrays (``[Cin,H,W]`` or ``[N,Cin,H,W]``
    and ``[Cout,Cin,k,k]``). Real parts are taken if ComplexTensors are given.
    """
    x = x.real if isinstance(x, ComplexTensor) else np.asarray(x, dtype=np.float64)
    k = k.real if isinstance(k, ComplexTensor) else np.asarray(k, dtype=np.float64)
    _check_conv(x.shape, k.shape, spec)
    return conv_planes(x, k)


def complex_conv2d(x, kr, ki=None, spec=None):
    """Complex convolution ``(kr*xr - ki*xi) + i(kr*xi + ki*xr)``.

    ``kr``/``ki`` may be given as two real arrays, or as one ComplexTensor
    kernel in ``kr`` (with ``ki`` omitted).
    """
    if isinstance(kr, ComplexTensor):
        if ki is not None:
            raise TypeError("pass either a complex kernel or two real kernels")
        kr, ki = kr.real, kr.imag
    kr = np.asarray(kr, dtype=np.float64)
    ki = np.asarray(ki, dtype=np.float64)
    if kr.shape != ki.shape:
        raise ShapeError(f"real kernel {kr.shape} and imaginary kernel {ki.shape} differ")
    _check_conv(x.shape, kr.shape, spec)
    re = conv_planes(x.real, kr) - conv_planes(x.imag, ki)
    im = conv_planes(x.imag, kr) + conv_planes(x.real, ki)
    return ComplexTensor(re, im)


def pool_plane(a):
    h, w = a.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    blocks = a.reshape(*a.shape[:-2], h // 2, 2, w // 2, 2)
    # pairwise sums keep pool(upsample(x)) == x bit-exact
    return ((blocks[..., 0, :, 0] + blocks[..., 0, :, 1]) + (blocks[..., 1, :, 0] + blocks[..., 1, :, 1])) * 0.25


def upsample_plane(a):
    return np.repeat(np.repeat(a, 2, axis=-2), 2, axis=-1)


def avg_pool2(x):
    """2x2 mean pooling on both planes; spatial dims must be even."""
    return ComplexTensor(pool_plane(x.real), pool_plane(x.imag))


def upsample2_nearest(x):
    """Replicate every pixel into a 2x2 block."""
    return ComplexTensor(upsample_plane(x.real), upsample_plane(x.imag))


def crelu(x):
    """Split ReLU: max(0, .) applied to real and imaginary planes separately."""
    return ComplexTensor(np.maximum(x.real, 0.0), np.maximum(x.imag, 0.0))


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def add(a, b):
    _same_shape(a, b, "add")
    return ComplexTensor(a.real + b.real, a.imag + b.imag)


def subtract(a, b):
    _same_shape(a, b, "subtract")
    return ComplexTensor(a.real - b.real, a.imag - b.imag)


def scale(a, s):
    """Multiply by a real or complex scalar."""
    s = complex(s)
    if s.imag == 0.0:
        return ComplexTensor(s.real * a.real, s.real * a.imag)
    return ComplexTensor(s.real * a.real - s.imag * a.imag, s.imag * a.real + s.real * a.imag)


def multiply(a, b):
    """Elementwise complex product."""
    _same_shape(a, b, "multiply")
    return ComplexTensor(a.real * b.real - a.imag * b.imag, a.real * b.imag + a.imag * b.real)


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    try:
        re = np.concatenate([t.real for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    return ComplexTensor(re, np.concatenate([t.imag for t in tensors], axis=axis))
