"""Dual-Octave convolution.

A feature map with ``c`` complex channels is split into a high-frequency
part (``c - round(alpha*c)`` channels at full resolution) and a
low-frequency part (``round(alpha*c)`` channels at half resolution).
Each complex kernel group routes one frequency path::

    hh: high -> high        hl: pooled high -> low
    lh: low -> high (then nearest upsample)
    ll: low -> low

Real-plane routing (``octave_conv_real``)::

    high_out = conv(high, K_hh) + up(conv(low, K_lh))
    low_out  = conv(low, K_ll) + conv(pool(high), K_hl)

and the complex layer combines two real routings like a complex product::

    Re Y = O(X_r; K_r) - O(X_i; K_i)
    Im Y = O(X_i; K_r) + O(X_r; K_i)

This is the only combination that is complex-linear and collapses to an
ordinary complex convolution when alpha = 0. The frequently quoted
per-component form pairs K_i with X_r in the real output and flips the
sign of the K_i terms in the imaginary output; it does not reduce to a
complex convolution and is not used here.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from dualoct import autodiff as ad
from dualoct import io
from dualoct import tensor as T
from dualoct.tensor import ComplexTensor, ShapeError

GROUPS = ("hh", "hl", "lh", "ll")


def split_channels(c, alpha):
    """(c_high, c_low) with c_low = round(alpha * c), halves rounded up."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    c_low = int(math.floor(alpha * c + 0.5))
    return c - c_low, c_low


@dataclass(frozen=True)
class OctFeature:
    high: ComplexTensor | None
    low: ComplexTensor | None
    alpha: float

    def __post_init__(self):
        if self.high is None and self.low is None:
            raise ShapeError("OctFeature needs at least one component")
        if (self.alpha == 0) != (self.low is None):
            raise ShapeError(f"alpha={self.alpha} inconsistent with low component presence")
        if (self.alpha == 1) != (self.high is None):
            raise ShapeError(f"alpha={self.alpha} inconsistent with high component presence")
        if self.high is not None and self.low is not None:
            hs, ls = self.high.shape, self.low.shape
            if hs[-2] != 2 * ls[-2] or hs[-1] != 2 * ls[-1]:
                raise ShapeError(f"low spatial dims {ls[-2:]} must be half of high {hs[-2:]}")
            if hs[:-3] != ls[:-3]:
                raise ShapeError(f"batch dims differ: {hs[:-3]} vs {ls[:-3]}")
        c_high, c_low = self.channels
        if split_channels(c_high + c_low, self.alpha) != (c_high, c_low):
            raise ShapeError(f"channel split ({c_high}, {c_low}) does not match alpha={self.alpha}")

    @property
    def channels(self):
        return (0 if self.high is None else self.high.shape[-3],
                0 if self.low is None else self.low.shape[-3])

    @classmethod
    def from_tensor(cls, x):
        """Wrap a plain [C,H,W] / [N,C,H,W] tensor as an alpha=0 feature."""
        return cls(high=x, low=None, alpha=0.0)


@dataclass(frozen=True)
class OctLayerShape:
    """Channel bookkeeping for one layer."""

    c_in: int
    c_out: int
    alpha_in: float = 0.0
    alpha_out: float = 0.0
    kernel_size: int = 3

    def group_shapes(self):
        """Shapes of the present kernel groups, keyed by path name."""
        hi, li = split_channels(self.c_in, self.alpha_in)
        ho, lo = split_channels(self.c_out, self.alpha_out)
        k = self.kernel_size
        dims = {"hh": (ho, hi), "hl": (lo, hi), "lh": (ho, li), "ll": (lo, li)}
        return {g: (co, ci, k, k) for g, (co, ci) in dims.items() if co > 0 and ci > 0}


@dataclass(frozen=True)
class DualOctKernel:
    """Four complex kernel groups; real plane = K_r, imag plane = K_i."""

    hh: ComplexTensor | None = None
    hl: ComplexTensor | None = None
    lh: ComplexTensor | None = None
    ll: ComplexTensor | None = None
    alpha_in: float = 0.0
    alpha_out: float = 0.0
    layer: OctLayerShape = field(default=None, compare=False)

    def __post_init__(self):
        present = {g: getattr(self, g) for g in GROUPS if getattr(self, g) is not None}
        if not present:
            raise ShapeError("DualOctKernel needs at least one group")
        for g, t in present.items():
            if t.ndim != 4 or t.shape[2] != t.shape[3]:
                raise ShapeError(f"group {g}: expected [Cout,Cin,k,k], got {t.shape}")
        sizes = {t.shape[2] for t in present.values()}
        if len(sizes) != 1:
            raise ShapeError(f"groups use different kernel sizes {sorted(sizes)}")
        # partition consistency between groups that share an input or output
        pairs = [("hh", "hl", 1, "high input"), ("lh", "ll", 1, "low input"),
                 ("hh", "lh", 0, "high output"), ("hl", "ll", 0, "low output")]
        for a, b, axis, what in pairs:
            if a in present and b in present and present[a].shape[axis] != present[b].shape[axis]:
                raise ShapeError(f"{what}: group {a} has {present[a].shape[axis]} channels, {b} has {present[b].shape[axis]}")
        if self.layer is None:
            object.__setattr__(self, "layer", self._infer_layer(present))
        expected = self.layer.group_shapes()
        got = {g: t.shape for g, t in present.items()}
        if expected != got:
            raise ShapeError(f"kernel groups {got} do not match layer {self.layer} (expected {expected})")

    def _infer_layer(self, present):
        hi = next((present[g].shape[1] for g in ("hh", "hl") if g in present), 0)
        li = next((present[g].shape[1] for g in ("lh", "ll") if g in present), 0)
        ho = next((present[g].shape[0] for g in ("hh", "lh") if g in present), 0)
        lo = next((present[g].shape[0] for g in ("hl", "ll") if g in present), 0)
        k = next(iter(present.values())).shape[2]
        return OctLayerShape(hi + li, ho + lo, self.alpha_in, self.alpha_out, k)

    def groups(self):
        """Present groups in fixed order: [(name, ComplexTensor)]."""
        return [(g, getattr(self, g)) for g in GROUPS if getattr(self, g) is not None]

    def real_groups(self):
        return {g: t.real for g, t in self.groups()}

    def imag_groups(self):
        return {g: t.imag for g, t in self.groups()}

    @property
    def kernel_size(self):
        return self.layer.kernel_size

    # K_r / K_i accessors under their path names
    kr_hh = property(lambda self: None if self.hh is None else self.hh.real)
    kr_hl = property(lambda self: None if self.hl is None else self.hl.real)
    kr_lh = property(lambda self: None if self.lh is None else self.lh.real)
    kr_ll = property(lambda self: None if self.ll is None else self.ll.real)
    ki_hh = property(lambda self: None if self.hh is None else self.hh.imag)
    ki_hl = property(lambda self: None if self.hl is None else self.hl.imag)
    ki_lh = property(lambda self: None if self.lh is None else self.lh.imag)
    ki_ll = property(lambda self: None if self.ll is None else self.ll.imag)

    @classmethod
    def from_planes(cls, kr, ki, alpha_in=0.0, alpha_out=0.0):
        """Build from two dicts of real kernels keyed by group name."""
        if set(kr) != set(ki):
            raise ShapeError(f"real groups {sorted(kr)} and imaginary groups {sorted(ki)} differ")
        groups = {}
        for g in kr:
            if np.shape(kr[g]) != np.shape(ki[g]):
                raise ShapeError(f"group {g}: K_r {np.shape(kr[g])} and K_i {np.shape(ki[g])} differ")
            groups[g] = ComplexTensor(kr[g], ki[g])
        return cls(**groups, alpha_in=alpha_in, alpha_out=alpha_out)

    def with_groups(self, groups):
        return DualOctKernel(**groups, alpha_in=self.alpha_in, alpha_out=self.alpha_out, layer=self.layer)


def block_layer_shapes(coils, channels, layers_per_block, alpha, kernel_size=3):
    """Entry, body and exit layer shapes of one residual block.

    The block maps ``coils`` complex channels (alpha = 0) to ``channels``
    split by ``alpha`` and back.
    """
    if layers_per_block < 2:
        raise ValueError(f"a block needs at least an entry and an exit layer, got {layers_per_block}")
    shapes = [OctLayerShape(coils, channels, 0.0, alpha, kernel_size)]
    for _ in range(layers_per_block - 2):
        shapes.append(OctLayerShape(channels, channels, alpha, alpha, kernel_size))
    shapes.append(OctLayerShape(channels, coils, alpha, 0.0, kernel_size))
    return shapes


def _plane(x, part):
    if x is None:
        return None
    return x.real if part == "r" else x.imag


def octave_conv_real(high, low, k):
    """Octave routing on real planes.

    ``high``/``low`` are real arrays (``[C,H,W]`` or ``[N,C,H,W]``) or None;
    ``k`` maps group names to real kernels. Returns ``(high_out, low_out)``,
    None for an output with no contributing path.
    """
    _check_presence(high is not None, low is not None, k.keys())
    if high is not None and "hl" in k:
        h, w = high.shape[-2:]
        if h % 2 or w % 2:
            raise ShapeError(f"high-frequency input needs even spatial dims for pooling, got {h}x{w}")
    high_out = low_out = None
    if "hh" in k:
        high_out = T.conv_planes(high, k["hh"])
    if "lh" in k:
        up = T.upsample_plane(T.conv_planes(low, k["lh"]))
        high_out = up if high_out is None else high_out + up
    if "ll" in k:
        low_out = T.conv_planes(low, k["ll"])
    if "hl" in k:
        down = T.conv_planes(T.pool_plane(high), k["hl"])
        low_out = down if low_out is None else low_out + down
    return high_out, low_out


def _check_presence(has_high, has_low, groups):
    groups = set(groups)
    for g in groups:
        src = g[0]
        if (src == "h" and not has_high) or (src == "l" and not has_low):
            raise ShapeError(f"kernel group {g} present but its input component is absent")
    if has_high and not groups & {"hh", "hl"}:
        raise ShapeError("high input present but no hh/hl kernel consumes it")
    if has_low and not groups & {"lh", "ll"}:
        raise ShapeError("low input present but no lh/ll kernel consumes it")


def _combine(a, b, sign):
    if a is None:
        return None if b is None else sign * b
    if b is None:
        return a
    return a + sign * b


def dual_octconv(x, k):
    """Dual-Octave convolution of an OctFeature with a DualOctKernel."""
    if x.channels != _input_split(k):
        raise ShapeError(f"input channels {x.channels} do not match kernel input split {_input_split(k)}")
    kr, ki = k.real_groups(), k.imag_groups()
    rr = octave_conv_real(_plane(x.high, "r"), _plane(x.low, "r"), kr)
    ii = octave_conv_real(_plane(x.high, "i"), _plane(x.low, "i"), ki)
    ir = octave_conv_real(_plane(x.high, "i"), _plane(x.low, "i"), kr)
    ri = octave_conv_real(_plane(x.high, "r"), _plane(x.low, "r"), ki)
    parts = []
    for j in range(2):
        re = _combine(rr[j], ii[j], -1.0)
        im = _combine(ir[j], ri[j], 1.0)
        parts.append(None if re is None else ComplexTensor(re, im))
    return OctFeature(high=parts[0], low=parts[1], alpha=k.alpha_out)


def _input_split(k):
    return split_channels(k.layer.c_in, k.layer.alpha_in)


def entry_layer(x, k):
    """First layer of a block: alpha_in = 0, creates the low branch from the pooled input."""
    if isinstance(x, ComplexTensor):
        x = OctFeature.from_tensor(x)
    if x.alpha != 0 or k.alpha_in != 0:
        raise ShapeError("entry layer expects an alpha=0 input")
    if k.alpha_out <= 0:
        raise ShapeError("entry layer expects alpha_out > 0")
    return dual_octconv(x, k)


def exit_layer(x, k):
    """Last layer of a block: merges the low branch back into full resolution (alpha_out = 0)."""
    if x.alpha <= 0 or k.alpha_in <= 0:
        raise ShapeError("exit layer expects an alpha > 0 input")
    if k.alpha_out != 0:
        raise ShapeError("exit layer expects alpha_out = 0")
    return dual_octconv(x, k)


def init_dual_oct_kernel(layer, seed=0):
    """Random complex kernel: magnitude ~ Rayleigh(1/sqrt(fan_in)), phase ~ U(-pi, pi).

    ``fan_in`` is ``Cin_part * k * k`` of each group. ``seed`` may be an int
    or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    groups = {}
    for g, shape in layer.group_shapes().items():
        fan_in = shape[1] * shape[2] * shape[3]
        rho = rng.rayleigh(scale=1.0 / math.sqrt(fan_in), size=shape)
        phi = rng.uniform(-math.pi, math.pi, size=shape)
        groups[g] = ComplexTensor(rho * np.cos(phi), rho * np.sin(phi))
    return DualOctKernel(**groups, alpha_in=layer.alpha_in, alpha_out=layer.alpha_out, layer=layer)


def zero_dual_oct_kernel(layer):
    groups = {g: ComplexTensor.zeros(s) for g, s in layer.group_shapes().items()}
    return DualOctKernel(**groups, alpha_in=layer.alpha_in, alpha_out=layer.alpha_out, layer=layer)


# ---------------------------------------------------------------------------
# differentiable version on the autodiff tape


def dual_octconv_nodes(high, low, knodes):
    """Tape version of :func:`dual_octconv`.

    ``high``/``low`` are Nodes or None, ``knodes`` maps group names to
    complex kernel Nodes. Returns ``(high_out, low_out)`` Nodes (or None).
    """
    _check_presence(high is not None, low is not None, knodes.keys())
    high_out = low_out = None
    if "hh" in knodes:
        high_out = ad.complex_conv2d(high, knodes["hh"])
    if "lh" in knodes:
        up = ad.upsample2(ad.complex_conv2d(low, knodes["lh"]))
        high_out = up if high_out is None else ad.add(high_out, up)
    if "ll" in knodes:
        low_out = ad.complex_conv2d(low, knodes["ll"])
    if "hl" in knodes:
        down = ad.complex_conv2d(ad.avg_pool2(high), knodes["hl"])
        low_out = down if low_out is None else ad.add(low_out, down)
    return high_out, low_out


def crelu_nodes(high, low):
    return (None if high is None else ad.crelu(high),
            None if low is None else ad.crelu(low))


# ---------------------------------------------------------------------------
# serialization


def save_dual_oct_kernel(directory, k, prefix="kernel"):
    """One DOCT file per kernel group plus ``<prefix>.manifest``."""
    io.ensure_dir(directory)
    lay = k.layer
    lines = [("c_in", lay.c_in), ("c_out", lay.c_out), ("alpha_in", repr(lay.alpha_in)),
             ("alpha_out", repr(lay.alpha_out)), ("kernel_size", lay.kernel_size)]
    for g, t in k.groups():
        fname = f"{prefix}_{g}.doct"
        io.write_doct(os.path.join(directory, fname), t)
        lines.append((f"group.{g}", f"{fname} {'x'.join(map(str, t.shape))}"))
    io.write_keyvalue(os.path.join(directory, f"{prefix}.manifest"), lines)


def load_dual_oct_kernel(directory, prefix="kernel"):
    meta = io.read_keyvalue(os.path.join(directory, f"{prefix}.manifest"))
    layer = OctLayerShape(int(meta["c_in"]), int(meta["c_out"]), float(meta["alpha_in"]),
                          float(meta["alpha_out"]), int(meta["kernel_size"]))
    groups = {}
    for g in GROUPS:
        entry = meta.get(f"group.{g}")
        if entry is None:
            continue
        fname, shape = entry.split()
        t = io.read_doct(os.path.join(directory, fname))
        if "x".join(map(str, t.shape)) != shape:
            raise ShapeError(f"{fname}: shape {t.shape} does not match manifest {shape}")
        groups[g] = t
    return DualOctKernel(**groups, alpha_in=layer.alpha_in, alpha_out=layer.alpha_out, layer=layer)
