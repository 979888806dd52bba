"""Multi-coil Cartesian MRI simulation.

Forward model per coil: ``y_i = M * fft2(S_i * x)`` with one sampling mask
``M`` shared by all coils. k-space is centered (zero frequency at
``(H//2, W//2)``), so masks are stored in their natural visual layout.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from dualoct import autodiff as ad
from dualoct.fft import fft2, fft2c, ifft2, ifft2c
from dualoct.tensor import ComplexTensor, ShapeError

__all__ = [
    "Pattern", "SamplingMask", "CoilSet", "KSpaceAcquisition", "fft2", "ifft2",
    "make_mask", "make_phantom", "make_sensitivities", "forward_model", "zero_filled",
    "data_fidelity", "data_fidelity_nodes", "rss_combine", "coil_images",
]


class Pattern(str, Enum):
    UNIFORM1D = "uniform1d"
    CARTESIAN1D = "cartesian1d"
    RANDOM2D = "random2d"
    RADIAL2D = "radial2d"


DEFAULT_CENTER_LINES = {
    Pattern.UNIFORM1D: 0,
    Pattern.CARTESIAN1D: 8,
    Pattern.RANDOM2D: 8,
    Pattern.RADIAL2D: 0,
}


@dataclass(frozen=True)
class SamplingMask:
    grid: np.ndarray          # bool [H, W]
    pattern: Pattern
    acceleration: float
    seed: int

    @property
    def shape(self):
        return self.grid.shape

    @property
    def achieved_acceleration(self):
        n = int(self.grid.sum())
        return math.inf if n == 0 else self.grid.size / n

    def to_tensor(self):
        return ComplexTensor(self.grid.astype(np.float64))

    @classmethod
    def from_tensor(cls, t, pattern=Pattern.RANDOM2D, acceleration=float("nan"), seed=-1):
        grid = np.asarray(t.real)
        if grid.ndim == 3 and grid.shape[0] == 1:
            grid = grid[0]
        if grid.ndim != 2:
            raise ShapeError(f"mask must be [H, W], got {grid.shape}")
        if not np.all((grid == 0) | (grid == 1)) or np.any(t.imag != 0):
            raise ValueError("mask tensor must hold only 0.0 / 1.0 values")
        return cls(grid.astype(bool), Pattern(pattern), acceleration, seed)


@dataclass(frozen=True)
class CoilSet:
    maps: ComplexTensor       # [c, H, W], sum_i |S_i|^2 == 1

    @property
    def count(self):
        return self.maps.shape[0]


@dataclass(frozen=True)
class KSpaceAcquisition:
    y: ComplexTensor                      # [c, H, W] or [N, c, H, W], zero off-mask
    mask: SamplingMask
    fully_sampled_reference: ComplexTensor | None = None

    def __post_init__(self):
        if self.y.shape[-2:] != self.mask.shape:
            raise ShapeError(f"k-space {self.y.shape} and mask {self.mask.shape} disagree")


# ---------------------------------------------------------------------------
# sampling masks


def _center_slice(n, width):
    start = n // 2 - width // 2
    return slice(max(start, 0), min(start + width, n))


def _gaussian_weights(n, sigma):
    d = np.arange(n) - n // 2
    return np.exp(-0.5 * (d / sigma) ** 2)


def _weighted_pick(rng, candidates, weights, count):
    if count <= 0 or candidates.size == 0:
        return candidates[:0]
    count = min(count, candidates.size)
    p = weights / weights.sum()
    return rng.choice(candidates, size=count, replace=False, p=p)


def _uniform1d(h, w, r, center, rng):
    cols = np.zeros(w, dtype=bool)
    cols[::int(round(r))] = True
    if center:
        cols[_center_slice(w, center)] = True
    return np.broadcast_to(cols, (h, w)).copy()


def _cartesian1d(h, w, r, center, rng):
    target = max(int(round(w / r)), 1)
    cols = np.zeros(w, dtype=bool)
    if center:
        cols[_center_slice(w, min(center, target))] = True
    free = np.flatnonzero(~cols)
    pick = _weighted_pick(rng, free, _gaussian_weights(w, w / 4.0)[free], target - int(cols.sum()))
    cols[pick] = True
    return np.broadcast_to(cols, (h, w)).copy()


def _random2d(h, w, r, center, rng):
    target = max(int(round(h * w / r)), 1)
    grid = np.zeros((h, w), dtype=bool)
    if center:
        side = min(center, int(math.isqrt(target)))
        grid[_center_slice(h, side), _center_slice(w, side)] = True
    wy = _gaussian_weights(h, h / 4.0)
    wx = _gaussian_weights(w, w / 4.0)
    density = np.outer(wy, wx).ravel()
    free = np.flatnonzero(~grid.ravel())
    pick = _weighted_pick(rng, free, density[free], target - int(grid.sum()))
    grid.ravel()[pick] = True
    return grid


def _radial_spokes(h, w, n_spokes, offset):
    grid = np.zeros((h, w), dtype=bool)
    cy, cx = h // 2, w // 2
    reach = math.hypot(h, w) / 2
    t = np.arange(-reach, reach + 0.25, 0.25)
    for s in range(n_spokes):
        theta = offset + math.pi * s / n_spokes
        ys = np.rint(cy + t * math.sin(theta)).astype(int)
        xs = np.rint(cx + t * math.cos(theta)).astype(int)
        ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        grid[ys[ok], xs[ok]] = True
    return grid


def _radial2d(h, w, r, center, rng):
    offset = float(rng.uniform(0.0, math.pi))
    target = h * w / r
    best = None
    for n in range(1, 4 * max(h, w) + 1):
        grid = _radial_spokes(h, w, n, offset)
        err = abs(h * w / grid.sum() - r)
        if best is None or err < best[0]:
            best = (err, grid)
        if grid.sum() >= target:
            break
    grid = best[1]
    if center:
        grid[_center_slice(h, center), _center_slice(w, center)] = True
    return grid


_MAKERS = {
    Pattern.UNIFORM1D: _uniform1d,
    Pattern.CARTESIAN1D: _cartesian1d,
    Pattern.RANDOM2D: _random2d,
    Pattern.RADIAL2D: _radial2d,
}


def make_mask(pattern, acceleration, height, width, seed=0, center_lines=None):
    """Undersampling mask, deterministic in (pattern, acceleration, size, seed).

    * ``uniform1d``: every R-th column (from column 0) plus ``center_lines``
      central columns
    * ``cartesian1d``: ``round(W/R)`` columns drawn with a Gaussian density
      around the center, including ``center_lines`` central columns
    * ``random2d``: ``round(HW/R)`` points drawn with a 2-D Gaussian density,
      including a ``center_lines`` square at the center
    * ``radial2d``: spokes through the center, spoke count chosen so the
      achieved acceleration is closest to R; angles start at a seeded offset

    1-D patterns sample full columns (frequency-encode axis along H).
    """
    pattern = Pattern(pattern)
    if acceleration < 1:
        raise ValueError(f"acceleration must be >= 1, got {acceleration}")
    if acceleration > height * width:
        raise ValueError(f"acceleration {acceleration} exceeds the number of k-space points {height * width}")
    if center_lines is None:
        center_lines = DEFAULT_CENTER_LINES[pattern]
    rng = np.random.default_rng(seed)
    grid = _MAKERS[pattern](height, width, float(acceleration), int(center_lines), rng)
    return SamplingMask(grid, pattern, float(acceleration), seed)


# ---------------------------------------------------------------------------
# synthetic object and coils


def make_phantom(height, width, n_ellipses=6, seed=0, intensities=None):
    """Random-ellipse complex phantom [1, H, W] with max magnitude 1.

    Ellipse intensities are drawn from U[0.1, 1] unless ``intensities`` is
    given. A smooth random linear phase ramp is applied.
    """
    rng = np.random.default_rng(seed)
    if intensities is None:
        if n_ellipses < 1:
            raise ValueError(f"n_ellipses must be >= 1, got {n_ellipses}")
        intensities = rng.uniform(0.1, 1.0, size=n_ellipses)
    intensities = np.asarray(intensities, dtype=np.float64)
    if intensities.size == 0:
        raise ValueError("phantom needs at least one ellipse intensity")
    yy, xx = np.meshgrid(np.linspace(-1, 1, height), np.linspace(-1, 1, width), indexing="ij")
    mag = np.zeros((height, width))
    for amp in intensities:
        cy, cx = rng.uniform(-0.45, 0.45, size=2)
        ay, ax = rng.uniform(0.1, 0.5, size=2)
        theta = rng.uniform(0, math.pi)
        c, s = math.cos(theta), math.sin(theta)
        u = (xx - cx) * c + (yy - cy) * s
        v = -(xx - cx) * s + (yy - cy) * c
        mag += amp * ((u / ax) ** 2 + (v / ay) ** 2 <= 1.0)
    peak = mag.max()
    if peak <= 0:
        raise ValueError("phantom is empty; all ellipses fell outside the grid")
    mag /= peak
    gy, gx, g0 = rng.uniform(-math.pi / 2, math.pi / 2, size=3)
    phase = g0 + gy * yy + gx * xx
    return ComplexTensor((mag * np.cos(phase))[None], (mag * np.sin(phase))[None])


def make_sensitivities(coils, height, width):
    """Smooth synthetic coil maps normalized so that sum_i |S_i|^2 = 1 per pixel.

    Gaussian magnitude profiles (width 0.5*min(H,W)) centered at equal angles
    on a circle of radius 0.45*min(H,W), each with a linear phase ramp.
    """
    if coils < 1:
        raise ValueError(f"coil count must be >= 1, got {coils}")
    m = min(height, width)
    yy, xx = np.meshgrid(np.arange(height) - height / 2, np.arange(width) - width / 2, indexing="ij")
    maps = np.empty((coils, height, width), dtype=np.complex128)
    for i in range(coils):
        ang = 2 * math.pi * i / coils
        py, px = 0.45 * m * math.sin(ang), 0.45 * m * math.cos(ang)
        mag = np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * (0.5 * m) ** 2))
        phase = math.pi * (math.cos(ang) * xx / width + math.sin(ang) * yy / height)
        maps[i] = mag * np.exp(1j * phase)
    maps /= np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return CoilSet(ComplexTensor.from_complex(maps))


def coil_images(x, coils):
    """S_i * x for every coil; x is [1, H, W] (or [H, W])."""
    xc = x.to_complex()
    if xc.ndim == 3:
        if xc.shape[0] != 1:
            raise ShapeError(f"image must be [1, H, W], got {xc.shape}")
        xc = xc[0]
    if xc.shape != coils.maps.shape[1:]:
        raise ShapeError(f"image {xc.shape} and coil maps {coils.maps.shape[1:]} disagree")
    return ComplexTensor.from_complex(coils.maps.to_complex() * xc)


# ---------------------------------------------------------------------------
# acquisition and reconstruction operators


def forward_model(x, coils, mask, keep_reference=False):
    """y_i = mask * fft2(S_i * x)."""
    if mask.shape != coils.maps.shape[1:]:
        raise ShapeError(f"mask {mask.shape} and coil maps {coils.maps.shape[1:]} disagree")
    k = fft2c(coil_images(x, coils).to_complex())
    y = ComplexTensor.from_complex(k * mask.grid)
    ref = ComplexTensor.from_complex(k) if keep_reference else None
    return KSpaceAcquisition(y, mask, ref)


def zero_filled(acq):
    """Per-coil inverse transform of the zero-filled k-space."""
    return ifft2(acq.y)


def data_fidelity(x, acq):
    """Replace the sampled frequencies of fft2(x) with the measurements."""
    if x.shape != acq.y.shape:
        raise ShapeError(f"image {x.shape} and k-space {acq.y.shape} disagree")
    k = fft2c(x.to_complex())
    k = np.where(acq.mask.grid, acq.y.to_complex(), k)
    return ComplexTensor.from_complex(ifft2c(k))


def data_fidelity_nodes(x, y, mask):
    """Tape version; ``y`` is a Node holding measured k-space, ``mask`` a bool grid."""
    if x.shape != y.shape:
        raise ShapeError(f"image {x.shape} and k-space {y.shape} disagree")
    return ad.data_fidelity(x, y, mask.grid if isinstance(mask, SamplingMask) else mask)


def rss_combine(x):
    """Root-sum-of-squares coil combination, [c, H, W] -> [1, H, W] (or batched)."""
    if x.ndim < 3:
        raise ShapeError(f"expected [c, H, W], got {x.shape}")
    return np.sqrt(np.sum(x.real ** 2 + x.imag ** 2, axis=-3, keepdims=True))
