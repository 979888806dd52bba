"""Image quality metrics and the Dual-OctConv cost model."""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from dualoct.octave import block_layer_shapes, split_channels

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    flops: int | None = None
    config: dict = field(default_factory=dict)


def _pair(ref, test):
    ref = np.squeeze(np.asarray(ref, dtype=np.float64))
    test = np.squeeze(np.asarray(test, dtype=np.float64))
    if ref.shape != test.shape:
        raise ValueError(f"image shapes differ: {ref.shape} vs {test.shape}")
    return ref, test


def psnr(ref, test):
    """10*log10(MAX^2 / MSE) with MAX = max(ref); ``inf`` when the images are identical."""
    ref, test = _pair(ref, test)
    peak = ref.max()
    if not np.any(ref):
        raise ValueError("reference image is all zero; PSNR undefined")
    mse = np.mean((ref - test) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img, win):
    return np.einsum("ijkl,kl->ij", sliding_window_view(img, win.shape), win)


def ssim(ref, test, data_range=None):
    """Mean SSIM over all fully contained 11x11 Gaussian (sigma 1.5) windows.

    The dynamic range defaults to ``max(ref)``.
    """
    ref, test = _pair(ref, test)
    if ref.ndim != 2:
        raise ValueError(f"SSIM needs 2-D images, got shape {ref.shape}")
    if min(ref.shape) < SSIM_WINDOW:
        raise ValueError(f"image {ref.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    L = ref.max() if data_range is None else data_range
    c1 = (SSIM_K1 * L) ** 2
    c2 = (SSIM_K2 * L) ** 2
    win = gaussian_window()
    mu1 = _filter_valid(ref, win)
    mu2 = _filter_valid(test, win)
    s11 = _filter_valid(ref * ref, win) - mu1 * mu1
    s22 = _filter_valid(test * test, win) - mu2 * mu2
    s12 = _filter_valid(ref * test, win) - mu1 * mu2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def path_macs(c_in, c_out, height, width, k, alpha_in, alpha_out):
    """Real multiply-accumulates of one octave routing, per frequency path."""
    hi, li = split_channels(c_in, alpha_in)
    ho, lo = split_channels(c_out, alpha_out)
    full, half = height * width, (height // 2) * (width // 2)
    return {
        "hh": k * k * hi * ho * full,
        # high->low convolves the pooled input; low->high is upsampled afterwards
        "hl": k * k * hi * lo * half,
        "lh": k * k * li * ho * half,
        "ll": k * k * li * lo * half,
    }


def flops_dual_octconv(c_in, c_out, height, width, k=3, alpha=0.125, alpha_out=None):
    """FLOPs of one Dual-OctConv layer.

    4 real convolutions per complex convolution, each MAC counted as 2 FLOPs
    (one multiply, one add); low-resolution paths cost (H/2)(W/2) pixels.
    ``alpha`` applies to input and output unless ``alpha_out`` is given.
    """
    alpha_out = alpha if alpha_out is None else alpha_out
    if (alpha > 0 or alpha_out > 0) and (height % 2 or width % 2):
        raise ValueError(f"octave split needs even spatial dims, got {height}x{width}")
    return 4 * 2 * sum(path_macs(c_in, c_out, height, width, k, alpha, alpha_out).values())


def relative_cost(alpha):
    """Closed-form cost ratio vs alpha = 0 for equal in/out split and exact channel fractions."""
    return (1 - alpha) ** 2 + (alpha ** 2 + 2 * alpha * (1 - alpha)) / 4


def network_flops(config, height, width, alpha=None):
    """FLOPs of one forward pass of the reconstruction network for a single sample."""
    a = config.alpha if alpha is None else alpha
    total = 0
    for lay in block_layer_shapes(config.coils, config.feature_channels, config.layers_per_block, a, config.kernel_size):
        total += flops_dual_octconv(lay.c_in, lay.c_out, height, width, lay.kernel_size, lay.alpha_in, lay.alpha_out)
    return total * config.n_blocks
