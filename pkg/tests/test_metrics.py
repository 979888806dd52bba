import math

import numpy as np
import pytest

from dualoct import metrics as M
from dualoct.network import NetworkConfig


def loop_ssim(x, y, data_range):
    """Per-window SSIM with explicit loops over window positions and pixels."""
    size, sigma = 11, 1.5
    g = [math.exp(-((i - 5) ** 2) / (2 * sigma * sigma)) for i in range(size)]
    s = sum(g)
    g = [v / s for v in g]
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    h, w = x.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            mx = my = sxx = syy = sxy = 0.0
            for u in range(size):
                for v in range(size):
                    wt = g[u] * g[v]
                    a, b = x[i + u, j + v], y[i + u, j + v]
                    mx += wt * a
                    my += wt * b
                    sxx += wt * a * a
                    syy += wt * b * b
                    sxy += wt * a * b
            vx, vy, cxy = sxx - mx * mx, syy - my * my, sxy - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)


# ---------------------------------------------------------------------------
# PSNR


def test_psnr_identical_is_inf():
    x = np.random.default_rng(0).random((16, 16)) + 0.1
    assert M.psnr(x, x) == math.inf


def test_psnr_twenty_db_closed_form():
    x = np.random.default_rng(1).random((20, 24))
    peak = x.max()
    assert abs(M.psnr(x, x + peak / 10) - 20.0) < 1e-12


def test_psnr_matches_direct_formula():
    rng = np.random.default_rng(2)
    x, y = rng.random((12, 9)), rng.random((12, 9))
    mse = sum((a - b) ** 2 for a, b in zip(x.ravel(), y.ravel())) / x.size
    assert abs(M.psnr(x, y) - 10 * math.log10(x.max() ** 2 / mse)) < 1e-12


def test_psnr_decreases_with_noise_amplitude():
    rng = np.random.default_rng(3)
    x = rng.random((16, 16))
    n = rng.standard_normal((16, 16))
    vals = [M.psnr(x, x + a * n) for a in (0.01, 0.03, 0.1, 0.3, 1.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_psnr_errors():
    with pytest.raises(ValueError):
        M.psnr(np.zeros((4, 4)), np.ones((4, 4)))
    with pytest.raises(ValueError):
        M.psnr(np.ones((4, 4)), np.ones((4, 5)))


# ---------------------------------------------------------------------------
# SSIM


def test_ssim_identical_is_one():
    x = np.random.default_rng(4).random((16, 16))
    assert M.ssim(x, x) == 1.0


def test_ssim_matches_loop_oracle():
    rng = np.random.default_rng(5)
    x = rng.random((16, 16))
    y = np.clip(x + 0.2 * rng.standard_normal((16, 16)), 0, None)
    assert abs(M.ssim(x, y) - loop_ssim(x, y, x.max())) < 1e-9


def test_ssim_affine_change_degrades():
    x = np.random.default_rng(6).random((16, 16))
    assert M.ssim(x, 0.7 * x + 0.1) < 1.0
    assert M.ssim(x, 1.3 * x) < 1.0


def test_ssim_symmetric_with_fixed_range():
    rng = np.random.default_rng(7)
    x, y = rng.random((20, 18)), rng.random((20, 18))
    assert abs(M.ssim(x, y, data_range=1.0) - M.ssim(y, x, data_range=1.0)) < 1e-15
    assert M.ssim(x, y) <= 1.0


def test_ssim_too_small():
    with pytest.raises(ValueError):
        M.ssim(np.ones((10, 16)), np.ones((10, 16)))


# ---------------------------------------------------------------------------
# FLOPs model


def test_flops_alpha0_is_vanilla():
    for c_in, c_out, h, w, k in [(64, 64, 64, 64, 3), (4, 16, 32, 48, 3), (3, 5, 7, 9, 5)]:
        assert M.flops_dual_octconv(c_in, c_out, h, w, k, alpha=0.0) == 4 * 2 * k * k * c_in * c_out * h * w


def test_relative_cost_closed_form():
    assert M.relative_cost(0.125) == 0.82421875
    assert M.relative_cost(0.0) == 1.0


def test_flops_ratio_exact_at_default_alpha():
    base = M.flops_dual_octconv(64, 64, 64, 64, 3, 0.0)
    assert M.flops_dual_octconv(64, 64, 64, 64, 3, 0.125) / base == 0.82421875


def path_sum_bruteforce(c, h, w, k, alpha):
    """Count MACs by enumerating every output pixel of every path."""
    cl = int(math.floor(alpha * c + 0.5))
    ch = c - cl
    total = 0
    for cin, cout, res in [(ch, ch, (h, w)), (ch, cl, (h // 2, w // 2)),
                           (cl, ch, (h // 2, w // 2)), (cl, cl, (h // 2, w // 2))]:
        total += cout * res[0] * res[1] * cin * k * k
    return 4 * 2 * total


@pytest.mark.parametrize("alpha", [0.0, 0.125, 0.25, 0.5, 0.75])
def test_flops_matches_path_enumeration(alpha):
    assert M.flops_dual_octconv(32, 32, 16, 16, 3, alpha) == path_sum_bruteforce(32, 16, 16, 3, alpha)


def test_flops_strictly_decreasing():
    vals = [M.flops_dual_octconv(64, 64, 64, 64, 3, a) for a in (0, 0.125, 0.25, 0.5, 0.75)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    rel = [M.relative_cost(a) for a in np.linspace(0, 1, 41)]
    assert all(a > b for a, b in zip(rel, rel[1:]))


def test_flops_odd_dims_error():
    with pytest.raises(ValueError):
        M.flops_dual_octconv(8, 8, 7, 8, 3, 0.25)
    assert M.flops_dual_octconv(8, 8, 7, 8, 3, 0.0) > 0


def test_network_flops_sums_layers():
    cfg = NetworkConfig(n_blocks=2, layers_per_block=3, feature_channels=16, alpha=0.125, coils=4)
    per_block = (M.flops_dual_octconv(4, 16, 64, 64, 3, 0.0, 0.125)
                 + M.flops_dual_octconv(16, 16, 64, 64, 3, 0.125)
                 + M.flops_dual_octconv(16, 4, 64, 64, 3, 0.125, 0.0))
    assert M.network_flops(cfg, 64, 64) == 2 * per_block
    assert M.network_flops(cfg, 64, 64, alpha=0.0) > M.network_flops(cfg, 64, 64)
