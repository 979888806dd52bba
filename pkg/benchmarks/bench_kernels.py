"""Compare the compiled and numpy convolution backends.

Times the three kernels at the shapes met in the toy network (batch 4,
16 channels, 64x64 and 32x32) and one training-step forward/backward pass
of that network, then prints a table of best-of-N timings and speedups.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from dualoct import _pykernels, kernels
from dualoct import network as N

SHAPES = [  # (N, C, H, W, O, k)
    (4, 16, 64, 64, 16, 3),
    (4, 14, 64, 64, 2, 3),
    (4, 2, 32, 32, 2, 3),
    (4, 4, 64, 64, 14, 3),
]


def best_of(fn, repeat):
    t = timeit.Timer(fn)
    number, _ = t.autorange()
    return min(t.repeat(repeat=repeat, number=number)) / number


def kernel_rows(impls, repeat):
    rng = np.random.default_rng(0)
    rows = []
    for n, c, h, w, o, k in SHAPES:
        x = rng.standard_normal((n, c, h, w))
        wt = rng.standard_normal((o, c, k, k))
        g = rng.standard_normal((n, o, h, w))
        calls = {
            "forward": lambda m: m.conv2d_forward(x, wt),
            "grad_input": lambda m: m.conv2d_grad_input(g, wt),
            "grad_weight": lambda m: m.conv2d_grad_weight(x, g, k),
        }
        for name, call in calls.items():
            times = {b: best_of(lambda: call(m), repeat) for b, m in impls.items()}
            rows.append((f"{name} {n}x{c}x{h}x{w}->{o}", times))
    return rows


def step_row(repeat):
    cfg = N.NetworkConfig(n_blocks=2, layers_per_block=3, feature_channels=16, alpha=0.125, coils=4)
    spec = N.DatasetSpec(n_train=4, n_val=1)
    data = N.make_dataset(spec, "train")
    params = N.ModelParams.initialize(cfg)
    y, target = data.batch(np.arange(4))
    times = {}
    for b in kernels.available_backends():
        prev = kernels.set_backend(b)
        try:
            times[b] = best_of(lambda: N.loss_and_grads(params, y, data.mask, target), repeat)
        finally:
            kernels.set_backend(prev)
    return ("train step (batch 4, 64x64)", times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    impls = {"numpy": _pykernels}
    if "cython" in kernels.available_backends():
        from dualoct import _ckernels
        impls["cython"] = _ckernels
    else:
        print("compiled extension not built; timing the numpy backend only")
    rows = kernel_rows(impls, args.repeat) + [step_row(args.repeat)]
    names = sorted(impls)
    print(f"{'case':38s}" + "".join(f"{n + ' ms':>12s}" for n in names) + ("    speedup" if len(names) > 1 else ""))
    for label, times in rows:
        line = f"{label:38s}" + "".join(f"{times[n] * 1e3:12.3f}" for n in names)
        if len(names) > 1:
            line += f"    {times['numpy'] / times['cython']:6.2f}x"
        print(line)


if __name__ == "__main__":
    main()
