"""Cascade of residual Dual-OctConv blocks with hard data-fidelity units.

For zero-filled input ``x0 = ifft2(y)``::

    x = x0
    for each block:
        x = x + block(x)          # entry -> body... -> exit, split ReLU between layers
        x = data_fidelity(x, y)   # sampled frequencies replaced by the measurements

Trained with the per-sample L1 loss against the coil images and Adam with a
per-epoch multiplicative learning-rate decay.
"""

import logging
import os
from dataclasses import dataclass, fields

import numpy as np

from dualoct import autodiff as ad
from dualoct import io, kernels, mri
from dualoct.metrics import psnr, ssim
from dualoct.octave import (block_layer_shapes, crelu_nodes, dual_octconv_nodes,
                            init_dual_oct_kernel, zero_dual_oct_kernel)
from dualoct.tensor import ComplexTensor, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkConfig:
    n_blocks: int = 10
    layers_per_block: int = 5
    feature_channels: int = 64
    alpha: float = 0.125
    kernel_size: int = 3
    coils: int = 4
    learning_rate: float = 1e-3
    lr_decay: float = 0.95
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.layers_per_block < 2:
            raise ValueError("layers_per_block must be >= 2 (entry + exit)")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.feature_channels < 1 or self.n_blocks < 1 or self.coils < 1 or self.batch_size < 1:
            raise ValueError("n_blocks, feature_channels, coils and batch_size must be >= 1")

    def layer_shapes(self):
        return block_layer_shapes(self.coils, self.feature_channels, self.layers_per_block,
                                  self.alpha, self.kernel_size)


@dataclass(frozen=True)
class DatasetSpec:
    n_train: int = 64
    n_val: int = 8
    height: int = 64
    width: int = 64
    coils: int = 4
    pattern: str = "random2d"
    acceleration: float = 3.0
    mask_seed: int = 0
    n_ellipses: int = 6
    seed: int = 0


class ModelParams:
    """Kernels of every layer of every block, in a fixed enumeration order."""

    def __init__(self, blocks):
        self.blocks = [list(b) for b in blocks]

    @classmethod
    def initialize(cls, config, seed=None):
        rng = np.random.default_rng(config.seed if seed is None else seed)
        return cls([[init_dual_oct_kernel(s, rng) for s in config.layer_shapes()]
                     for _ in range(config.n_blocks)])

    @classmethod
    def zeros(cls, config):
        return cls([[zero_dual_oct_kernel(s) for s in config.layer_shapes()]
                    for _ in range(config.n_blocks)])

    def named_tensors(self):
        out = []
        for b, block in enumerate(self.blocks):
            for l, k in enumerate(block):
                for g, t in k.groups():
                    out.append((f"b{b}.l{l}.{g}", t))
        return out

    def replace(self, values):
        """New ModelParams with tensors taken from ``values`` (name -> ComplexTensor)."""
        blocks = []
        for b, block in enumerate(self.blocks):
            new_block = []
            for l, k in enumerate(block):
                groups = {g: values.get(f"b{b}.l{l}.{g}", t) for g, t in k.groups()}
                for g, t in groups.items():
                    if t.shape != getattr(k, g).shape:
                        raise ShapeError(f"b{b}.l{l}.{g}: shape {t.shape} != {getattr(k, g).shape}")
                new_block.append(k.with_groups(groups))
            blocks.append(new_block)
        return ModelParams(blocks)

    def check(self, config):
        if len(self.blocks) != config.n_blocks:
            raise ShapeError(f"params have {len(self.blocks)} blocks, config says {config.n_blocks}")
        for b, block in enumerate(self.blocks):
            shapes = [k.layer for k in block]
            if shapes != config.layer_shapes():
                raise ShapeError(f"block {b} layer shapes {shapes} do not match config")

    def __eq__(self, other):
        a, b = self.named_tensors(), other.named_tensors()
        return [n for n, _ in a] == [n for n, _ in b] and all(x == y for (_, x), (_, y) in zip(a, b))


# ---------------------------------------------------------------------------
# forward pass


def build_forward(graph, params, y, mask, leaves=None):
    """Record the network on ``graph``.

    ``y`` is the measured k-space ([c,H,W] or [N,c,H,W]) as a ComplexTensor or
    Node; ``leaves`` optionally maps parameter names to existing kernel Nodes.
    Returns ``(output node, {name: kernel node})``.
    """
    h, w = y.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"spatial dims must be even, got {h}x{w}")
    grid = mask.grid if isinstance(mask, mri.SamplingMask) else np.asarray(mask, dtype=bool)
    y_node = y if isinstance(y, ad.Node) else graph.constant(y, name="y")
    if leaves is None:
        leaves = {name: graph.leaf(t, name=name) for name, t in params.named_tensors()}
    x = ad.ifft2(y_node)
    for b, block in enumerate(params.blocks):
        high, low = x, None
        last = len(block) - 1
        for l, k in enumerate(block):
            knodes = {g: leaves[f"b{b}.l{l}.{g}"] for g, _ in k.groups()}
            high, low = dual_octconv_nodes(high, low, knodes)
            if l < last:
                high, low = crelu_nodes(high, low)
        x = ad.add(x, high)
        x = ad.data_fidelity(x, y_node, grid)
    return x, leaves


def forward(params, acq):
    """Reconstructed coil images for an acquisition ([c,H,W] or [N,c,H,W])."""
    g = ad.Graph()
    out, _ = build_forward(g, params, acq.y, acq.mask)
    return out.value


def l1_loss(pred, target):
    """Mean over samples of sum(|d.real| + |d.imag|); unbatched input is one sample."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: shapes {pred.shape} and {target.shape} differ")
    n = pred.shape[0] if pred.ndim == 4 else 1
    return float((np.abs(pred.real - target.real).sum() + np.abs(pred.imag - target.imag).sum()) / n)


def loss_and_grads(params, y, mask, target):
    g = ad.Graph()
    out, leaves = build_forward(g, params, y, mask)
    loss = ad.l1_loss(out, g.constant(target))
    grads = ad.backward(g, loss)
    return float(loss.value.real[0]), {name: grads[n.id] for name, n in leaves.items()}, out.value


# ---------------------------------------------------------------------------
# Adam


BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, named):
        return cls({n: ComplexTensor.zeros(t.shape) for n, t in named},
                   {n: ComplexTensor.zeros(t.shape) for n, t in named}, 0)


def scheduled_lr(config, epoch):
    return config.learning_rate * config.lr_decay ** epoch


def adam_step(params, grads, state, lr, beta1=BETA1, beta2=BETA2, eps=ADAM_EPS):
    """One bias-corrected Adam update; real and imag planes are separate parameters.

    ``params``/``grads`` map names to ComplexTensors. Returns
    ``(new_params, new_state)``; inputs are not modified.
    """
    if set(params) != set(grads) or set(params) != set(state.m) or set(params) != set(state.v):
        raise ShapeError("params, grads and optimizer state are not aligned by name")
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for name in params:
        p, g, m, v = params[name], grads[name], state.m[name], state.v[name]
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeError(f"{name}: param {p.shape}, grad {g.shape}, state {m.shape}/{v.shape}")
        planes = []
        for pp, gg, mm, vv in ((p.real, g.real, m.real, v.real), (p.imag, g.imag, m.imag, v.imag)):
            mm = beta1 * mm + (1.0 - beta1) * gg
            vv = beta2 * vv + (1.0 - beta2) * gg * gg
            step = lr * (mm / c1) / (np.sqrt(vv / c2) + eps)
            planes.append((pp - step, mm, vv))
        new_p[name] = ComplexTensor(planes[0][0], planes[1][0])
        new_m[name] = ComplexTensor(planes[0][1], planes[1][1])
        new_v[name] = ComplexTensor(planes[0][2], planes[1][2])
    return new_p, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# data and training


@dataclass
class Dataset:
    y: ComplexTensor          # [N, c, H, W]
    target: ComplexTensor     # [N, c, H, W] coil images S_i x
    images: np.ndarray        # [N, H, W] complex ground-truth objects
    mask: mri.SamplingMask
    coils: mri.CoilSet

    def __len__(self):
        return self.y.shape[0]

    def batch(self, idx):
        idx = np.asarray(idx)
        return (ComplexTensor(self.y.real[idx], self.y.imag[idx]),
                ComplexTensor(self.target.real[idx], self.target.imag[idx]))

    def zero_filled(self):
        return mri.ifft2(self.y)


def make_dataset(spec, split="train"):
    """Phantoms pushed through the forward model with one shared mask."""
    n, offset = (spec.n_train, 0) if split == "train" else (spec.n_val, 1_000_000)
    if n < 1:
        raise ValueError(f"{split} split is empty")
    mask = mri.make_mask(spec.pattern, spec.acceleration, spec.height, spec.width, spec.mask_seed)
    coils = mri.make_sensitivities(spec.coils, spec.height, spec.width)
    ys, targets, images = [], [], []
    for i in range(n):
        x = mri.make_phantom(spec.height, spec.width, spec.n_ellipses, seed=[spec.seed, offset + i])
        acq = mri.forward_model(x, coils, mask)
        ys.append(acq.y.to_complex())
        targets.append(mri.coil_images(x, coils).to_complex())
        images.append(x.to_complex()[0])
    return Dataset(ComplexTensor.from_complex(np.stack(ys)), ComplexTensor.from_complex(np.stack(targets)),
                   np.stack(images), mask, coils)


def evaluate(params, data, batch_size=8):
    """Mean PSNR/SSIM of RSS-combined reconstructions and of the zero-filled input."""
    rec_p, rec_s, zf_p, zf_s = [], [], [], []
    zf = mri.rss_combine(data.zero_filled())
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        y, _ = data.batch(idx)
        g = ad.Graph()
        out, _ = build_forward(g, params, y, data.mask, leaves={
            n: g.constant(t) for n, t in params.named_tensors()})
        rec = mri.rss_combine(out.value)
        for j, i in enumerate(idx):
            ref = np.abs(data.images[i])
            rec_p.append(psnr(ref, rec[j, 0]))
            rec_s.append(ssim(ref, rec[j, 0]))
            zf_p.append(psnr(ref, zf[i, 0]))
            zf_s.append(ssim(ref, zf[i, 0]))
    return {"psnr": float(np.mean(rec_p)), "ssim": float(np.mean(rec_s)),
            "zf_psnr": float(np.mean(zf_p)), "zf_ssim": float(np.mean(zf_s))}


def dataset_loss(params, data, batch_size=8):
    """Mean per-sample L1 loss of the network over a whole dataset."""
    total = 0.0
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        y, target = data.batch(idx)
        g = ad.Graph()
        out, _ = build_forward(g, params, y, data.mask, leaves={
            n: g.constant(t) for n, t in params.named_tensors()})
        total += l1_loss(out.value, target) * len(idx)
    return total / len(data)


@dataclass
class TrainResult:
    params: ModelParams
    state: AdamState
    log: list               # per-epoch rows: epoch, iter, loss, val_psnr, val_ssim
    iter_losses: list
    initial_loss: float     # full training-set loss before the first update
    final_loss: float       # full training-set loss after the last update
    macs_per_iter: float    # measured real multiply-accumulates per iteration
    val: dict


def train(config, spec, iterations, train_data=None, val_data=None, params=None, progress=None):
    """Mini-batch Adam on the L1 loss; deterministic for a given config.seed.

    The learning rate is ``learning_rate * lr_decay**epoch``. One row is
    logged per completed epoch and one for the final (possibly partial) epoch.
    """
    train_data = make_dataset(spec, "train") if train_data is None else train_data
    val_data = make_dataset(spec, "val") if val_data is None else val_data
    if len(train_data) == 0:
        raise ValueError("training set is empty")
    if spec.coils != config.coils:
        raise ValueError(f"dataset has {spec.coils} coils but the network expects {config.coils}")
    params = ModelParams.initialize(config) if params is None else params
    params.check(config)
    state = AdamState.zeros_like(params.named_tensors())
    order_rng = np.random.default_rng([config.seed, 1])
    initial_loss = dataset_loss(params, train_data)

    rows, iter_losses, macs = [], [], []
    it = 0
    epoch = 0
    bs = config.batch_size
    per_epoch = max(len(train_data) // bs, 1)
    while it < iterations:
        lr = scheduled_lr(config, epoch)
        perm = order_rng.permutation(len(train_data))
        epoch_losses = []
        for b in range(per_epoch):
            if it >= iterations:
                break
            idx = perm[b * bs:(b + 1) * bs]
            y, target = train_data.batch(idx)
            before = kernels.mac_count()
            loss, grads, _ = loss_and_grads(params, y, train_data.mask, target)
            macs.append(kernels.mac_count() - before)
            named = dict(params.named_tensors())
            new, state = adam_step(named, grads, state, lr)
            params = params.replace(new)
            iter_losses.append(loss)
            epoch_losses.append(loss)
            it += 1
        ev = evaluate(params, val_data)
        rows.append({"epoch": epoch, "iter": it, "loss": float(np.mean(epoch_losses)),
                     "val_psnr": ev["psnr"], "val_ssim": ev["ssim"]})
        log.info("epoch %d iter %d loss %.4f val psnr %.3f ssim %.4f", epoch, it,
                 rows[-1]["loss"], ev["psnr"], ev["ssim"])
        if progress is not None:
            progress(rows[-1])
        epoch += 1
    final_loss = dataset_loss(params, train_data)
    return TrainResult(params, state, rows, iter_losses, initial_loss, final_loss,
                       float(np.mean(macs)) if macs else 0.0, ev)


def write_metric_log(path, rows):
    with open(path, "w") as f:
        f.write("epoch,iter,loss,val_psnr,val_ssim\n")
        for r in rows:
            f.write(f"{r['epoch']},{r['iter']},{r['loss']!r},{r['val_psnr']!r},{r['val_ssim']!r}\n")


# ---------------------------------------------------------------------------
# checkpoints


def config_items(config):
    return [(f.name, repr(getattr(config, f.name)) if isinstance(getattr(config, f.name), float)
             else getattr(config, f.name)) for f in fields(config)]


def parse_config(values, cls=NetworkConfig):
    """Build ``cls`` from string key/values, rejecting unknown keys."""
    known = {f.name: f.type for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for f in fields(cls):
        if f.name in values:
            kwargs[f.name] = f.type(values[f.name])
    return cls(**kwargs)


def save_checkpoint(directory, config, params, state=None):
    """Manifest of config lines plus one DOCT file per kernel group and Adam moment."""
    io.ensure_dir(directory)
    items = [(f"config.{k}", v) for k, v in config_items(config)]
    for name, t in params.named_tensors():
        fname = f"param.{name}.doct"
        io.write_doct(os.path.join(directory, fname), t)
        items.append((f"param.{name}", f"{fname} {'x'.join(map(str, t.shape))}"))
    if state is not None:
        items.append(("adam.t", state.t))
        for name, _ in params.named_tensors():
            io.write_doct(os.path.join(directory, f"adam_m.{name}.doct"), state.m[name])
            io.write_doct(os.path.join(directory, f"adam_v.{name}.doct"), state.v[name])
    io.write_keyvalue(os.path.join(directory, "manifest.txt"), items)


def load_checkpoint(directory):
    meta = io.read_keyvalue(os.path.join(directory, "manifest.txt"))
    config = parse_config({k[len("config."):]: v for k, v in meta.items() if k.startswith("config.")})
    template = ModelParams.zeros(config)
    values = {}
    for name, t in template.named_tensors():
        entry = meta.get(f"param.{name}")
        if entry is None:
            raise ValueError(f"checkpoint is missing parameter {name}")
        fname, shape = entry.split()
        values[name] = io.read_doct(os.path.join(directory, fname))
    params = template.replace(values)
    state = None
    if "adam.t" in meta:
        names = [n for n, _ in template.named_tensors()]
        state = AdamState({n: io.read_doct(os.path.join(directory, f"adam_m.{n}.doct")) for n in names},
                          {n: io.read_doct(os.path.join(directory, f"adam_v.{n}.doct")) for n in names},
                          int(meta["adam.t"]))
    return config, params, state


__all__ = [
    "NetworkConfig", "DatasetSpec", "ModelParams", "AdamState", "Dataset", "TrainResult",
    "build_forward", "forward", "l1_loss", "loss_and_grads", "adam_step", "scheduled_lr",
    "make_dataset", "evaluate", "dataset_loss", "train", "write_metric_log",
    "save_checkpoint", "load_checkpoint", "parse_config", "config_items",
]
