"""Reverse-mode differentiation on a dynamic tape of ComplexTensor ops.

Real and imaginary planes are treated as independent real variables: the
gradient stored for a node holds dL/d(real) in its real plane and
dL/d(imag) in its imag plane. The loss is the real part of a scalar node.

Usage::

    g = Graph()
    x = g.leaf(ComplexTensor(...))
    k = g.leaf(kernel)
    loss = sum_(complex_conv2d(x, k))
    grads = backward(g, loss)        # {node id: ComplexTensor}
    grads[k.id].real                 # dL/dK_r
"""

import numpy as np

from dualoct import fft as _fft
from dualoct import kernels
from dualoct import tensor as T
from dualoct.tensor import ComplexTensor, ShapeError


class GraphError(ValueError):
    pass


class Node:
    __slots__ = ("id", "graph", "op", "inputs", "value", "requires_grad", "_backward", "name")

    def __init__(self, graph, op, inputs, value, backward_fn, requires_grad, name=None):
        self.graph = graph
        self.op = op
        self.inputs = tuple(inputs)
        self.value = value
        self._backward = backward_fn
        self.requires_grad = requires_grad
        self.name = name
        self.id = len(graph.nodes)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.id}, {self.op}{label}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__


class Graph:
    """Append-only tape; inputs always precede the nodes that consume them."""

    def __init__(self):
        self.nodes = []

    def leaf(self, value, name=None, requires_grad=True):
        if not isinstance(value, ComplexTensor):
            value = ComplexTensor(value)
        return self._append("leaf", (), value, None, requires_grad, name)

    def constant(self, value, name=None):
        return self.leaf(value, name=name, requires_grad=False)

    def _append(self, op, inputs, value, backward_fn, requires_grad, name=None):
        for node in inputs:
            if node.graph is not self:
                raise GraphError(f"input {node!r} belongs to a different graph")
        node = Node(self, op, inputs, value, backward_fn, requires_grad, name)
        self.nodes.append(node)
        return node

    def __len__(self):
        return len(self.nodes)


def _record(op, inputs, re, im, backward_fn):
    graph = inputs[0].graph
    needs = any(n.requires_grad for n in inputs)
    return graph._append(op, inputs, ComplexTensor(re, im), backward_fn if needs else None, needs)


def backward(graph, loss):
    """Gradients of ``Re(loss)`` for every ancestor of ``loss`` that requires them.

    ``loss`` may be a Node or a node id; its value must have shape ``(1,)``.
    Returns a dict ``{node id: ComplexTensor}``.
    """
    if isinstance(loss, Node):
        if loss.graph is not graph:
            raise GraphError("loss node belongs to a different graph")
        loss_id = loss.id
    else:
        loss_id = int(loss)
        if not 0 <= loss_id < len(graph.nodes):
            raise GraphError(f"unknown node id {loss_id}")
    root = graph.nodes[loss_id]
    if root.shape != (1,):
        raise GraphError(f"loss must be a scalar of shape (1,), got {root.shape}")

    grads = {loss_id: [np.ones(1), np.zeros(1)]}
    for node in reversed(graph.nodes[:loss_id + 1]):
        g = grads.get(node.id)
        if g is None or node._backward is None:
            continue
        contributions = node._backward(g[0], g[1])
        for parent, contrib in zip(node.inputs, contributions):
            if contrib is None or not parent.requires_grad:
                continue
            gr, gi = contrib
            if parent.id in grads:
                acc = grads[parent.id]
                acc[0] = acc[0] + gr
                acc[1] = acc[1] + gi
            else:
                grads[parent.id] = [np.broadcast_to(gr, parent.shape).copy(),
                                    np.broadcast_to(gi, parent.shape).copy()]
    return {nid: ComplexTensor(g[0], g[1]) for nid, g in grads.items()
            if graph.nodes[nid].requires_grad}


# ---------------------------------------------------------------------------
# ops


def add(a, b):
    T._same_shape(a.value, b.value, "add")

    def bw(gr, gi):
        return (gr, gi), (gr, gi)
    return _record("add", (a, b), a.value.real + b.value.real, a.value.imag + b.value.imag, bw)


def sub(a, b):
    T._same_shape(a.value, b.value, "sub")

    def bw(gr, gi):
        return (gr, gi), (-gr, -gi)
    return _record("sub", (a, b), a.value.real - b.value.real, a.value.imag - b.value.imag, bw)


def scale(a, s):
    """Multiply by a constant real or complex scalar."""
    s = complex(s)
    p, q = s.real, s.imag
    xr, xi = a.value.real, a.value.imag

    def bw(gr, gi):
        # adjoint of multiplication by s is multiplication by conj(s)
        return ((p * gr + q * gi, -q * gr + p * gi),)
    return _record("scale", (a,), p * xr - q * xi, q * xr + p * xi, bw)


def mul(a, b):
    """Elementwise complex product."""
    T._same_shape(a.value, b.value, "mul")
    ar, ai, br, bi = a.value.real, a.value.imag, b.value.real, b.value.imag

    def bw(gr, gi):
        return ((br * gr + bi * gi, -bi * gr + br * gi),
                (ar * gr + ai * gi, -ai * gr + ar * gi))
    return _record("mul", (a, b), ar * br - ai * bi, ar * bi + ai * br, bw)


def concat(nodes, axis=0):
    nodes = list(nodes)
    out = T.concat([n.value for n in nodes], axis=axis)
    sizes = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def bw(gr, gi):
        return list(zip(np.split(gr, sizes, axis=axis), np.split(gi, sizes, axis=axis)))
    return _record("concat", nodes, out.real, out.imag, bw)


def crelu(x):
    mr = x.value.real > 0
    mi = x.value.imag > 0

    def bw(gr, gi):
        return ((gr * mr, gi * mi),)
    return _record("crelu", (x,), np.where(mr, x.value.real, 0.0), np.where(mi, x.value.imag, 0.0), bw)


def avg_pool2(x):
    def bw(gr, gi):
        return ((T.upsample_plane(gr) * 0.25, T.upsample_plane(gi) * 0.25),)
    return _record("avg_pool2", (x,), T.pool_plane(x.value.real), T.pool_plane(x.value.imag), bw)


def upsample2(x):
    def bw(gr, gi):
        return ((T.pool_plane(gr) * 4.0, T.pool_plane(gi) * 4.0),)
    return _record("upsample2", (x,), T.upsample_plane(x.value.real), T.upsample_plane(x.value.imag), bw)


def _batch4(a):
    return a[None] if a.ndim == 3 else a


def _unbatch(a, like):
    return a[0] if like.ndim == 3 else a


def conv2d_real(x, k):
    """Real cross-correlation of the real planes; imag planes are ignored."""
    T._check_conv(x.shape, k.shape, None)
    xr = _batch4(x.value.real)
    kr = k.value.real
    ksize = kr.shape[2]
    out = _unbatch(kernels.conv2d_forward(xr, kr), x.value.real)

    def bw(gr, gi):
        g4 = _batch4(gr)
        gx = _unbatch(kernels.conv2d_grad_input(g4, kr), gr)
        gk = kernels.conv2d_grad_weight(xr, g4, ksize)
        return (gx, np.zeros_like(gx)), (gk, np.zeros_like(gk))
    return _record("conv2d_real", (x, k), out, np.zeros_like(out), bw)


def complex_conv2d(x, k):
    """Complex convolution of feature node ``x`` with complex kernel node ``k``.

    Four real convolutions: re = Kr*Xr - Ki*Xi, im = Kr*Xi + Ki*Xr.
    """
    T._check_conv(x.shape, k.shape, None)
    xr, xi = _batch4(x.value.real), _batch4(x.value.imag)
    kr, ki = k.value.real, k.value.imag
    ksize = kr.shape[2]
    re = kernels.conv2d_forward(xr, kr) - kernels.conv2d_forward(xi, ki)
    im = kernels.conv2d_forward(xi, kr) + kernels.conv2d_forward(xr, ki)

    def bw(gr, gi):
        gr4, gi4 = _batch4(gr), _batch4(gi)
        gxr = kernels.conv2d_grad_input(gr4, kr) + kernels.conv2d_grad_input(gi4, ki)
        gxi = kernels.conv2d_grad_input(gi4, kr) - kernels.conv2d_grad_input(gr4, ki)
        gkr = kernels.conv2d_grad_weight(xr, gr4, ksize) + kernels.conv2d_grad_weight(xi, gi4, ksize)
        gki = kernels.conv2d_grad_weight(xr, gi4, ksize) - kernels.conv2d_grad_weight(xi, gr4, ksize)
        return (_unbatch(gxr, gr), _unbatch(gxi, gr)), (gkr, gki)
    return _record("complex_conv2d", (x, k), _unbatch(re, x.value.real), _unbatch(im, x.value.real), bw)


def fft2(x):
    z = _fft.fft2c(x.value.to_complex())

    def bw(gr, gi):
        # unitary: the adjoint is the inverse transform
        g = _fft.ifft2c(gr + 1j * gi)
        return ((g.real, g.imag),)
    return _record("fft2", (x,), z.real, z.imag, bw)


def ifft2(x):
    z = _fft.ifft2c(x.value.to_complex())

    def bw(gr, gi):
        g = _fft.fft2c(gr + 1j * gi)
        return ((g.real, g.imag),)
    return _record("ifft2", (x,), z.real, z.imag, bw)


def mask_replace(k, y, mask):
    """Where ``mask`` is true take ``y``, elsewhere keep ``k``.

    ``mask`` is a boolean array broadcastable over the trailing [H, W] axes.
    """
    T._same_shape(k.value, y.value, "mask_replace")
    m = np.broadcast_to(np.asarray(mask, dtype=bool), k.shape)
    re = np.where(m, y.value.real, k.value.real)
    im = np.where(m, y.value.imag, k.value.imag)

    def bw(gr, gi):
        keep = ~m
        return (gr * keep, gi * keep), (gr * m, gi * m)
    return _record("mask_replace", (k, y), re, im, bw)


def data_fidelity(x, y, mask):
    """Hard k-space consistency: ifft2(where(mask, y, fft2(x)))."""
    return ifft2(mask_replace(fft2(x), y, mask))


def sum_(x):
    """Complex sum of all entries, shape (1,)."""
    def bw(gr, gi):
        return ((np.full(x.shape, gr[0]), np.full(x.shape, gi[0])),)
    return _record("sum", (x,), np.array([x.value.real.sum()]), np.array([x.value.imag.sum()]), bw)


def inner(x, w):
    """Real inner product sum(x.real*w.real + x.imag*w.imag), shape (1,)."""
    T._same_shape(x.value, w.value, "inner")
    xr, xi, wr, wi = x.value.real, x.value.imag, w.value.real, w.value.imag
    val = float(np.sum(xr * wr) + np.sum(xi * wi))

    def bw(gr, gi):
        s = gr[0]
        return (s * wr, s * wi), (s * xr, s * xi)
    return _record("inner", (x, w), np.array([val]), np.zeros(1), bw)


def l1_loss(pred, target):
    """Mean over the leading (sample) axis of sum(|d.real| + |d.imag|), d = pred - target.

    Unbatched inputs count as a single sample. The subgradient at zero is 0.
    """
    T._same_shape(pred.value, target.value, "l1_loss")
    dr = pred.value.real - target.value.real
    di = pred.value.imag - target.value.imag
    n = pred.shape[0] if pred.value.ndim == 4 else 1
    val = (np.abs(dr).sum() + np.abs(di).sum()) / n

    def bw(gr, gi):
        s = gr[0] / n
        sr, si = s * np.sign(dr), s * np.sign(di)
        return (sr, si), (-sr, -si)
    return _record("l1_loss", (pred, target), np.array([val]), np.zeros(1), bw)


# ---------------------------------------------------------------------------
# finite-difference verification


def check_gradients(fn, inputs, eps=1e-5, seed=0):
    """Compare analytic gradients of ``fn`` with central differences.

    ``fn(graph, nodes)`` builds a graph from leaf nodes holding ``inputs``
    and returns an output node; non-scalar outputs are reduced with a fixed
    random projection. Every real and imaginary coordinate of every input
    is perturbed by +/-eps. Returns the worst norm-wise relative error
    ``|analytic - numeric| / max(|analytic|, |numeric|)`` over the inputs.
    """
    inputs = [x if isinstance(x, ComplexTensor) else ComplexTensor(x) for x in inputs]
    proj = {}

    def objective(values, want_graph=False):
        g = Graph()
        nodes = [g.leaf(v) for v in values]
        out = fn(g, nodes)
        if out.shape != (1,):
            if "w" not in proj:
                r = np.random.default_rng(seed + 7919)
                proj["w"] = ComplexTensor(r.standard_normal(out.shape), r.standard_normal(out.shape))
            out = inner(out, g.constant(proj["w"]))
        return (g, nodes, out) if want_graph else float(out.value.real[0])

    g, nodes, out = objective(inputs, want_graph=True)
    grads = backward(g, out)
    worst = 0.0
    for idx, x in enumerate(inputs):
        analytic = grads.get(nodes[idx].id, ComplexTensor.zeros(x.shape))
        a = np.concatenate([analytic.real.ravel(), analytic.imag.ravel()])
        numeric = np.zeros_like(a)
        flat = np.concatenate([x.real.ravel(), x.imag.ravel()])
        half = x.size
        for j in range(flat.size):
            vals = []
            for sign in (1.0, -1.0):
                p = flat.copy()
                p[j] += sign * eps
                pert = ComplexTensor(p[:half].reshape(x.shape), p[half:].reshape(x.shape))
                vals.append(objective(inputs[:idx] + [pert] + inputs[idx + 1:]))
            numeric[j] = (vals[0] - vals[1]) / (2 * eps)
        denom = max(np.linalg.norm(a), np.linalg.norm(numeric))
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(a - numeric) / denom))
    return worst


def _df_case(g, nodes, rng):
    (x,) = nodes
    h, w = x.shape[-2:]
    mask = rng.random((h, w)) < 0.4
    y = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
    y = ComplexTensor.from_complex(y * mask)
    return data_fidelity(x, g.constant(y), mask)


# name -> (builder(graph, nodes, rng), linear?)
REGISTRY = {
    "add": (lambda g, n, r: add(*n), True),
    "sub": (lambda g, n, r: sub(*n), True),
    "scale": (lambda g, n, r: scale(n[0], complex(0.7, -1.3)), True),
    "mul": (lambda g, n, r: mul(*n), False),
    "concat": (lambda g, n, r: concat(n, axis=0), True),
    "crelu": (lambda g, n, r: crelu(n[0]), False),
    "avg_pool2": (lambda g, n, r: avg_pool2(n[0]), True),
    "upsample2": (lambda g, n, r: upsample2(n[0]), True),
    "pool_upsample": (lambda g, n, r: avg_pool2(upsample2(n[0])), True),
    "conv2d_real": (lambda g, n, r: conv2d_real(*n), False),
    "complex_conv2d": (lambda g, n, r: complex_conv2d(*n), False),
    "fft2": (lambda g, n, r: fft2(n[0]), True),
    "ifft2": (lambda g, n, r: ifft2(n[0]), True),
    "data_fidelity": (_df_case, True),
    "sum": (lambda g, n, r: sum_(n[0]), True),
    "inner": (lambda g, n, r: inner(*n), False),
    "l1_loss": (lambda g, n, r: l1_loss(*n), False),
}


def register(name, builder, linear=False):
    """Add an op to the :func:`grad_check` registry."""
    REGISTRY[name] = (builder, linear)


def grad_check(op_name, input_shapes, seed=0, eps=1e-5):
    """Finite-difference check of a registered op on random inputs.

    Returns the worst relative error between analytic and central-difference
    gradients over all real and imaginary input coordinates.
    """
    if op_name not in REGISTRY:
        raise KeyError(f"no op {op_name!r} registered; have {sorted(REGISTRY)}")
    builder, _ = REGISTRY[op_name]
    rng = np.random.default_rng(seed)
    inputs = [ComplexTensor(rng.standard_normal(s), rng.standard_normal(s)) for s in input_shapes]
    aux_seed = int(rng.integers(2**31))

    def fn(g, nodes):
        return builder(g, nodes, np.random.default_rng(aux_seed))
    return check_gradients(fn, inputs, eps=eps, seed=seed)


def is_linear(op_name):
    return REGISTRY[op_name][1]


__all__ = [
    "Graph", "Node", "GraphError", "ShapeError", "backward", "add", "sub", "scale", "mul",
    "concat", "crelu", "avg_pool2", "upsample2", "conv2d_real", "complex_conv2d", "fft2",
    "ifft2", "mask_replace", "data_fidelity", "sum_", "inner", "l1_loss",
    "check_gradients", "grad_check", "register", "REGISTRY",
]
