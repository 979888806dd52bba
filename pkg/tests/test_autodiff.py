import numpy as np
import pytest

from dualoct import autodiff as ad
from dualoct.tensor import ComplexTensor

from oracles import central_difference

# input shapes per registered op, all within [2,2,6,6]
SHAPES = {
    "add": [(2, 3, 4)] * 2,
    "sub": [(2, 3, 4)] * 2,
    "scale": [(2, 3, 4)],
    "mul": [(2, 3, 4)] * 2,
    "concat": [(1, 4, 4), (2, 4, 4)],
    "crelu": [(2, 3, 4)],
    "avg_pool2": [(2, 2, 6, 6)],
    "upsample2": [(2, 2, 3, 3)],
    "pool_upsample": [(2, 3, 3)],
    "conv2d_real": [(1, 1, 4, 4), (1, 1, 3, 3)],
    "complex_conv2d": [(2, 2, 6, 6), (2, 2, 3, 3)],
    "fft2": [(2, 4, 4)],
    "ifft2": [(2, 6, 4)],
    "data_fidelity": [(2, 2, 6, 6)],
    "sum": [(2, 3, 4)],
    "inner": [(2, 3, 4)] * 2,
    "l1_loss": [(2, 2, 4, 4)] * 2,
}


def test_every_registered_op_has_shapes():
    assert set(SHAPES) == set(ad.REGISTRY)


@pytest.mark.parametrize("op", sorted(SHAPES))
def test_grad_check(op):
    err = ad.grad_check(op, SHAPES[op], seed=3)
    limit = 1e-7 if ad.is_linear(op) else 1e-5
    assert err < limit, f"{op}: relative error {err:.3e}"


def test_grad_check_conv_example():
    assert ad.grad_check("conv2d_real", [(1, 1, 4, 4), (1, 1, 3, 3)]) < 1e-5


def test_grad_check_unknown_op():
    with pytest.raises(KeyError):
        ad.grad_check("nope", [(1,)])


def test_register_custom_op():
    ad.register("square_test", lambda g, n, r: ad.mul(n[0], n[0]))
    try:
        assert ad.grad_check("square_test", [(3, 3)]) < 1e-5
        assert not ad.is_linear("square_test")
    finally:
        del ad.REGISTRY["square_test"]


def test_sum_gradient_is_ones():
    g = ad.Graph()
    x = g.leaf(ComplexTensor(np.arange(6.0).reshape(2, 3), np.ones((2, 3))))
    grads = ad.backward(g, ad.sum_(x))
    np.testing.assert_array_equal(grads[x.id].real, np.ones((2, 3)))
    # the loss is Re(sum), so imag entries do not reach it
    np.testing.assert_array_equal(grads[x.id].imag, np.zeros((2, 3)))


def test_sum_of_real_and_imag_parts():
    g = ad.Graph()
    x = g.leaf(ComplexTensor(np.ones(4), np.ones(4)))
    # Re(sum(x * (1 - i))) = sum(re) + sum(im)
    grads = ad.backward(g, ad.sum_(ad.scale(x, 1 - 1j)))
    np.testing.assert_array_equal(grads[x.id].real, np.ones(4))
    np.testing.assert_array_equal(grads[x.id].imag, np.ones(4))


def test_crelu_gradient_mask():
    g = ad.Graph()
    x = g.leaf(ComplexTensor(np.array([-2.0, 5.0])))
    grads = ad.backward(g, ad.sum_(ad.crelu(x)))
    np.testing.assert_array_equal(grads[x.id].real, [0.0, 1.0])


def test_backward_errors():
    g = ad.Graph()
    x = g.leaf(ComplexTensor(np.ones(3)))
    with pytest.raises(ad.GraphError):
        ad.backward(g, x)
    with pytest.raises(ad.GraphError):
        ad.backward(g, 17)
    other = ad.Graph()
    y = other.leaf(ComplexTensor(np.ones(1)))
    with pytest.raises(ad.GraphError):
        ad.backward(g, y)
    with pytest.raises(ad.GraphError):
        ad.add(x, other.leaf(ComplexTensor(np.ones(3))))


def test_backward_accepts_node_id():
    g = ad.Graph()
    x = g.leaf(ComplexTensor(np.ones(3)))
    loss = ad.sum_(x)
    assert ad.backward(g, loss.id)[x.id] == ad.backward(g, loss)[x.id]


def test_only_reachable_ancestors_get_gradients():
    g = ad.Graph()
    x = g.leaf(ComplexTensor(np.ones(3)))
    unused = g.leaf(ComplexTensor(np.ones(3)))
    c = g.constant(ComplexTensor(np.ones(3)))
    grads = ad.backward(g, ad.sum_(ad.mul(x, c)))
    assert x.id in grads
    assert unused.id not in grads and c.id not in grads


def test_gradient_accumulation_matches_expanded_graph():
    rng = np.random.default_rng(0)
    xv = ComplexTensor(rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 4, 4)))
    kv = ComplexTensor(rng.standard_normal((2, 2, 3, 3)), rng.standard_normal((2, 2, 3, 3)))
    w = ComplexTensor(rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 4, 4)))

    # shared: x feeds both a convolution and a crelu
    g = ad.Graph()
    x, k, wn = g.leaf(xv), g.constant(kv), g.constant(w)
    shared = ad.backward(g, ad.inner(ad.add(ad.complex_conv2d(x, k), ad.crelu(x)), wn))[x.id]

    # expanded: two independent copies of x, gradients summed by hand
    g2 = ad.Graph()
    x1, x2, k2, w2 = g2.leaf(xv), g2.leaf(xv), g2.constant(kv), g2.constant(w)
    grads = ad.backward(g2, ad.inner(ad.add(ad.complex_conv2d(x1, k2), ad.crelu(x2)), w2))
    expected = grads[x1.id] + grads[x2.id]
    np.testing.assert_array_equal(shared.real, expected.real)
    np.testing.assert_array_equal(shared.imag, expected.imag)


def test_real_only_graph_gives_zero_imag_gradients():
    rng = np.random.default_rng(1)
    g = ad.Graph()
    x = g.leaf(ComplexTensor(rng.standard_normal((1, 2, 5, 5))))
    k = g.leaf(ComplexTensor(rng.standard_normal((3, 2, 3, 3))))
    out = ad.crelu(ad.complex_conv2d(ad.avg_pool2(ad.upsample2(x)), k))
    grads = ad.backward(g, ad.sum_(out))
    assert np.all(grads[x.id].imag == 0) and np.all(grads[k.id].imag == 0)
    assert np.any(grads[k.id].real != 0)


def test_check_gradients_against_independent_difference():
    # cross-check the verifier itself with a plain numpy central difference
    rng = np.random.default_rng(2)
    xv = rng.standard_normal((1, 4, 4))
    kv = rng.standard_normal((1, 1, 3, 3))
    from dualoct.tensor import conv2d_real

    def f(k):
        return float(np.sum(np.tanh(conv2d_real(xv, k))))
    numeric = central_difference(f, kv)
    g = ad.Graph()
    x, k = g.constant(ComplexTensor(xv)), g.leaf(ComplexTensor(kv))
    y = ad.conv2d_real(x, k)
    # d/dy sum(tanh(y)) = 1 - tanh(y)^2, fed back through an inner product
    weight = ComplexTensor(1 - np.tanh(y.value.real) ** 2)
    analytic = ad.backward(g, ad.inner(y, g.constant(weight)))[k.id].real
    np.testing.assert_allclose(analytic, numeric, rtol=1e-7, atol=1e-9)


def test_check_gradients_detects_wrong_backward():
    def bad(x):
        def bw(gr, gi):
            return ((2 * gr, 2 * gi),)
        return ad._record("bad", (x,), x.value.real, x.value.imag, bw)
    err = ad.check_gradients(lambda g, n: bad(n[0]), [ComplexTensor(np.ones((2, 2)), np.ones((2, 2)))])
    assert err > 0.1


def test_node_operators():
    g = ad.Graph()
    a = g.leaf(ComplexTensor(np.array([1.0, 2.0]), np.array([0.5, -1.0])))
    b = g.leaf(ComplexTensor(np.array([3.0, -1.0])))
    assert (a + b).value == ComplexTensor(np.array([4.0, 1.0]), np.array([0.5, -1.0]))
    assert (a - b).value == ComplexTensor(np.array([-2.0, 3.0]), np.array([0.5, -1.0]))
    assert (2 * a).value == ComplexTensor(np.array([2.0, 4.0]), np.array([1.0, -2.0]))
    assert (a * b).value == ComplexTensor(np.array([3.0, -2.0]), np.array([1.5, 1.0]))
