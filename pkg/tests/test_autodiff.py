import numpy as np
import pytest

from calibra import autodiff as ad

from oracles import central_diff, rel_err


def test_add_example():
    assert np.array_equal(ad.add([1.0, 2.0], [3.0, 4.0]).value, [4.0, 6.0])


def test_softmax_symmetric():
    assert np.allclose(ad.softmax(np.zeros(2)).value, [0.5, 0.5])


def test_matmul_identity():
    v = np.array([0.3, -1.2, 2.5])
    assert np.array_equal(ad.matmul(np.eye(3), v).value, v)


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ad.AutodiffError, match=r"add.*\(2,\).*\(3,\)"):
        ad.add(np.ones(2), np.ones(3))
    with pytest.raises(ad.AutodiffError, match=r"matmul.*\(2, 3\).*\(2,\)"):
        ad.matmul(np.ones((2, 3)), np.ones(2))


def test_square_sum_gradient():
    g = ad.Graph()
    x = g.param([1.0, 2.0, 3.0])
    assert np.array_equal(ad.backward(ad.sum(x * x))[x], [2.0, 4.0, 6.0])


def test_log_softmax_identity():
    z_val = np.array([0.3, -1.0, 2.0, 0.5])
    for k in range(4):
        g = ad.Graph()
        z = g.param(z_val)
        root = ad.log(ad.softmax(z))[k]
        onehot = np.eye(4)[k]
        assert np.allclose(ad.backward(root)[z], onehot - np.exp(z_val) / np.exp(z_val).sum())


def test_backward_errors():
    g = ad.Graph()
    x = g.param(np.ones(3))
    with pytest.raises(ad.AutodiffError, match="scalar"):
        ad.backward(x * 2.0)
    with pytest.raises(ad.AutodiffError, match="graph"):
        ad.backward(ad.Tensor(1.0))
    with pytest.raises(ad.AutodiffError):
        ad.grad(ad.sum(x), ad.Tensor(np.ones(3)))


def test_unused_param_gets_zero():
    g = ad.Graph()
    x = g.param([1.0, 2.0])
    y = g.param([[1.0], [2.0]])
    grads = ad.backward(ad.sum(x))
    assert np.array_equal(grads[y], np.zeros((2, 1)))


def test_max_is_cut_from_graph():
    g = ad.Graph()
    x = g.param([1.0, 3.0])
    m = ad.max(x)
    assert m.graph is None and m.item() == 3.0


UNARY = {
    "neg": (ad.neg, lambda rng, s: rng.normal(size=s)),
    "exp": (ad.exp, lambda rng, s: rng.normal(size=s)),
    "log": (ad.log, lambda rng, s: rng.uniform(0.2, 3.0, size=s)),
    "relu": (ad.relu, lambda rng, s: rng.choice([-1, 1], size=s) * rng.uniform(0.1, 2, size=s)),
    "tanh": (ad.tanh, lambda rng, s: rng.normal(size=s)),
    "sigmoid": (ad.sigmoid, lambda rng, s: 3 * rng.normal(size=s)),
    "sqrt": (ad.sqrt, lambda rng, s: rng.uniform(0.2, 3.0, size=s)),
    "abs": (ad.absolute, lambda rng, s: rng.choice([-1, 1], size=s) * rng.uniform(0.1, 2, size=s)),
    "pow": (lambda t: ad.power(t, 2.5), lambda rng, s: rng.uniform(0.2, 2.0, size=s)),
    "softmax": (ad.softmax, lambda rng, s: rng.normal(size=s)),
    "log_softmax": (ad.log_softmax, lambda rng, s: rng.normal(size=s)),
    "sum0": (lambda t: ad.sum(t, axis=0), lambda rng, s: rng.normal(size=s)),
    "mean1": (lambda t: ad.mean(t, axis=-1), lambda rng, s: rng.normal(size=s)),
    "clip_max": (lambda t: ad.clip_max(t, 0.3), lambda rng, s: rng.choice([-1, 1], size=s) * rng.uniform(0.4, 1, size=s)),
    "clip_min": (lambda t: ad.clip_min(t, -0.3), lambda rng, s: rng.choice([-1, 1], size=s) * rng.uniform(0.4, 1, size=s)),
    "reshape": (lambda t: ad.reshape(t, (-1,)), lambda rng, s: rng.normal(size=s)),
    "getitem": (lambda t: t[1:, :2], lambda rng, s: rng.normal(size=s)),
    "take_rows": (lambda t: ad.take_rows(t, np.arange(t.shape[0]) % t.shape[1]), lambda rng, s: rng.normal(size=s)),
}


def _check_fd(build, inputs, tol=1e-4):
    """Random linear functional of ``build(*inputs)`` against central differences."""
    rng = np.random.default_rng(99)
    out_shape = build(*[ad.Tensor(v) for v in inputs]).shape
    weights = rng.normal(size=out_shape)
    for k in range(len(inputs)):
        g = ad.Graph()
        ts = [g.param(v) for v in inputs]
        analytic = ad.backward(ad.sum(build(*ts) * weights))[ts[k]]

        def f(v, k=k):
            args = list(inputs)
            args[k] = v
            return float(np.sum(build(*[ad.Tensor(a) for a in args]).value * weights))

        numeric = central_diff(f, inputs[k])
        assert rel_err(analytic, numeric) < tol, (k, analytic, numeric)


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients_match_finite_differences(name):
    op, sampler = UNARY[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    for _ in range(100):
        x = sampler(rng, (3, 4))
        _check_fd(op, [x])


BINARY = {
    "add": ad.add, "sub": ad.sub, "mul": ad.mul,
    "div": lambda a, b: ad.div(a, ad.add(ad.absolute(b), 0.5)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
@pytest.mark.parametrize("shapes", [((3, 4), (3, 4)), ((3, 4), (4,)), ((3, 4), (3, 1)), ((4,), (3, 4))])
def test_binary_gradients_with_broadcast(name, shapes):
    rng = np.random.default_rng(7)
    for _ in range(100):
        a = rng.normal(size=shapes[0])
        b = rng.choice([-1, 1], size=shapes[1]) * rng.uniform(0.2, 2, size=shapes[1])
        _check_fd(BINARY[name], [a, b])


def test_matmul_gradients():
    rng = np.random.default_rng(3)
    for _ in range(100):
        _check_fd(ad.matmul, [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))])
        _check_fd(ad.matmul, [rng.normal(size=(3, 4)), rng.normal(size=4)])


def test_laplacian_quadform_gradients():
    rng = np.random.default_rng(5)
    for _ in range(100):
        r = rng.uniform(0, 1, size=6)
        w = rng.normal(size=6)
        _check_fd(lambda a, b: ad.laplacian_quadform(a, b, 0.4), [r, w])


def test_two_layer_net_against_finite_differences():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(5, 3))
    w1, w2 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    c = rng.normal(size=(5, 2))

    def net(a, b):
        return ad.sum(ad.tanh(ad.Tensor(x) @ a) @ b * c)

    _check_fd(net, [w1, w2])


def test_linearity_of_adjoints():
    rng = np.random.default_rng(2)
    v = rng.normal(size=5)
    g = ad.Graph()
    x = g.param(v)
    f1 = ad.sum(ad.exp(x))
    f2 = ad.sum(ad.tanh(x) * x)
    both = ad.backward(f1 + f2)[x]
    assert np.allclose(both, ad.backward(f1)[x] + ad.backward(f2)[x], rtol=1e-14, atol=0)


def test_forward_backward_is_deterministic():
    def run():
        rng = np.random.default_rng(17)
        g = ad.Graph()
        w = g.param(rng.normal(size=(4, 3)))
        x = rng.normal(size=(6, 4))
        loss = -ad.sum(ad.log_softmax(ad.Tensor(x) @ w)[:, 0])
        return loss.item(), ad.backward(loss)[w]

    (l1, g1), (l2, g2) = run(), run()
    assert l1 == l2 and np.array_equal(g1, g2)


def test_tape_order_is_topological():
    g = ad.Graph()
    x = g.param([1.0, 2.0])
    ad.sum(ad.exp(x) * x)
    for i, node in enumerate(g.nodes):
        assert all(src is None or src < i for src in node.inputs)
