import numpy as np
import pytest

from phonelab.autodiff import (
    Graph,
    GraphError,
    backward,
    eval_forward,
    grad_check,
)


def test_identity_graph():
    g = Graph()
    x = g.input("x", (3,))
    ex = eval_forward(g, {"x": np.array([1.0, 2.0, 3.0])})
    assert np.array_equal(ex.value(x), [1.0, 2.0, 3.0])


def test_softmax_symmetry():
    g = Graph()
    x = g.input("x", (2,))
    y = g.softmax(x)
    ex = eval_forward(g, {"x": np.zeros(2)})
    assert np.allclose(ex.value(y), [0.5, 0.5], atol=0)


def test_cosine_orthogonal():
    g = Graph()
    a = g.input("a", (1, 2))
    b = g.input("b", (1, 2))
    s = g.cosine_sim(a, b)
    ex = eval_forward(g, {"a": [[1.0, 0.0]], "b": [[0.0, 1.0]]})
    assert ex.value(s)[0, 0] == 0.0


def test_product_rule():
    g = Graph()
    x = g.input("x", ())
    y = g.input("y", ())
    loss = g.mul(x, y)
    ex = eval_forward(g, {"x": 2.0, "y": 3.0})
    grads = backward(ex, loss)
    assert grads["x"] == 3.0
    assert grads["y"] == 2.0


def test_softmax_sum_has_zero_gradient():
    g = Graph()
    v = g.input("v", (4,))
    loss = g.sum(g.softmax(v))
    ex = eval_forward(g, {"v": np.array([0.3, -1.2, 2.0, 0.0])})
    grads = backward(ex, loss)
    assert np.allclose(grads["v"], 0.0, atol=1e-15)


def test_log_softmax_pick_gradient():
    # L = log softmax(v)[0] with v=[1,0]: dv = [1-s, -(1-s)], s = e/(1+e)
    g = Graph()
    v = g.input("v", (1, 2))
    lp = g.log_softmax(v)
    loss = g.sum(g.take_per_row(lp, [0]))
    ex = eval_forward(g, {"v": np.array([[1.0, 0.0]])})
    grads = backward(ex, loss)
    s = np.e / (1.0 + np.e)
    assert np.allclose(grads["v"], [[1.0 - s, -(1.0 - s)]], atol=1e-12)
    assert abs(grads["v"][0, 0] - 0.2689) < 1e-4


def test_linear_grad_check_is_exact():
    g = Graph()
    w = g.input("w", (4,))
    x = g.input("x", (4,))
    loss = g.sum(g.mul(w, x))
    rng = np.random.default_rng(0)
    err = grad_check(g, loss, {"w": rng.normal(size=4), "x": rng.normal(size=4)})
    assert err <= 1e-10


def test_mlp_grad_check():
    rng = np.random.default_rng(1)
    g = Graph()
    x = g.input("x", (3, 5))
    w1 = g.input("w1", (5, 7))
    b1 = g.input("b1", (7,))
    w2 = g.input("w2", (7, 2))
    h = g.gelu(g.add(g.matmul(x, w1), b1))
    loss = g.sum(g.matmul(h, w2))
    inputs = {
        "x": rng.normal(size=(3, 5)),
        "w1": rng.normal(size=(5, 7)),
        "b1": rng.normal(size=7),
        "w2": rng.normal(size=(7, 2)),
    }
    assert grad_check(g, loss, inputs, epsilon=1e-5) <= 1e-4


def test_unused_input_gets_zero_gradient():
    g = Graph()
    x = g.input("x", (2,))
    unused = g.input("unused", (3,))
    loss = g.sum(x)
    ex = eval_forward(g, {"x": np.ones(2), "unused": np.ones(3)})
    grads = backward(ex, loss)
    assert np.array_equal(grads["unused"], np.zeros(3))


def test_backward_rejects_non_scalar_loss():
    g = Graph()
    x = g.input("x", (2,))
    y = g.mul(x, x)
    ex = eval_forward(g, {"x": np.ones(2)})
    with pytest.raises(GraphError, match="scalar"):
        backward(ex, y)


def test_shape_mismatch_names_node():
    g = Graph()
    a = g.input("a", (2, 3))
    b = g.input("b", (2, 3))
    with pytest.raises(GraphError, match="matmul"):
        g.matmul(a, b)


def test_non_finite_output_names_node():
    g = Graph()
    x = g.input("x", (2,))
    y = g.log(x)
    with pytest.raises(GraphError, match="log#1"):
        eval_forward(g, {"x": np.array([1.0, 0.0])})


def test_forward_is_pure_and_bit_identical():
    rng = np.random.default_rng(2)
    g = Graph()
    x = g.input("x", (4, 6))
    w = g.input("w", (6, 6))
    y = g.softmax(g.matmul(g.gelu(x), w))
    inputs = {"x": rng.normal(size=(4, 6)), "w": rng.normal(size=(6, 6))}
    a = eval_forward(g, inputs).value(y)
    b = eval_forward(g, inputs).value(y)
    assert np.array_equal(a, b)


def test_backward_linearity():
    rng = np.random.default_rng(3)
    g = Graph()
    x = g.input("x", (5,))
    l1 = g.sum(g.gelu(x))
    l2 = g.sum(g.mul(x, x))
    tot = g.add(l1, l2)
    ex = eval_forward(g, {"x": rng.normal(size=5)})
    g1 = backward(ex, l1)["x"]
    g2 = backward(ex, l2)["x"]
    gt = backward(ex, tot)["x"]
    assert np.allclose(gt, g1 + g2, atol=1e-12)


def _rand_shape(rng, ndim):
    return tuple(int(rng.integers(1, 17)) for _ in range(ndim))


def op_kind_cases():
    """One small randomized grad-check graph per differentiable op kind."""
    rng = np.random.default_rng(42)

    def pair(name, build, inputs):
        return pytest.param(build, inputs, id=name)

    cases = []

    def simple(name, f, shapes, positive=False):
        def build(g, vars_):
            return g.sum(f(g, *vars_))

        ins = {}
        for i, s in enumerate(shapes):
            arr = rng.normal(size=s)
            if positive:
                arr = np.abs(arr) + 0.5
            ins[f"i{i}"] = arr
        cases.append(pair(name, build, ins))

    simple("add", lambda g, a, b: g.add(a, b), [_rand_shape(rng, 2)] * 2)
    simple("sub", lambda g, a, b: g.sub(a, b), [_rand_shape(rng, 2)] * 2)
    simple("mul", lambda g, a, b: g.mul(a, b), [_rand_shape(rng, 2)] * 2)
    simple("add_broadcast", lambda g, a, b: g.add(a, b), [(5, 7), (7,)])
    simple("scale", lambda g, a: g.scale(a, -2.5), [(4, 3)])
    simple("gelu", lambda g, a: g.gelu(a), [(6,)])
    simple("log", lambda g, a: g.log(a), [(5,)], positive=True)
    simple("matmul", lambda g, a, b: g.matmul(a, b), [(4, 6), (6, 3)])
    simple("transpose", lambda g, a: g.mul(g.transpose(a), g.transpose(a)), [(3, 5)])
    simple("conv1d", lambda g, x, w: g.conv1d(x, w, stride=2), [(2, 15), (3, 2, 4)])
    simple("layer_norm", lambda g, x, gm, bs: g.layer_norm(x, gm, bs), [(4, 6), (6,), (6,)])
    simple("softmax", lambda g, a: g.mul(g.softmax(a), g.softmax(a)), [(3, 5)])
    simple("log_softmax", lambda g, a: g.log_softmax(a), [(3, 5)])
    simple("cosine_sim", lambda g, a, b: g.cosine_sim(a, b), [(4, 3), (5, 3)])
    simple("gather_rows", lambda g, t: g.gather_rows(t, [2, 0, 2]), [(4, 5)])
    simple("take_per_row", lambda g, x: g.take_per_row(x, [1, 0, 2]), [(3, 4)])
    simple("mean", lambda g, a: g.mean(a), [(7,)])
    simple("slice_cols", lambda g, a: g.slice_cols(a, 1, 4), [(3, 6)])
    simple("concat_cols", lambda g, a, b: g.concat_cols([a, b]), [(3, 2), (3, 4)])
    return cases


@pytest.mark.parametrize("build,inputs", op_kind_cases())
def test_grad_check_per_op_kind(build, inputs):
    g = Graph()
    vars_ = [g.input(k, v.shape) for k, v in inputs.items()]
    loss = build(g, vars_)
    assert grad_check(g, loss, inputs, epsilon=1e-5) <= 1e-4
