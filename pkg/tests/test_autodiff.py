import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ordergan.autodiff import AdamState, ShapeError, Tape, TrainingDiverged, adam_step, as_matrix, glorot_uniform
from ordergan.nn import bind, init_mlp, mlp

from gradcheck import RandomGraph, central_difference, graph_gradients, graph_value, relative_error


def test_relu_tanh_l2norm_values():
    t = Tape()
    assert np.array_equal(t.relu(t.leaf([-1.0, 0.0, 2.0])).value, [[0.0, 0.0, 2.0]])
    assert t.tanh(t.leaf([0.0])).value[0, 0] == 0.0
    assert t.l2norm(t.leaf([3.0, 4.0])).value[0, 0] == 5.0


def test_tanh_derivative_at_zero():
    t = Tape()
    x = t.leaf([[0.0]])
    (g,) = t.grad(t.tanh(x), [x])
    assert g[0, 0] == 1.0


def test_linear_form_gradient():
    t = Tape()
    x = t.leaf([[1.0, 2.0]])
    y = t.leaf([[3.0], [4.0]])
    gx, gy = t.grad(t.matmul(x, y), [x, y])
    assert np.array_equal(gx, [[3.0, 4.0]])
    assert np.array_equal(gy, [[1.0], [2.0]])


def test_relu_subgradient_at_zero_is_zero():
    t = Tape()
    x = t.leaf([[0.0, 1.0]])
    (g,) = t.grad(t.sum(t.relu(x)), [x])
    assert np.array_equal(g, [[0.0, 1.0]])


def test_non_scalar_backward_rejected():
    t = Tape()
    x = t.leaf(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        t.grad(t.tanh(x), [x])


def test_shape_mismatch_reports_dimensions():
    t = Tape()
    with pytest.raises(ShapeError, match=r"\(2, 3\) @ \(2, 3\)"):
        t.matmul(t.leaf(np.ones((2, 3))), t.leaf(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        t.add(t.leaf(np.ones((2, 3))), t.leaf(np.ones((3, 2))))


def test_non_finite_rejected_at_construction():
    with pytest.raises(ValueError):
        as_matrix([1.0, np.nan])
    with pytest.raises(ValueError):
        Tape().leaf([[np.inf]])


def test_foreign_node_rejected():
    a, b = Tape(), Tape()
    x = a.leaf([[1.0]])
    with pytest.raises(ValueError):
        b.tanh(x)


def test_tape_is_topological():
    t = Tape()
    x = t.leaf(np.ones((2, 2)))
    y = t.sum(t.square(t.tanh(x)))
    t.grad(y, [x], create_graph=True)
    for node in t.nodes:
        assert all(inp.id < node.id for inp in node.inputs)


def test_unreachable_input_gets_zero_gradient():
    t = Tape()
    x = t.leaf([[1.0, 2.0]])
    z = t.leaf([[5.0]])
    gx, gz = t.grad(t.sum(t.square(x)), [x, z])
    assert np.array_equal(gz, [[0.0]])
    assert np.array_equal(gx, [[2.0, 4.0]])


def test_gradient_accumulates_over_fan_out():
    t = Tape()
    x = t.leaf([[3.0]])
    (g,) = t.grad(t.mul(x, x), [x])
    assert g[0, 0] == 6.0


@pytest.mark.parametrize("seed", range(40))
def test_random_graph_gradients_match_finite_differences(seed):
    graph = RandomGraph(seed)
    arrays = [a.copy() for a in graph.inputs]
    analytic, relu_margin = graph_gradients(graph, arrays)
    if relu_margin < 1e-3:
        pytest.skip("relu input too close to the kink for finite differences")
    numeric = central_difference(lambda *a: graph_value(graph, *a), arrays)
    for a, n in zip(analytic, numeric):
        assert relative_error(a, n) < 1e-6


def test_random_graphs_cover_every_op():
    seen = set()
    for seed in range(40):
        graph = RandomGraph(seed)
        t = Tape()
        graph.build(t, [t.leaf(a) for a in graph.inputs])
        seen |= {n.kind for n in t.nodes}
    from ordergan.autodiff import OPS

    assert set(OPS) <= seen


def _two_layer_relu(seed, d=4, h=5):
    rng = np.random.default_rng(seed)
    params = init_mlp(rng, [d, h, 1], "D")
    x = rng.normal(size=(3, d))
    return params, x


def _penalty(params, x):
    t = Tape()
    nodes = bind(t, params)
    xl = t.leaf(x)
    out = mlp(t, nodes, "D", xl)
    (gx,) = t.grad(t.sum(out), [xl], create_graph=True)
    pen = t.mean(t.square(t.scale(t.l2norm(gx), 1.0, -1.0)))
    return t, nodes, xl, pen


@pytest.mark.parametrize("seed", range(5))
def test_double_backprop_penalty_gradient(seed):
    params, x = _two_layer_relu(seed)
    t, nodes, xl, pen = _penalty(params, x)
    pre = x @ params["D.W0"] + params["D.b0"]
    assert np.min(np.abs(pre)) > 1e-3
    names = list(params)
    analytic = t.grad(pen, [nodes[k] for k in names])

    def f(*arrays):
        p = dict(zip(names, arrays))
        return _penalty(p, x)[3].value[0, 0]

    numeric = central_difference(f, [params[k].copy() for k in names])
    for a, n in zip(analytic, numeric):
        assert relative_error(a, n) < 1e-4


def test_second_order_of_smooth_graph():
    # d/dx of (d/dx sum(tanh(x)^2))^2 summed, checked by differencing the first gradient
    x0 = np.array([[0.3, -0.7, 1.1]])

    def first_grad_sq(x):
        t = Tape()
        xl = t.leaf(x)
        (g,) = t.grad(t.sum(t.square(t.tanh(xl))), [xl], create_graph=True)
        return t, xl, t.sum(t.square(g))

    t, xl, out = first_grad_sq(x0)
    (analytic,) = t.grad(out, [xl])
    (numeric,) = central_difference(lambda x: first_grad_sq(x)[2].value[0, 0], [x0.copy()])
    assert relative_error(analytic, numeric) < 1e-7


def test_determinism_bit_identical():
    graph = RandomGraph(7)
    g1, _ = graph_gradients(graph, [a.copy() for a in graph.inputs])
    g2, _ = graph_gradients(graph, [a.copy() for a in graph.inputs])
    for a, b in zip(g1, g2):
        assert a.tobytes() == b.tobytes()


def test_glorot_bounds():
    w = glorot_uniform(np.random.default_rng(0), 30, 10)
    assert np.max(np.abs(w)) <= np.sqrt(6 / 40)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = {"w": np.array([[1.0, -2.0]])}
        state = AdamState()
        for _ in range(50):
            adam_step(state, p, {"w": np.zeros((1, 2))})
        assert np.array_equal(p["w"], [[1.0, -2.0]])

    @given(g=st.floats(min_value=1e-3, max_value=1e3) | st.floats(min_value=-1e3, max_value=-1e-3))
    @settings(max_examples=50, deadline=None)
    def test_first_step_magnitude_is_lr(self, g):
        # m_hat = g, v_hat = g^2 on the first step, so |update| = lr * |g| / (|g| + eps)
        p = {"w": np.zeros((1, 1))}
        state = AdamState(lr=1e-2)
        adam_step(state, p, {"w": np.full((1, 1), g)})
        expected = 1e-2 * abs(g) / (abs(g) + 1e-8)
        assert abs(abs(p["w"][0, 0]) - expected) < 1e-15
        assert np.sign(p["w"][0, 0]) == -np.sign(g)

    @staticmethod
    def _scalar_adam(b1, b2, lr=1e-2, steps=500):
        w, m, v = 1.0, 0.0, 0.0
        for t in range(1, steps + 1):
            g = 2 * w
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * (g * g)
            w -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + 1e-8)
        return w

    @pytest.mark.parametrize("b1,b2", [(0.9, 0.999), (0.6, 0.9)])
    def test_quadratic_bowl_matches_scalar_recurrence(self, b1, b2):
        p = {"w": np.array([[1.0]])}
        state = AdamState(lr=1e-2, beta1=b1, beta2=b2)
        for _ in range(500):
            adam_step(state, p, {"w": 2 * p["w"]})
        assert p["w"][0, 0] == pytest.approx(self._scalar_adam(b1, b2), abs=1e-12)
        assert state.step_count == 500

    def test_quadratic_bowl_converges(self):
        p = {"w": np.array([[1.0]])}
        state = AdamState(lr=1e-2, beta1=0.9, beta2=0.999)
        for _ in range(500):
            adam_step(state, p, {"w": 2 * p["w"]})
        assert abs(p["w"][0, 0]) < 1e-3

    def test_nan_gradient_halts(self):
        p = {"w": np.zeros((1, 1))}
        with pytest.raises(TrainingDiverged, match="'w'"):
            adam_step(AdamState(), p, {"w": np.array([[np.nan]])})

    def test_invalid_hyperparameters(self):
        with pytest.raises(ValueError):
            AdamState(beta1=1.0)
