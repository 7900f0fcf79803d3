"""
gradients from the graph against finite differences, including gradients of gradients
"""

import numpy as np
import pytest

from physbench.diff_engine import (
    Graph,
    MlpParams,
    input_gradient,
    input_hessian_block,
    mlp_forward,
    parameter_gradient,
)
from physbench.learned_models import HnnModel, hnn_loss, hnn_loss_node
from physbench.models import Activation, ContractError, MlpSpec, NotScalarError, NumericError

EPS = 1e-6


def central_difference(function, x: np.ndarray) -> np.ndarray:
    """
    gradient of a scalar function of an array by central differences
    """
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[index] = EPS
        grad[index] = (function(x + step) - function(x - step)) / (2 * EPS)
    return grad


def composite(graph: Graph, x, w):
    hidden = graph.tanh(graph.matmul(x, w))
    return graph.total_sum(hidden * graph.sin(x) + graph.softplus(x) * graph.cos(x))


def test_square_gradient():
    graph = Graph()
    x = graph.variable(np.array([1.0, -2.0, 3.0]))
    grad = graph.gradient(graph.total_sum(x * x), x)
    assert np.allclose(grad.value, [2.0, -4.0, 6.0])


def test_composite_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    x0 = rng.normal(size=(3, 2))
    w0 = rng.normal(size=(2, 2))

    graph = Graph()
    x, w = graph.variable(x0), graph.variable(w0)
    grad_x, grad_w = graph.gradient(composite(graph, x, w), [x, w])

    def value_at(x_value, w_value):
        inner = Graph()
        return float(composite(inner, inner.constant(x_value), inner.constant(w_value)).value)

    assert np.allclose(grad_x.value, central_difference(lambda v: value_at(v, w0), x0), rtol=1e-5, atol=1e-7)
    assert np.allclose(grad_w.value, central_difference(lambda v: value_at(x0, v), w0), rtol=1e-5, atol=1e-7)


def test_second_derivative_of_cubic():
    """
    d2/dx2 of sum(x^3) is diag(6x), built by differentiating the first gradient
    """
    graph = Graph()
    x = graph.variable(np.array([[0.5, -1.5]]))
    grad = graph.gradient(graph.total_sum(x * x * x), x)
    assert np.allclose(grad.value, [[0.75, 6.75]])
    row_0 = graph.gradient(graph.total_sum(graph.take(grad, 0, axis=1)), x)
    row_1 = graph.gradient(graph.total_sum(graph.take(grad, 1, axis=1)), x)
    assert np.allclose(row_0.value, [[3.0, 0.0]])
    assert np.allclose(row_1.value, [[0.0, -9.0]])


def test_third_derivative():
    """
    d3/dx3 of sin(x) is -cos(x)
    """
    graph = Graph()
    x = graph.variable(np.array(0.3))
    first = graph.gradient(graph.sin(x), x)
    second = graph.gradient(first, x)
    third = graph.gradient(second, x)
    assert np.isclose(first.value, np.cos(0.3))
    assert np.isclose(second.value, -np.sin(0.3))
    assert np.isclose(third.value, -np.cos(0.3))


def test_broadcast_gradient_reduces_to_operand_shape():
    graph = Graph()
    x = graph.variable(np.ones((4, 3)))
    bias = graph.variable(np.array([1.0, 2.0, 3.0]))
    grad = graph.gradient(graph.total_sum(x + bias), bias)
    assert grad.shape == (3,)
    assert np.allclose(grad.value, [4.0, 4.0, 4.0])


def test_solve_gradient_matches_finite_differences():
    matrix0 = np.array([[[3.0, 0.5], [0.2, 2.0]]])
    rhs0 = np.array([[1.0, -1.0]])
    weights = np.array([[1.0, 2.0]])

    def value_at(matrix_value, rhs_value):
        inner = Graph()
        return float(inner.total_sum(inner.solve(matrix_value, rhs_value) * weights).value)

    graph = Graph()
    matrix, rhs = graph.variable(matrix0), graph.variable(rhs0)
    loss = graph.total_sum(graph.solve(matrix, rhs) * weights)
    grad_matrix, grad_rhs = graph.gradient(loss, [matrix, rhs])
    assert np.allclose(grad_matrix.value, central_difference(lambda v: value_at(v, rhs0), matrix0), atol=1e-7)
    assert np.allclose(grad_rhs.value, central_difference(lambda v: value_at(matrix0, v), rhs0), atol=1e-7)


def test_unrelated_node_has_zero_gradient():
    graph = Graph()
    x = graph.variable(np.array([1.0, 2.0]))
    y = graph.variable(np.array([3.0]))
    grad = graph.gradient(graph.total_sum(x * x), y)
    assert np.array_equal(grad.value, [0.0])


def test_gradient_of_vector_raises():
    graph = Graph()
    x = graph.variable(np.array([1.0, 2.0]))
    with pytest.raises(NotScalarError):
        graph.gradient(x * x, x)


def test_non_finite_value_raises():
    graph = Graph()
    with pytest.raises(NumericError):
        graph.reciprocal(graph.variable(np.array([0.0, 1.0])))


def test_singular_solve_raises():
    graph = Graph()
    with pytest.raises(NumericError):
        graph.solve(np.zeros((2, 2)), np.ones(2))


def test_matmul_shape_mismatch():
    graph = Graph()
    with pytest.raises(ContractError):
        graph.matmul(np.ones((2, 3)), np.ones((2, 3)))


@pytest.fixture(name='small_net')
def fixture_small_net() -> MlpParams:
    return MlpParams.initialise(MlpSpec(layer_sizes=[2, 6, 6, 1], activation=Activation.TANH), 3)


def test_initialise_is_deterministic(small_net: MlpParams):
    again = MlpParams.initialise(small_net.spec, 3)
    assert all(np.array_equal(a, b) for a, b in zip(small_net.arrays(), again.arrays()))
    assert [weight.shape for weight in small_net.weights] == [(2, 6), (6, 6), (6, 1)]
    assert all(not bias.any() for bias in small_net.biases)
    limit = np.sqrt(6.0 / 8)
    assert np.abs(small_net.weights[0]).max() <= limit


def test_wrong_layer_shape_raises(small_net: MlpParams):
    arrays = small_net.arrays()
    arrays[0] = np.zeros((3, 6))
    with pytest.raises(ContractError):
        MlpParams.from_arrays(small_net.spec, arrays)


def test_forward_single_and_batch(small_net: MlpParams):
    batch = np.array([[0.1, 0.2], [-0.3, 0.4]])
    outputs = mlp_forward(small_net, batch)
    assert outputs.shape == (2,)
    assert mlp_forward(small_net, batch[1]) == pytest.approx(outputs[1])
    with pytest.raises(ContractError):
        mlp_forward(small_net, np.ones(3))


def test_input_gradient_and_hessian(small_net: MlpParams):
    x0 = np.array([0.3, -0.7])
    grad = input_gradient(small_net, x0)
    assert np.allclose(grad, central_difference(lambda v: mlp_forward(small_net, v), x0), rtol=1e-5, atol=1e-8)

    hessian = input_hessian_block(small_net, x0, rows=[0, 1], cols=[0, 1])
    numeric = np.stack([central_difference(lambda v, i=i: input_gradient(small_net, v)[i], x0) for i in range(2)])
    assert np.allclose(hessian, numeric, rtol=1e-5, atol=1e-7)
    assert np.allclose(hessian, hessian.T, atol=1e-10)

    off_diagonal = input_hessian_block(small_net, np.stack([x0, x0]), rows=[1], cols=[0])
    assert off_diagonal.shape == (2, 1, 1)
    assert np.isclose(off_diagonal[0, 0, 0], hessian[1, 0])


def test_hessian_index_out_of_range(small_net: MlpParams):
    with pytest.raises(ContractError):
        input_hessian_block(small_net, np.zeros(2), rows=[2], cols=[0])


def test_parameter_gradient_through_input_gradient(small_net: MlpParams):
    """
    the HNN loss holds dH/dx, its parameter gradient is a second-order derivative of the network
    """
    rng = np.random.default_rng(5)
    states = rng.normal(size=(4, 2))
    labels = rng.normal(size=(4, 2))

    graph = Graph()
    bound = small_net.bind(graph)
    grads = parameter_gradient(hnn_loss_node(graph, bound, states, labels), bound)

    arrays = small_net.arrays()
    for layer in range(len(arrays)):

        def loss_at(value, layer=layer):
            changed = list(arrays)
            changed[layer] = value
            return hnn_loss(HnnModel(MlpParams.from_arrays(small_net.spec, changed)), states, labels)

        numeric = central_difference(loss_at, arrays[layer])
        assert np.allclose(grads.arrays()[layer], numeric, rtol=1e-4, atol=1e-7)


def test_quadratic_network():
    net = MlpParams.quadratic([0.5, 2.0])
    x = np.array([[0.3, -0.4], [1.0, 0.5]])
    assert np.allclose(mlp_forward(net, x), 0.5 * x[:, 0] ** 2 + 2.0 * x[:, 1] ** 2, rtol=1e-5)
    assert np.allclose(input_gradient(net, x), np.stack([x[:, 0], 4.0 * x[:, 1]], axis=1), rtol=1e-5)


def random_net(rng: np.random.Generator) -> MlpParams:
    """
    one or two hidden layers of random width, random biases, tanh or softplus
    """
    n = int(rng.integers(1, 5))
    hidden = [int(width) for width in rng.integers(2, 7, size=int(rng.integers(1, 3)))]
    activation = Activation.TANH if rng.random() < 0.5 else Activation.SOFTPLUS
    spec = MlpSpec(layer_sizes=[n, *hidden, 1], activation=activation)
    arrays = []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        arrays.extend([rng.normal(scale=fan_in**-0.5, size=(fan_in, fan_out)), rng.normal(scale=0.3, size=fan_out)])
    return MlpParams.from_arrays(spec, arrays)


@pytest.mark.parametrize('seed', range(100))
def test_random_net_input_derivatives(seed: int):
    rng = np.random.default_rng(seed)
    net = random_net(rng)
    n = net.input_dim
    x0 = rng.normal(size=n)

    grad = input_gradient(net, x0)
    numeric = central_difference(lambda v: mlp_forward(net, v), x0)
    assert np.linalg.norm(grad - numeric) <= 1e-5 * np.linalg.norm(grad) + 1e-9

    hessian = input_hessian_block(net, x0, rows=list(range(n)), cols=list(range(n)))
    numeric = np.stack([central_difference(lambda v, i=i: input_gradient(net, v)[i], x0) for i in range(n)])
    assert np.linalg.norm(hessian - numeric) <= 1e-4 * np.linalg.norm(hessian) + 1e-8

    rows = sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())
    cols = sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())
    assert np.allclose(input_hessian_block(net, x0, rows=rows, cols=cols), hessian[np.ix_(rows, cols)], atol=1e-12)
