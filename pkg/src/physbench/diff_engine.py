"""
A small computation graph with reverse-mode differentiation

Every node holds an eagerly evaluated float64 array. Differentiating a scalar node appends the adjoint
computation to the same graph, so any gradient is itself an ordinary node and can be differentiated
again: HNN training differentiates a gradient (depth 2), LNN training differentiates a solve against a
Hessian (depth 3).
"""

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from physbench.models import Activation, ContractError, MlpSpec, NotScalarError, NumericError
from physbench.utils import make_rng

Index = int | list[int]


class Node:
    """
    one array-valued vertex of a Graph, operands always precede it
    """

    __slots__ = ('graph', 'index', 'op', 'operands', 'value', 'attrs')

    def __init__(self, graph: 'Graph', index: int, op: str, operands: tuple['Node', ...], value: np.ndarray, attrs):
        self.graph = graph
        self.index = index
        self.op = op
        self.operands = operands
        self.value = value
        self.attrs = attrs

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f'Node({self.index}, {self.op}, shape={self.shape})'

    def __add__(self, other):
        return self.graph.add(self, other)

    def __radd__(self, other):
        return self.graph.add(other, self)

    def __sub__(self, other):
        return self.graph.sub(self, other)

    def __rsub__(self, other):
        return self.graph.sub(other, self)

    def __mul__(self, other):
        return self.graph.mul(self, other)

    def __rmul__(self, other):
        return self.graph.mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Node):
            return self.graph.mul(self, self.graph.reciprocal(other))
        return self.graph.mul(self, 1.0 / other)

    def __neg__(self):
        return self.graph.neg(self)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)


class Graph:
    """
    Append-only record of nodes

    Construction and differentiation are single threaded per graph.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _record(self, op: str, operands: Sequence[Node], value, **attrs) -> Node:
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericError(f'Non-finite value produced by {op} at node {len(self.nodes)}')
        node = Node(self, len(self.nodes), op, tuple(operands), value, attrs)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self._record('constant', (), value)

    def variable(self, value, name: str = '') -> Node:
        """
        a leaf which callers intend to differentiate with respect to
        """
        return self._record('variable', (), value, name=name)

    def lift(self, item) -> Node:
        if isinstance(item, Node):
            if item.graph is not self:
                raise ContractError('Node belongs to a different graph')
            return item
        return self.constant(item)

    # arithmetic with numpy broadcasting

    def add(self, a, b) -> Node:
        a, b = self.lift(a), self.lift(b)
        return self._record('add', (a, b), a.value + b.value)

    def sub(self, a, b) -> Node:
        a, b = self.lift(a), self.lift(b)
        return self._record('sub', (a, b), a.value - b.value)

    def mul(self, a, b) -> Node:
        a, b = self.lift(a), self.lift(b)
        return self._record('mul', (a, b), a.value * b.value)

    def neg(self, a) -> Node:
        a = self.lift(a)
        return self._record('neg', (a,), -a.value)

    def matmul(self, a, b) -> Node:
        a, b = self.lift(a), self.lift(b)
        if a.ndim < 2 or b.ndim < 2:
            raise ContractError(f'matmul needs operands of at least 2 dimensions, got {a.shape} and {b.shape}')
        if a.shape[-1] != b.shape[-2]:
            raise ContractError(f'matmul shape mismatch: {a.shape} @ {b.shape}')
        return self._record('matmul', (a, b), a.value @ b.value)

    # shape manipulation

    def swap_last(self, a) -> Node:
        a = self.lift(a)
        return self._record('swap_last', (a,), np.swapaxes(a.value, -1, -2))

    def reshape(self, a, shape: Sequence[int]) -> Node:
        a = self.lift(a)
        return self._record('reshape', (a,), a.value.reshape(tuple(shape)))

    def broadcast_to(self, a, shape: Sequence[int]) -> Node:
        a = self.lift(a)
        return self._record('broadcast_to', (a,), np.broadcast_to(a.value, tuple(shape)))

    def sum_axis(self, a, axes: Sequence[int]) -> Node:
        a = self.lift(a)
        axes = tuple(axes)
        return self._record('sum_axis', (a,), np.sum(a.value, axis=axes), axes=axes)

    def sum_to(self, a, shape: Sequence[int]) -> Node:
        """
        reduce a broadcast result back to the shape of the operand which was broadcast
        """
        a = self.lift(a)
        shape = tuple(shape)
        if a.shape == shape:
            return a
        lead = a.ndim - len(shape)
        axes = tuple(range(lead)) + tuple(
            lead + i for i, size in enumerate(shape) if size == 1 and a.shape[lead + i] != 1
        )
        return self.reshape(self.sum_axis(a, axes), shape)

    def take(self, a, index: Index, axis: int) -> Node:
        a = self.lift(a)
        axis = axis % a.ndim
        size = a.shape[axis]
        for i in [index] if isinstance(index, int) else index:
            if not -size <= i < size:
                raise ContractError(f'Index {i} out of range for axis {axis} of size {size}')
        return self._record('take', (a,), np.take(a.value, index, axis=axis), index=index, axis=axis)

    def scatter(self, a, index: Index, axis: int, shape: Sequence[int]) -> Node:
        """
        zeros of the given shape, with a added at index along axis (inverse of take)
        """
        a = self.lift(a)
        shape = tuple(shape)
        out = np.zeros(shape)
        selector: list = [slice(None)] * len(shape)
        selector[axis] = index
        np.add.at(out, tuple(selector), a.value)
        return self._record('scatter', (a,), out, index=index, axis=axis, shape=shape)

    def concat(self, items: Sequence, axis: int) -> Node:
        items = [self.lift(item) for item in items]
        axis = axis % items[0].ndim
        return self._record('concat', items, np.concatenate([item.value for item in items], axis=axis), axis=axis)

    # elementwise functions

    def tanh(self, a) -> Node:
        a = self.lift(a)
        return self._record('tanh', (a,), np.tanh(a.value))

    def sigmoid(self, a) -> Node:
        a = self.lift(a)
        return self._record('sigmoid', (a,), 0.5 * (1.0 + np.tanh(0.5 * a.value)))

    def softplus(self, a) -> Node:
        a = self.lift(a)
        return self._record('softplus', (a,), np.logaddexp(0.0, a.value))

    def sin(self, a) -> Node:
        a = self.lift(a)
        return self._record('sin', (a,), np.sin(a.value))

    def cos(self, a) -> Node:
        a = self.lift(a)
        return self._record('cos', (a,), np.cos(a.value))

    def sqrt(self, a) -> Node:
        a = self.lift(a)
        return self._record('sqrt', (a,), np.sqrt(a.value))

    def reciprocal(self, a) -> Node:
        a = self.lift(a)
        with np.errstate(divide='ignore'):
            return self._record('reciprocal', (a,), 1.0 / a.value)

    # reductions and linear algebra

    def total_sum(self, a) -> Node:
        a = self.lift(a)
        return self._record('total_sum', (a,), np.sum(a.value))

    def solve(self, matrix, rhs) -> Node:
        """
        batched solution x of matrix @ x = rhs, matrix (..., n, n) and rhs (..., n)
        """
        matrix, rhs = self.lift(matrix), self.lift(rhs)
        if matrix.ndim < 2 or matrix.shape[-1] != matrix.shape[-2] or matrix.shape[-1] != rhs.shape[-1]:
            raise ContractError(f'solve shape mismatch: {matrix.shape} and {rhs.shape}')
        try:
            value = np.linalg.solve(matrix.value, rhs.value[..., None])[..., 0]
        except np.linalg.LinAlgError as lae:
            raise NumericError(f'Singular matrix in solve at node {len(self.nodes)}') from lae
        return self._record('solve', (matrix, rhs), value)

    def gradient(self, output: Node, wrt: Node | Sequence[Node]) -> Node | list[Node]:
        """
        reverse-mode gradient of a scalar node, built as new nodes in this graph

        Args:
            output (Node): a node with shape ()
            wrt (Node | list[Node]): one node or a list of nodes to differentiate with respect to

        Returns:
            one adjoint node per requested node, shaped like that node
        """
        output = self.lift(output)
        if output.ndim != 0:
            raise NotScalarError(f'Gradient requires a scalar output, got shape {output.shape}')

        single = isinstance(wrt, Node)
        targets = [wrt] if single else list(wrt)
        for target in targets:
            self.lift(target)

        # only nodes downstream of a target carry adjoints
        first = min((target.index for target in targets), default=output.index + 1)
        relevant = {target.index for target in targets}
        for node in self.nodes[first : output.index + 1]:
            if any(operand.index in relevant for operand in node.operands):
                relevant.add(node.index)

        adjoints: dict[int, Node] = {}
        if output.index in relevant:
            adjoints[output.index] = self.constant(1.0)

        for node in reversed(self.nodes[first : output.index + 1]):
            adjoint = adjoints.get(node.index)
            if adjoint is None or not node.operands:
                continue
            needs = [operand.index in relevant for operand in node.operands]
            if not any(needs):
                continue
            for operand, need, grad in zip(node.operands, needs, _VJP[node.op](self, node, adjoint, needs)):
                if not need or grad is None:
                    continue
                prior = adjoints.get(operand.index)
                adjoints[operand.index] = grad if prior is None else self.add(prior, grad)

        results = []
        for target in targets:
            adjoint = adjoints.get(target.index)
            results.append(adjoint if adjoint is not None else self.constant(np.zeros(target.shape)))
        return results[0] if single else results


def _vjp_add(graph: Graph, node: Node, g: Node, needs: list[bool]) -> list[Node | None]:
    a, b = node.operands
    return [graph.sum_to(g, a.shape) if needs[0] else None, graph.sum_to(g, b.shape) if needs[1] else None]


def _vjp_sub(graph: Graph, node: Node, g: Node, needs: list[bool]) -> list[Node | None]:
    a, b = node.operands
    return [graph.sum_to(g, a.shape) if needs[0] else None, graph.neg(graph.sum_to(g, b.shape)) if needs[1] else None]


def _vjp_mul(graph: Graph, node: Node, g: Node, needs: list[bool]) -> list[Node | None]:
    a, b = node.operands
    return [
        graph.sum_to(graph.mul(g, b), a.shape) if needs[0] else None,
        graph.sum_to(graph.mul(g, a), b.shape) if needs[1] else None,
    ]


def _vjp_matmul(graph: Graph, node: Node, g: Node, needs: list[bool]) -> list[Node | None]:
    a, b = node.operands
    return [
        graph.sum_to(graph.matmul(g, graph.swap_last(b)), a.shape) if needs[0] else None,
        graph.sum_to(graph.matmul(graph.swap_last(a), g), b.shape) if needs[1] else None,
    ]


def _vjp_sum_axis(graph: Graph, node: Node, g: Node, needs: list[bool]) -> list[Node | None]:
    (a,) = node.operands
    kept = tuple(1 if axis in node.attrs['axes'] else size for axis, size in enumerate(a.shape))
    return [graph.broadcast_to(graph.reshape(g, kept), a.shape)]


def _vjp_solve(graph: Graph, node: Node, g: Node, needs: list[bool]) -> list[Node | None]:
    matrix, rhs = node.operands
    grad_rhs = graph.solve(graph.swap_last(matrix), g)
    grad_matrix = None
    if needs[0]:
        column = graph.reshape(grad_rhs, (*grad_rhs.shape, 1))
        row = graph.reshape(node, (*node.shape[:-1], 1, node.shape[-1]))
        grad_matrix = graph.neg(graph.sum_to(graph.mul(column, row), matrix.shape))
    return [grad_matrix, graph.sum_to(grad_rhs, rhs.shape) if needs[1] else None]


def _vjp_concat(graph: Graph, node: Node, g: Node, needs: list[bool]) -> list[Node | None]:
    axis = node.attrs['axis']
    grads: list[Node | None] = []
    start = 0
    for operand, need in zip(node.operands, needs):
        stop = start + operand.shape[axis]
        grads.append(graph.take(g, list(range(start, stop)), axis) if need else None)
        start = stop
    return grads


_VJP: dict[str, Callable[[Graph, Node, Node, list[bool]], list[Node | None]]] = {
    'add': _vjp_add,
    'sub': _vjp_sub,
    'mul': _vjp_mul,
    'neg': lambda graph, node, g, needs: [graph.neg(g)],
    'matmul': _vjp_matmul,
    'swap_last': lambda graph, node, g, needs: [graph.swap_last(g)],
    'reshape': lambda graph, node, g, needs: [graph.reshape(g, node.operands[0].shape)],
    'broadcast_to': lambda graph, node, g, needs: [graph.sum_to(g, node.operands[0].shape)],
    'sum_axis': _vjp_sum_axis,
    'take': lambda graph, node, g, needs: [
        graph.scatter(g, node.attrs['index'], node.attrs['axis'], node.operands[0].shape),
    ],
    'scatter': lambda graph, node, g, needs: [graph.take(g, node.attrs['index'], node.attrs['axis'])],
    'concat': _vjp_concat,
    'tanh': lambda graph, node, g, needs: [graph.mul(g, graph.sub(1.0, graph.mul(node, node)))],
    'sigmoid': lambda graph, node, g, needs: [graph.mul(g, graph.mul(node, graph.sub(1.0, node)))],
    'softplus': lambda graph, node, g, needs: [graph.mul(g, graph.sigmoid(node.operands[0]))],
    'sin': lambda graph, node, g, needs: [graph.mul(g, graph.cos(node.operands[0]))],
    'cos': lambda graph, node, g, needs: [graph.neg(graph.mul(g, graph.sin(node.operands[0])))],
    'sqrt': lambda graph, node, g, needs: [graph.mul(g, graph.mul(0.5, graph.reciprocal(node)))],
    'reciprocal': lambda graph, node, g, needs: [graph.neg(graph.mul(g, graph.mul(node, node)))],
    'total_sum': lambda graph, node, g, needs: [graph.broadcast_to(g, node.operands[0].shape)],
    'solve': _vjp_solve,
}


class BoundField(Protocol):
    """
    a scalar field attached to one graph: maps a (B, n) node to a (B,) node
    """

    parameters: list[Node]

    def __call__(self, x: Node) -> Node: ...


class ScalarField(Protocol):
    """
    anything which can be attached to a graph as a scalar field, learned or analytic
    """

    @property
    def input_dim(self) -> int: ...

    def bind(self, graph: Graph) -> BoundField: ...


@dataclass(frozen=True, eq=False)
class MlpParams:
    """
    weights (fan_in, fan_out) and biases (fan_out,) per layer, layers compute h @ W + b
    """

    spec: MlpSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        sizes = self.spec.layer_sizes
        shapes = list(zip(sizes[:-1], sizes[1:]))
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise ContractError(f'Expected {len(shapes)} layers for {sizes}')
        for weight, bias, (fan_in, fan_out) in zip(self.weights, self.biases, shapes):
            if weight.shape != (fan_in, fan_out) or bias.shape != (fan_out,):
                raise ContractError(
                    f'Layer shapes {weight.shape}/{bias.shape} do not match ({fan_in}, {fan_out}) from {sizes}',
                )
        if not all(np.all(np.isfinite(array)) for array in self.arrays()):
            raise NumericError('Network parameters contain non-finite values')

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    @classmethod
    def initialise(cls, spec: MlpSpec, seed: int | np.random.SeedSequence) -> 'MlpParams':
        """
        per-layer uniform weights in +/- sqrt(6 / (fan_in + fan_out)), zero biases
        """
        rng = make_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(spec, tuple(weights), tuple(biases))

    @classmethod
    def zeros(cls, spec: MlpSpec) -> 'MlpParams':
        pairs = list(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]))
        return cls(spec, tuple(np.zeros(shape) for shape in pairs), tuple(np.zeros(size) for _, size in pairs))

    @classmethod
    def from_arrays(cls, spec: MlpSpec, arrays: Sequence[np.ndarray]) -> 'MlpParams':
        """
        inverse of arrays(): [W0, b0, W1, b1, ...]
        """
        arrays = [np.array(array, dtype=np.float64) for array in arrays]
        return cls(spec, tuple(arrays[0::2]), tuple(arrays[1::2]))

    @classmethod
    def quadratic(cls, coefficients: Sequence[float], curvature: float = 1e-3) -> 'MlpParams':
        """
        a softplus network equal to sum_i c_i x_i^2 up to a relative error of order (curvature * x)^2

        uses softplus(a z) + softplus(-a z) - 2 ln 2 = a^2 z^2 / 4 + O(a^4 z^4)
        """
        coefficients = np.asarray(coefficients, dtype=np.float64)
        n = len(coefficients)
        first = np.zeros((n, 2 * n))
        for i in range(n):
            first[i, 2 * i] = curvature
            first[i, 2 * i + 1] = -curvature
        scale = 4.0 / curvature**2
        second = np.repeat(coefficients * scale, 2).reshape(2 * n, 1)
        offset = np.array([-2.0 * np.log(2.0) * scale * coefficients.sum()])
        spec = MlpSpec(layer_sizes=[n, 2 * n, 1], activation=Activation.SOFTPLUS)
        return cls(spec, (first, second), (np.zeros(2 * n), offset))

    def arrays(self) -> list[np.ndarray]:
        out = []
        for weight, bias in zip(self.weights, self.biases):
            out.extend([weight, bias])
        return out

    def bind(self, graph: Graph) -> 'BoundMlp':
        return BoundMlp(self, graph)


class BoundMlp:
    """
    an MlpParams whose arrays are variables of one graph
    """

    def __init__(self, params: MlpParams, graph: Graph):
        self.params = params
        self.graph = graph
        self.weights = [graph.variable(weight, name=f'W{i}') for i, weight in enumerate(params.weights)]
        self.biases = [graph.variable(bias, name=f'b{i}') for i, bias in enumerate(params.biases)]
        self.activation = graph.tanh if params.spec.activation == Activation.TANH else graph.softplus

    @property
    def parameters(self) -> list[Node]:
        out = []
        for weight, bias in zip(self.weights, self.biases):
            out.extend([weight, bias])
        return out

    def __call__(self, x: Node) -> Node:
        if x.ndim != 2 or x.shape[1] != self.params.input_dim:
            raise ContractError(f'Network expects inputs of shape (B, {self.params.input_dim}), got {x.shape}')
        hidden = x
        last = len(self.weights) - 1
        for i, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            hidden = self.graph.add(self.graph.matmul(hidden, weight), bias)
            if i < last:
                hidden = self.activation(hidden)
        return self.graph.reshape(hidden, (hidden.shape[0],))


def as_batch(x, input_dim: int) -> tuple[np.ndarray, bool]:
    """
    accept one state (n,) or a batch (B, n); returns the batch and whether the input was a single state
    """
    array = np.asarray(x, dtype=np.float64)
    single = array.ndim == 1
    batch = np.atleast_2d(array)
    if batch.ndim != 2 or batch.shape[1] != input_dim:
        raise ContractError(f'Expected input dimension {input_dim}, got shape {array.shape}')
    return batch, single


def field_gradient(graph: Graph, field: BoundField, x: Node) -> Node:
    """
    per-row gradient of a bound field, (B, n); rows are independent so the sum separates
    """
    return graph.gradient(graph.total_sum(field(x)), x)


def hessian_rows(graph: Graph, grad: Node, x: Node, rows: Sequence[int]) -> list[Node]:
    """
    row i of the per-sample Hessian is the gradient of grad[:, i]
    """
    return [graph.gradient(graph.total_sum(graph.take(grad, row, axis=1)), x) for row in rows]


def split_hessian_blocks(graph: Graph, grad: Node, x: Node, split: int) -> tuple[Node, Node]:
    """
    the Hessian rows belonging to inputs split: and their column blocks

    Returns:
        (B, n2, n2) block over the second inputs, (B, n2, n1) mixed block of second rows and first columns
    """
    n = x.shape[1]
    first, second = list(range(split)), list(range(split, n))
    rows = hessian_rows(graph, grad, x, second)
    batch = x.shape[0]
    second_block = graph.concat(
        [graph.reshape(graph.take(row, second, axis=1), (batch, 1, len(second))) for row in rows],
        axis=1,
    )
    mixed_block = graph.concat(
        [graph.reshape(graph.take(row, first, axis=1), (batch, 1, len(first))) for row in rows],
        axis=1,
    )
    return second_block, mixed_block


def mlp_forward(params: ScalarField, x) -> float | np.ndarray:
    """
    scalar output of a field at one state, or the (B,) outputs for a batch
    """
    batch, single = as_batch(x, params.input_dim)
    graph = Graph()
    out = params.bind(graph)(graph.variable(batch)).value
    return float(out[0]) if single else out


def input_gradient(params: ScalarField, x) -> np.ndarray:
    """
    gradient of the scalar output with respect to the input, per row for a batch
    """
    batch, single = as_batch(x, params.input_dim)
    graph = Graph()
    x_node = graph.variable(batch)
    grad = field_gradient(graph, params.bind(graph), x_node).value
    return grad[0] if single else grad


def input_hessian_block(params: ScalarField, x, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
    """
    selected block of the input Hessian

    Args:
        params (ScalarField): network or analytic field
        x (array): one state (n,) or a batch (B, n)
        rows (list[int]): Hessian rows to compute
        cols (list[int]): columns kept from each row

    Returns:
        (len(rows), len(cols)) for one state, (B, len(rows), len(cols)) for a batch
    """
    batch, single = as_batch(x, params.input_dim)
    n = batch.shape[1]
    for index in [*rows, *cols]:
        if not 0 <= index < n:
            raise ContractError(f'Hessian index {index} out of range for input dimension {n}')
    graph = Graph()
    x_node = graph.variable(batch)
    grad = field_gradient(graph, params.bind(graph), x_node)
    block = np.stack([row.value[:, list(cols)] for row in hessian_rows(graph, grad, x_node, rows)], axis=1)
    return block[0] if single else block


def parameter_gradient(loss: Node, bound: BoundMlp) -> MlpParams:
    """
    exact gradient of a scalar loss node with respect to every parameter of a bound network
    the loss may contain input gradients and Hessian blocks of the same network
    """
    grads = loss.graph.gradient(loss, bound.parameters)
    return MlpParams.from_arrays(bound.params.spec, [grad.value for grad in grads])
