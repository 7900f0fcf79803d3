"""
Analytic definitions of the six mechanical systems

Energies are written as graph expressions over a batch of states x with shape (B, n), so the
equations of motion come from differentiating them rather than from hand-derived closed forms.
Phase states are flat vectors: coordinates first, then momenta (Hamiltonian convention) or
velocities (Lagrangian convention).
"""

from collections.abc import Callable

import numpy as np

from physbench.diff_engine import Graph, Node, as_batch, field_gradient, split_hessian_blocks
from physbench.models import (
    Convention,
    DegenerateConfigurationError,
    SingularConfigurationError,
    SystemSpec,
    SystemTag,
    UnsupportedSystemError,
)
from physbench.static_values import MAX_CONDITION

SEPARABLE = {SystemTag.MASS_SPRING, SystemTag.PENDULUM, SystemTag.BOUNCING_BALL, SystemTag.THREE_BODY}

COORDINATE_NAMES = {
    SystemTag.MASS_SPRING: ['q'],
    SystemTag.PENDULUM: ['theta'],
    SystemTag.SPRING_PENDULUM: ['r', 'theta'],
    SystemTag.DOUBLE_PENDULUM: ['theta1', 'theta2'],
    SystemTag.BOUNCING_BALL: ['q'],
}


def coordinate_names(system: SystemSpec) -> list[str]:
    if system.tag == SystemTag.THREE_BODY:
        axes = 'xyz'[: system.dimensions]
        return [f'{axis}{body}' for body in (1, 2, 3) for axis in axes]
    return COORDINATE_NAMES[system.tag]


def coordinate_dim(system: SystemSpec) -> int:
    return len(coordinate_names(system))


def phase_dim(system: SystemSpec) -> int:
    return 2 * coordinate_dim(system)


def state_names(system: SystemSpec, convention: Convention) -> list[str]:
    """
    column names of a phase state, e.g. ['q', 'p_q'] or ['q', 'q_dot']
    """
    coords = coordinate_names(system)
    if convention == Convention.HAMILTONIAN:
        return coords + [f'p_{name}' for name in coords]
    return coords + [f'{name}_dot' for name in coords]


def label_names(system: SystemSpec, convention: Convention) -> list[str]:
    """
    time derivatives of the state for Hamiltonian data, accelerations for Lagrangian data
    """
    if convention == Convention.HAMILTONIAN:
        return [f'd_{name}' for name in state_names(system, convention)]
    return [f'{name}_ddot' for name in coordinate_names(system)]


def check_state(system: SystemSpec, states: np.ndarray) -> tuple[np.ndarray, bool]:
    """
    validate a state or batch against the system layout and its singular configurations
    """
    batch, single = as_batch(states, phase_dim(system))
    if system.tag == SystemTag.SPRING_PENDULUM and np.any(batch[:, 0] <= 0):
        raise SingularConfigurationError('Spring pendulum radius must be strictly positive')
    if system.tag == SystemTag.THREE_BODY:
        positions = batch[:, : coordinate_dim(system)].reshape(len(batch), 3, system.dimensions)
        for i, j in [(0, 1), (0, 2), (1, 2)]:
            if np.any(np.linalg.norm(positions[:, i] - positions[:, j], axis=1) == 0):
                raise SingularConfigurationError(f'Bodies {i + 1} and {j + 1} coincide')
    return batch, single


def _column(graph: Graph, x: Node, index: int) -> Node:
    return graph.take(x, index, axis=1)


def _three_body_potential(system: SystemSpec, graph: Graph, q: Node) -> Node:
    masses = [system.m1, system.m2, system.m3]
    d = system.dimensions
    potential = None
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        squared = None
        for axis in range(d):
            delta = _column(graph, q, i * d + axis) - _column(graph, q, j * d + axis)
            squared = delta * delta if squared is None else squared + delta * delta
        term = (-system.G * masses[i] * masses[j]) * graph.reciprocal(graph.sqrt(squared))
        potential = term if potential is None else potential + term
    return potential


def _three_body_kinetic(system: SystemSpec, graph: Graph, p: Node) -> Node:
    masses = [system.m1, system.m2, system.m3]
    d = system.dimensions
    kinetic = None
    for body, mass in enumerate(masses):
        factor = 0.5 / mass
        for axis in range(d):
            component = _column(graph, p, body * d + axis)
            term = factor * (component * component)
            kinetic = term if kinetic is None else kinetic + term
    return kinetic


def potential_expr(system: SystemSpec, graph: Graph, q: Node) -> Node:
    """
    V(q) for the separable systems, q of shape (B, n_coordinates)
    """
    if system.tag == SystemTag.MASS_SPRING:
        x = _column(graph, q, 0)
        return (0.5 * system.k) * (x * x)
    if system.tag == SystemTag.PENDULUM:
        return (system.m * system.g * system.l) * (1.0 - graph.cos(_column(graph, q, 0)))
    if system.tag == SystemTag.BOUNCING_BALL:
        return (system.m * system.g) * _column(graph, q, 0)
    if system.tag == SystemTag.THREE_BODY:
        return _three_body_potential(system, graph, q)
    raise UnsupportedSystemError(f'{system.tag.value} is not separable into K(p) + V(q)')


def kinetic_expr(system: SystemSpec, graph: Graph, p: Node) -> Node:
    """
    K(p) for the separable systems, p of shape (B, n_coordinates)
    """
    if system.tag in (SystemTag.MASS_SPRING, SystemTag.BOUNCING_BALL):
        x = _column(graph, p, 0)
        return (0.5 / system.m) * (x * x)
    if system.tag == SystemTag.PENDULUM:
        x = _column(graph, p, 0)
        return (0.5 / (system.m * system.l**2)) * (x * x)
    if system.tag == SystemTag.THREE_BODY:
        return _three_body_kinetic(system, graph, p)
    raise UnsupportedSystemError(f'{system.tag.value} is not separable into K(p) + V(q)')


def hamiltonian_expr(system: SystemSpec, graph: Graph, x: Node) -> Node:
    """
    H per row of a (B, n) node of Hamiltonian-convention states
    """
    n = coordinate_dim(system)
    if system.tag in SEPARABLE:
        q = graph.take(x, list(range(n)), axis=1)
        p = graph.take(x, list(range(n, 2 * n)), axis=1)
        return kinetic_expr(system, graph, p) + potential_expr(system, graph, q)

    if system.tag == SystemTag.SPRING_PENDULUM:
        r, theta, p_r, p_theta = (_column(graph, x, i) for i in range(4))
        m, k, g = system.m, system.k, system.g
        stretch = r - system.l0
        return (
            (0.5 / m) * (p_r * p_r)
            + (0.5 / m) * (p_theta * p_theta) * graph.reciprocal(r * r)
            + (m * g) * (r * graph.cos(theta))
            + (0.5 * k) * (stretch * stretch)
        )

    # double pendulum
    q1, q2, p1, p2 = (_column(graph, x, i) for i in range(4))
    m1, m2, l1, l2, g = system.m1, system.m2, system.l1, system.l2, system.g
    delta = q1 - q2
    cos_delta = graph.cos(delta)
    sin_delta = graph.sin(delta)
    numerator = (m2 * l2**2) * (p1 * p1) + ((m1 + m2) * l1**2) * (p2 * p2) - (2 * m2 * l1 * l2) * (p1 * p2 * cos_delta)
    denominator = (2 * m2 * l1**2 * l2**2) * (m1 + m2 * (sin_delta * sin_delta))
    potential = (-(m1 + m2) * g * l1) * graph.cos(q1) - (m2 * g * l2) * graph.cos(q2)
    return numerator * graph.reciprocal(denominator) + potential


def lagrangian_expr(system: SystemSpec, graph: Graph, x: Node) -> Node:
    """
    L = T - V per row of a (B, n) node of Lagrangian-convention states
    """
    if system.tag == SystemTag.THREE_BODY:
        raise UnsupportedSystemError('three-body accelerations come from three_body_accelerations, not a Lagrangian')
    n = coordinate_dim(system)

    if system.tag in SEPARABLE:
        q = graph.take(x, list(range(n)), axis=1)
        velocity = _column(graph, x, n)
        mass = system.m * system.l**2 if system.tag == SystemTag.PENDULUM else system.m
        return (0.5 * mass) * (velocity * velocity) - potential_expr(system, graph, q)

    if system.tag == SystemTag.SPRING_PENDULUM:
        r, theta, r_dot, theta_dot = (_column(graph, x, i) for i in range(4))
        m, k, g = system.m, system.k, system.g
        stretch = r - system.l0
        return (
            (0.5 * m) * (r_dot * r_dot)
            + (0.5 * m) * (r * r) * (theta_dot * theta_dot)
            - (0.5 * k) * (stretch * stretch)
            - (m * g) * (r * graph.cos(theta))
        )

    # double pendulum
    t1, t2, w1, w2 = (_column(graph, x, i) for i in range(4))
    m1, m2, l1, l2, g = system.m1, system.m2, system.l1, system.l2, system.g
    kinetic = (
        (0.5 * (m1 + m2) * l1**2) * (w1 * w1)
        + (0.5 * m2 * l2**2) * (w2 * w2)
        + (m2 * l1 * l2) * (w1 * w2 * graph.cos(t1 - t2))
    )
    potential = (-(m1 + m2) * g * l1) * graph.cos(t1) - (m2 * g * l2) * graph.cos(t2)
    return kinetic - potential


def _evaluate(system: SystemSpec, states, expression: Callable[[SystemSpec, Graph, Node], Node]):
    batch, single = check_state(system, states)
    graph = Graph()
    value = expression(system, graph, graph.variable(batch)).value
    return float(value[0]) if single else value


def hamiltonian(system: SystemSpec, states) -> float | np.ndarray:
    """
    total energy of a Hamiltonian-convention state, or of each row of a batch
    """
    return _evaluate(system, states, hamiltonian_expr)


def lagrangian(system: SystemSpec, states) -> float | np.ndarray:
    """
    L = T - V of a Lagrangian-convention state; not defined for three-body
    """
    if system.tag == SystemTag.THREE_BODY:
        raise UnsupportedSystemError('No Lagrangian is defined for three-body')
    return _evaluate(system, states, lagrangian_expr)


def kinetic_energy(system: SystemSpec, states) -> float | np.ndarray:
    n = coordinate_dim(system)

    def expression(sys: SystemSpec, graph: Graph, x: Node) -> Node:
        return kinetic_expr(sys, graph, graph.take(x, list(range(n, 2 * n)), axis=1))

    return _evaluate(system, states, expression)


def potential_energy(system: SystemSpec, states) -> float | np.ndarray:
    n = coordinate_dim(system)

    def expression(sys: SystemSpec, graph: Graph, x: Node) -> Node:
        return potential_expr(sys, graph, graph.take(x, list(range(n)), axis=1))

    return _evaluate(system, states, expression)


def hamiltonian_eom(system: SystemSpec, states) -> np.ndarray:
    """
    the symplectic gradient (dH/dp, -dH/dq), by differentiating the analytic Hamiltonian
    """
    batch, single = check_state(system, states)
    n = coordinate_dim(system)
    graph = Graph()
    x = graph.variable(batch)
    grad = field_gradient(graph, lambda node: hamiltonian_expr(system, graph, node), x).value
    derivative = np.concatenate([grad[:, n:], -grad[:, :n]], axis=1)
    return derivative[0] if single else derivative


def three_body_accelerations(positions, system: SystemSpec) -> np.ndarray:
    """
    Newtonian accelerations of three bodies

    Args:
        positions (array): (3, d) body positions
        system (SystemSpec): supplies G and the three masses

    Returns:
        (3, d) accelerations, a_i = sum_j G m_j (r_j - r_i) / |r_j - r_i|^3
    """
    positions = np.asarray(positions, dtype=np.float64)
    masses = [system.m1, system.m2, system.m3]
    accelerations = np.zeros_like(positions)
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            delta = positions[j] - positions[i]
            distance = np.linalg.norm(delta)
            if distance == 0:
                raise SingularConfigurationError(f'Bodies {i + 1} and {j + 1} coincide')
            accelerations[i] += system.G * masses[j] * delta / distance**3
    return accelerations


def lagrangian_accel(system: SystemSpec, states) -> np.ndarray:
    """
    ground truth accelerations from the Euler-Lagrange equations of the analytic Lagrangian

    solves (d2L/dqdot2) qddot = dL/dq - (d2L/dqdot dq) qdot; three-body uses Newtonian gravity directly
    """
    batch, single = check_state(system, states)
    n = coordinate_dim(system)

    if system.tag == SystemTag.THREE_BODY:
        accelerations = np.stack(
            [
                three_body_accelerations(row[:n].reshape(3, system.dimensions), system).reshape(n)
                for row in batch
            ],
        )
        return accelerations[0] if single else accelerations

    graph = Graph()
    x = graph.variable(batch)
    grad = field_gradient(graph, lambda node: lagrangian_expr(system, graph, node), x)
    mass_matrix, mixed = split_hessian_blocks(graph, grad, x, n)
    condition = np.linalg.cond(mass_matrix.value)
    if np.any(condition > MAX_CONDITION):
        raise DegenerateConfigurationError(
            f'Mass matrix condition number {condition.max():.3g} exceeds {MAX_CONDITION}',
        )
    velocities = batch[:, n:]
    rhs = grad.value[:, :n] - np.einsum('bij,bj->bi', mixed.value, velocities)
    accelerations = np.linalg.solve(mass_matrix.value, rhs[..., None])[..., 0]
    return accelerations[0] if single else accelerations


def lagrangian_vector_field(system: SystemSpec, states) -> np.ndarray:
    """
    (qdot, qddot) for Lagrangian-convention states
    """
    batch, single = check_state(system, states)
    n = coordinate_dim(system)
    field = np.concatenate([batch[:, n:], np.atleast_2d(lagrangian_accel(system, batch))], axis=1)
    return field[0] if single else field


def momenta_from_velocities(system: SystemSpec, states) -> np.ndarray:
    """
    convert (q, qdot) to (q, p) with p = dL/dqdot
    """
    n = coordinate_dim(system)
    if system.tag == SystemTag.THREE_BODY:
        batch, single = check_state(system, states)
        masses = np.repeat([system.m1, system.m2, system.m3], system.dimensions)
        out = np.concatenate([batch[:, :n], batch[:, n:] * masses], axis=1)
        return out[0] if single else out
    batch, single = check_state(system, states)
    graph = Graph()
    x = graph.variable(batch)
    grad = field_gradient(graph, lambda node: lagrangian_expr(system, graph, node), x).value
    out = np.concatenate([batch[:, :n], grad[:, n:]], axis=1)
    return out[0] if single else out


def velocities_from_momenta(system: SystemSpec, states) -> np.ndarray:
    """
    convert (q, p) to (q, qdot) with qdot = dH/dp
    """
    batch, single = check_state(system, states)
    n = coordinate_dim(system)
    out = np.concatenate([batch[:, :n], np.atleast_2d(hamiltonian_eom(system, batch))[:, :n]], axis=1)
    return out[0] if single else out


def apply_contact(state, rho: float) -> np.ndarray:
    """
    bouncing ball ground contact: height clamped to 0, momentum (or velocity) flipped and scaled by rho
    callers apply it only when q <= 0 and p < 0
    """
    state = np.array(state, dtype=np.float64)
    state[0] = 0.0
    state[1] = -rho * state[1]
    return state


def cartesian_coordinates(system: SystemSpec, states) -> dict[str, np.ndarray]:
    """
    plot coordinates per bob or body; pendulum angles hang from the downward vertical, the spring pendulum angle is
    measured from the upward vertical to match its potential mgr cos(theta)
    """
    batch = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if system.tag == SystemTag.MASS_SPRING:
        return {'x': batch[:, 0]}
    if system.tag == SystemTag.BOUNCING_BALL:
        return {'y': batch[:, 0]}
    if system.tag == SystemTag.PENDULUM:
        theta = batch[:, 0]
        return {'x': system.l * np.sin(theta), 'y': -system.l * np.cos(theta)}
    if system.tag == SystemTag.SPRING_PENDULUM:
        r, theta = batch[:, 0], batch[:, 1]
        return {'x': r * np.sin(theta), 'y': r * np.cos(theta)}
    if system.tag == SystemTag.DOUBLE_PENDULUM:
        t1, t2 = batch[:, 0], batch[:, 1]
        x1, y1 = system.l1 * np.sin(t1), -system.l1 * np.cos(t1)
        return {'x1': x1, 'y1': y1, 'x2': x1 + system.l2 * np.sin(t2), 'y2': y1 - system.l2 * np.cos(t2)}
    return {name: batch[:, i] for i, name in enumerate(coordinate_names(system))}
