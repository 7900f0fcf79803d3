"""
The learned dynamics models

HNN: a scalar H(q, p) whose symplectic gradient is fitted to observed time derivatives
LNN: a scalar L(q, qdot) whose Euler-Lagrange accelerations are fitted to observed accelerations
SRNN: a separable H = K(p) + V(q) unrolled through leapfrog steps and fitted to whole sequences

Each model holds scalar fields: trained networks (MlpParams) or, for the exact-model oracle, the
analytic energies of a system (AnalyticField). Both attach to a graph the same way.
"""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from physbench.diff_engine import (
    Graph,
    MlpParams,
    Node,
    ScalarField,
    as_batch,
    field_gradient,
    input_gradient,
    split_hessian_blocks,
)
from physbench.integrators import (
    Trajectory,
    integrate_with_contact,
    leapfrog_integrate,
    leapfrog_step,
    rk45_integrate,
)
from physbench.models import (
    ContractError,
    DegenerateModelError,
    ExperimentConfig,
    IntegratorConfig,
    ModelKind,
    SystemSpec,
    SystemTag,
    UnsupportedSystemError,
)
from physbench.static_values import LNN_REGULARISATION, MAX_CONDITION
from physbench.systems import (
    SEPARABLE,
    apply_contact,
    coordinate_dim,
    hamiltonian_expr,
    kinetic_expr,
    lagrangian_expr,
    phase_dim,
    potential_expr,
)
from physbench.utils import child_seeds

MODEL_INIT_STREAM = 2

ANALYTIC_KINDS = ('hamiltonian', 'lagrangian', 'kinetic', 'potential')


class AnalyticField:
    """
    a system's true H, L, K or V exposed as a scalar field
    """

    def __init__(self, system: SystemSpec, kind: str):
        if kind not in ANALYTIC_KINDS:
            raise ContractError(f'Unknown analytic field {kind}')
        if kind == 'lagrangian' and system.tag == SystemTag.THREE_BODY:
            raise UnsupportedSystemError('three-body has no analytic Lagrangian')
        if kind in ('kinetic', 'potential') and system.tag not in SEPARABLE:
            raise UnsupportedSystemError(f'{system.tag.value} is not separable into K(p) + V(q)')
        self.system = system
        self.kind = kind

    @property
    def input_dim(self) -> int:
        if self.kind in ('kinetic', 'potential'):
            return coordinate_dim(self.system)
        return phase_dim(self.system)

    def bind(self, graph: Graph) -> '_BoundAnalytic':
        return _BoundAnalytic(self, graph)


class _BoundAnalytic:
    parameters: list[Node] = []

    def __init__(self, analytic: AnalyticField, graph: Graph):
        self.analytic = analytic
        self.graph = graph
        self.expression = {
            'hamiltonian': hamiltonian_expr,
            'lagrangian': lagrangian_expr,
            'kinetic': kinetic_expr,
            'potential': potential_expr,
        }[analytic.kind]

    def __call__(self, x: Node) -> Node:
        if x.ndim != 2 or x.shape[1] != self.analytic.input_dim:
            raise ContractError(f'Analytic field expects (B, {self.analytic.input_dim}), got {x.shape}')
        return self.expression(self.analytic.system, self.graph, x)


def _check_even(field: ScalarField, name: str):
    if field.input_dim % 2:
        raise ContractError(f'{name} input dimension must be even, got {field.input_dim}')


@dataclass(frozen=True, eq=False)
class HnnModel:
    net: ScalarField
    kind = ModelKind.HNN

    def __post_init__(self):
        _check_even(self.net, 'HNN')

    def networks(self) -> dict[str, ScalarField]:
        return {'hamiltonian': self.net}

    def with_networks(self, networks: dict[str, ScalarField]) -> 'HnnModel':
        return HnnModel(networks['hamiltonian'])


@dataclass(frozen=True, eq=False)
class LnnModel:
    net: ScalarField
    kind = ModelKind.LNN

    def __post_init__(self):
        _check_even(self.net, 'LNN')

    def networks(self) -> dict[str, ScalarField]:
        return {'lagrangian': self.net}

    def with_networks(self, networks: dict[str, ScalarField]) -> 'LnnModel':
        return LnnModel(networks['lagrangian'])


@dataclass(frozen=True, eq=False)
class SrnnModel:
    k_net: ScalarField
    v_net: ScalarField
    kind = ModelKind.SRNN

    def __post_init__(self):
        if self.k_net.input_dim != self.v_net.input_dim:
            raise ContractError(
                f'K and V networks need equal input dimensions, got {self.k_net.input_dim} and {self.v_net.input_dim}',
            )

    def networks(self) -> dict[str, ScalarField]:
        return {'kinetic': self.k_net, 'potential': self.v_net}

    def with_networks(self, networks: dict[str, ScalarField]) -> 'SrnnModel':
        return SrnnModel(networks['kinetic'], networks['potential'])


LearnedModel = HnnModel | LnnModel | SrnnModel


def _halves(graph: Graph, x: Node) -> tuple[Node, Node]:
    n = x.shape[1] // 2
    return graph.take(x, list(range(n)), axis=1), graph.take(x, list(range(n, 2 * n)), axis=1)


def _mean_squared_norm(graph: Graph, prediction: Node, labels: np.ndarray) -> Node:
    if len(labels) == 0:
        raise ContractError('Loss needs a non-empty batch')
    if prediction.shape != labels.shape:
        raise ContractError(f'Prediction shape {prediction.shape} does not match labels {labels.shape}')
    residual = prediction - labels
    return graph.total_sum(residual * residual) * (1.0 / len(labels))


# HNN


def symplectic_gradient(graph: Graph, bound, x: Node) -> Node:
    """
    (dH/dp, -dH/dq) per row of x
    """
    grad = field_gradient(graph, bound, x)
    grad_q, grad_p = _halves(graph, grad)
    return graph.concat([grad_p, graph.neg(grad_q)], axis=1)


def hnn_time_derivative(model: HnnModel, states) -> np.ndarray:
    """
    the model's (qdot, pdot) at one state or each row of a batch
    """
    batch, single = as_batch(states, model.net.input_dim)
    graph = Graph()
    derivative = symplectic_gradient(graph, model.net.bind(graph), graph.variable(batch)).value
    return derivative[0] if single else derivative


def hnn_loss_node(graph: Graph, bound, states: np.ndarray, labels: np.ndarray) -> Node:
    """
    mean over the batch of |dH/dp - qdot|^2 + |dH/dq + pdot|^2
    """
    prediction = symplectic_gradient(graph, bound, graph.variable(np.asarray(states, dtype=np.float64)))
    return _mean_squared_norm(graph, prediction, np.asarray(labels, dtype=np.float64))


def hnn_loss(model: HnnModel, states, labels) -> float:
    if len(states) == 0:
        raise ContractError('Loss needs a non-empty batch')
    graph = Graph()
    return float(hnn_loss_node(graph, model.net.bind(graph), states, labels).value)


# LNN


def _lnn_terms(graph: Graph, bound, x: Node) -> tuple[Node, Node, Node, Node]:
    """
    regularised velocity Hessian, mixed Hessian, dL/dq and the solved accelerations
    """
    n = x.shape[1] // 2
    grad = field_gradient(graph, bound, x)
    velocity_block, mixed = split_hessian_blocks(graph, grad, x, n)
    regularised = velocity_block + LNN_REGULARISATION * np.eye(n)
    condition = np.linalg.cond(regularised.value)
    if np.any(condition > MAX_CONDITION):
        raise DegenerateModelError(
            f'Velocity Hessian condition number {np.max(condition):.3g} exceeds {MAX_CONDITION} after regularisation',
        )
    grad_q, _ = _halves(graph, grad)
    _, velocities = _halves(graph, x)
    batch = x.shape[0]
    coupling = graph.reshape(graph.matmul(mixed, graph.reshape(velocities, (batch, n, 1))), (batch, n))
    accelerations = graph.solve(regularised, grad_q - coupling)
    return regularised, mixed, grad_q, accelerations


def lnn_acceleration_node(graph: Graph, bound, x: Node) -> Node:
    return _lnn_terms(graph, bound, x)[3]


def euler_lagrange_terms(model: LnnModel, states) -> dict[str, np.ndarray]:
    """
    the pieces of the acceleration solve, for residual checks:
    velocity_hessian @ qddot + mixed_hessian @ qdot == grad_q
    """
    batch, single = as_batch(states, model.net.input_dim)
    graph = Graph()
    terms = _lnn_terms(graph, model.net.bind(graph), graph.variable(batch))
    out = dict(zip(['velocity_hessian', 'mixed_hessian', 'grad_q', 'acceleration'], (term.value for term in terms)))
    return {key: value[0] for key, value in out.items()} if single else out


def lnn_acceleration(model: LnnModel, states) -> np.ndarray:
    """
    qddot from the Euler-Lagrange equations of the learned L, with a small ridge on the velocity Hessian
    """
    batch, single = as_batch(states, model.net.input_dim)
    graph = Graph()
    accelerations = lnn_acceleration_node(graph, model.net.bind(graph), graph.variable(batch)).value
    return accelerations[0] if single else accelerations


def lnn_loss_node(graph: Graph, bound, states: np.ndarray, labels: np.ndarray) -> Node:
    """
    mean over the batch of |qddot_L - qddot_true|^2
    """
    prediction = lnn_acceleration_node(graph, bound, graph.variable(np.asarray(states, dtype=np.float64)))
    return _mean_squared_norm(graph, prediction, np.asarray(labels, dtype=np.float64))


def lnn_loss(model: LnnModel, states, labels) -> float:
    if len(states) == 0:
        raise ContractError('Loss needs a non-empty batch')
    graph = Graph()
    return float(lnn_loss_node(graph, model.net.bind(graph), states, labels).value)


# SRNN


def srnn_rollout(
    model: SrnnModel,
    z0,
    dt: float,
    n_steps: int,
    restitution: float | None = None,
    t0: float = 0.0,
) -> Trajectory:
    """
    leapfrog with V'(q) and K'(p) taken from the two networks
    with a restitution, ground contact is applied after any step ending at q <= 0 with p < 0
    """

    def grad_v(q):
        return input_gradient(model.v_net, q)

    def grad_k(p):
        return input_gradient(model.k_net, p)

    if restitution is None:
        return leapfrog_integrate(grad_v, grad_k, z0, dt, n_steps, t0)

    if dt == 0 or not np.isfinite(dt):
        raise ContractError(f'Leapfrog dt must be finite and non-zero, got {dt}')
    state = np.array(z0, dtype=np.float64)
    n = len(state) // 2
    states = [state]
    for _ in range(n_steps):
        q, p = leapfrog_step(state[:n], state[n:], grad_v, grad_k, dt)
        state = np.concatenate([q, p])
        if state[0] <= 0 and state[n] < 0:
            state = apply_contact(state, restitution)
        states.append(state)
    return Trajectory(t0 + dt * np.arange(n_steps + 1), np.array(states))


def srnn_window_loss_node(
    graph: Graph,
    k_bound,
    v_bound,
    windows: np.ndarray,
    dt: float,
    restitution: float | None = None,
) -> Node:
    """
    sum over steps of |z_i - zhat_i|^2 for leapfrog rollouts from each window's first state, mean over windows

    Args:
        graph (Graph):
        k_bound (BoundField): kinetic network attached to graph
        v_bound (BoundField): potential network attached to graph
        windows (array): (B, L, n) observed sub-sequences, L >= 2
        dt (float): grid step
        restitution (float | None): bouncing ball contact inside the rollout
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[1] < 2 or len(windows) == 0:
        raise ContractError(f'SRNN loss needs (B, L >= 2, n) windows, got {windows.shape}')
    n = windows.shape[2] // 2
    q = graph.constant(windows[:, 0, :n])
    p = graph.constant(windows[:, 0, n:])

    def grad_v(node):
        return field_gradient(graph, v_bound, node)

    def grad_k(node):
        return field_gradient(graph, k_bound, node)

    total = None
    for step in range(1, windows.shape[1]):
        q, p = leapfrog_step(q, p, grad_v, grad_k, dt)
        if restitution is not None:
            contact = ((q.value[:, 0] <= 0) & (p.value[:, 0] < 0)).astype(np.float64)[:, None]
            if contact.any():
                q = q * (1.0 - contact)
                p = p * (1.0 - contact * (1.0 + restitution))
        residual = graph.concat([q, p], axis=1) - windows[:, step, :]
        term = graph.total_sum(residual * residual)
        total = term if total is None else total + term
    return total * (1.0 / len(windows))


def srnn_loss(model: SrnnModel, observed: Trajectory | Sequence[Trajectory], restitution: float | None = None) -> float:
    """
    sequence loss of whole observed trajectories, which must share a uniform grid
    """
    trajectories = [observed] if isinstance(observed, Trajectory) else list(observed)
    if not trajectories:
        raise ContractError('SRNN loss needs at least one trajectory')
    dt = trajectories[0].uniform_step()
    for trajectory in trajectories[1:]:
        if abs(trajectory.uniform_step() - dt) > 1e-12 or len(trajectory) != len(trajectories[0]):
            raise ContractError('SRNN loss trajectories must share one grid')
    graph = Graph()
    windows = np.stack([trajectory.states for trajectory in trajectories])
    loss = srnn_window_loss_node(graph, model.k_net.bind(graph), model.v_net.bind(graph), windows, dt, restitution)
    return float(loss.value)


# rollouts


def rollout_ode_model(
    model: HnnModel | LnnModel,
    s0,
    sample_times,
    cfg: IntegratorConfig | None = None,
    restitution: float | None = None,
) -> Trajectory:
    """
    integrate the learned vector field: RK45 on a smooth system, Euler with ground contact when a restitution is given

    Args:
        model (HnnModel | LnnModel):
        s0 (array): initial state in the model's convention
        sample_times (array): output times, uniform when a restitution is given
        cfg (IntegratorConfig): RK45 tolerances
        restitution (float | None): bouncing ball restitution
    """
    if isinstance(model, HnnModel):

        def derivative(_t, y):
            return hnn_time_derivative(model, y)

    elif isinstance(model, LnnModel):
        n = model.net.input_dim // 2

        def derivative(_t, y):
            return np.concatenate([y[n:], lnn_acceleration(model, y)])

    else:
        raise ContractError('rollout_ode_model integrates HNN and LNN models, use srnn_rollout for SRNN')

    times = np.asarray(sample_times, dtype=np.float64)
    if restitution is None:
        return rk45_integrate(derivative, s0, times, cfg)
    dt = Trajectory(times, np.zeros((len(times), 1))).uniform_step()
    return integrate_with_contact(derivative, s0, dt, len(times) - 1, rho=restitution, t0=float(times[0]))


def build_model(cfg: ExperimentConfig, seed: int | None = None) -> LearnedModel:
    """
    freshly initialised networks sized for the experiment
    """
    seed = cfg.seed if seed is None else seed
    n = coordinate_dim(cfg.system)
    k_seed, v_seed = child_seeds(seed, 2, MODEL_INIT_STREAM)
    if cfg.model == ModelKind.HNN:
        return HnnModel(MlpParams.initialise(cfg.mlp_spec(2 * n), k_seed))
    if cfg.model == ModelKind.LNN:
        return LnnModel(MlpParams.initialise(cfg.mlp_spec(2 * n), k_seed))
    return SrnnModel(MlpParams.initialise(cfg.mlp_spec(n), k_seed), MlpParams.initialise(cfg.mlp_spec(n), v_seed))


def oracle_model(cfg: ExperimentConfig) -> LearnedModel:
    """
    the exact model: analytic H, L or K + V in place of trained networks
    """
    if cfg.model == ModelKind.HNN:
        return HnnModel(AnalyticField(cfg.system, 'hamiltonian'))
    if cfg.model == ModelKind.LNN:
        return LnnModel(AnalyticField(cfg.system, 'lagrangian'))
    return SrnnModel(AnalyticField(cfg.system, 'kinetic'), AnalyticField(cfg.system, 'potential'))
