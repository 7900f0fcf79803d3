"""
A home for all data models used in physbench
"""

from enum import Enum
from math import inf
from typing import Any

from pydantic import BaseModel, Field, field_validator, model_validator

from physbench.static_values import get_logger

# some kind of version tracking
CURRENT_VERSION = '1.0.0'
ALL_VERSIONS = ['1.0.0']


class PhysbenchError(Exception):
    """
    root of every error raised deliberately by this package
    """


class ContractError(PhysbenchError, ValueError):
    """
    a caller broke a precondition: shapes, indices, empty batches, grids
    """


class NotScalarError(ContractError):
    """
    a gradient was requested of a node which is not a scalar
    """


class NumericError(PhysbenchError, ArithmeticError):
    """
    a non-finite value appeared in a graph node, integrator state or loss
    """


class SingularConfigurationError(NumericError):
    """
    the physical configuration has no defined energy (coincident bodies, r <= 0)
    """


class DegenerateConfigurationError(NumericError):
    """
    the analytic mass matrix can't be inverted reliably
    """


class DegenerateModelError(NumericError):
    """
    a learned velocity Hessian is singular even after regularisation
    """


class IntegrationError(NumericError):
    """
    step size underflow or step budget exhausted
    """


class UnsupportedSystemError(ContractError):
    """
    the operation has no meaning for this system
    """


class CheckpointError(PhysbenchError):
    """
    a stored document could not be parsed as the requested model
    """


class VersionMismatchError(CheckpointError):
    """
    the stored document carries a version this release can't read
    """


class UnknownPresetError(ContractError):
    """
    no built-in preset (or benchmark filter) matched the request
    """


class ManifestMismatchError(ContractError):
    """
    a dataset directory was generated for a different preset
    """


class SystemTag(Enum):
    """
    the six mechanical systems, values are the names used in preset identifiers
    """

    MASS_SPRING = 'mass-spring'
    PENDULUM = 'pendulum'
    SPRING_PENDULUM = 'spring-pendulum'
    DOUBLE_PENDULUM = 'double-pendulum'
    BOUNCING_BALL = 'bouncing-ball'
    THREE_BODY = 'three-body'


class ModelKind(Enum):
    HNN = 'hnn'
    LNN = 'lnn'
    SRNN = 'srnn'


class Convention(Enum):
    """
    the meaning of the second half of a phase state
    """

    HAMILTONIAN = 'hamiltonian'
    LAGRANGIAN = 'lagrangian'


class Activation(Enum):
    TANH = 'tanh'
    SOFTPLUS = 'softplus'


class IntegratorMethod(Enum):
    RK45 = 'rk45'
    EULER = 'euler'
    LEAPFROG = 'leapfrog'


class OptimizerKind(Enum):
    ADAM = 'adam'
    SGD = 'sgd'


class SamplerKind(Enum):
    """
    uniform draws between low and high (equal bounds fix a component), or the three-body orbit sampler
    """

    UNIFORM = 'uniform'
    ORBIT = 'orbit'


class SystemSpec(BaseModel):
    """
    One of the six mechanical systems and its physical constants
    Constants irrelevant to the tag are carried but ignored
    """

    tag: SystemTag
    m: float = 1.0
    k: float = 1.0
    l: float = 1.0  # noqa: E741
    l0: float = 1.0
    g: float = 9.8
    G: float = 1.0
    m1: float = 1.0
    m2: float = 1.0
    m3: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    rho: float = 0.8
    # three-body only: 2 for the planar layout, 3 for the spatial layout
    dimensions: int = 2

    @model_validator(mode='after')
    def check_constants(self) -> 'SystemSpec':
        for name in ['m', 'k', 'l', 'l0', 'g', 'G', 'm1', 'm2', 'm3', 'l1', 'l2']:
            if not getattr(self, name) > 0:
                raise ContractError(f'{self.tag.value}: constant {name} must be strictly positive')
        if not 0 < self.rho <= 1:
            raise ContractError(f'{self.tag.value}: restitution must be in (0, 1], got {self.rho}')
        if self.dimensions not in (2, 3):
            raise ContractError(f'{self.tag.value}: dimensions must be 2 or 3')
        return self


class MlpSpec(BaseModel):
    """
    a scalar-output multilayer perceptron, activation on hidden layers and identity on the output
    """

    layer_sizes: list[int]
    activation: Activation = Activation.TANH

    @field_validator('layer_sizes')
    @classmethod
    def check_layers(cls, layer_sizes: list[int]) -> list[int]:
        if len(layer_sizes) < 2:
            raise ContractError(f'An MLP needs an input and an output layer, got {layer_sizes}')
        if any(size < 1 for size in layer_sizes):
            raise ContractError(f'Layer sizes must be positive, got {layer_sizes}')
        if layer_sizes[-1] != 1:
            raise ContractError(f'The output layer must be a single unit, got {layer_sizes}')
        return layer_sizes

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]


class IntegratorConfig(BaseModel):
    """
    settings for one integration, tolerances apply to rk45 and dt to the fixed-step methods
    """

    method: IntegratorMethod = IntegratorMethod.RK45
    rtol: float = 1e-6
    atol: float = 1e-9
    dt: float | None = None
    max_steps: int = 1_000_000
    max_step: float = inf
    first_step: float | None = None

    @model_validator(mode='after')
    def check_positive(self) -> 'IntegratorConfig':
        if self.rtol <= 0 or self.atol <= 0:
            raise ContractError('Integrator tolerances must be strictly positive')
        if self.dt is not None and self.dt <= 0:
            raise ContractError('Integrator dt must be strictly positive')
        if self.max_steps < 1:
            raise ContractError('max_steps must be at least 1')
        if self.max_step <= 0 or (self.first_step is not None and self.first_step <= 0):
            raise ContractError('Step limits must be strictly positive')
        return self


class SamplerSpec(BaseModel):
    """
    how initial conditions are drawn
    uniform: one component per state entry, low == high fixes that component
    orbit: three bodies on a randomly sized and rotated equilateral triangle with near-circular velocities
    """

    kind: SamplerKind = SamplerKind.UNIFORM
    low: list[float] = Field(default_factory=list)
    high: list[float] = Field(default_factory=list)
    orbit_radius: tuple[float, float] = (0.9, 1.2)
    orbit_noise: float = 0.05

    @model_validator(mode='after')
    def check_bounds(self) -> 'SamplerSpec':
        if self.kind == SamplerKind.UNIFORM:
            if len(self.low) != len(self.high) or not self.low:
                raise ContractError('Uniform sampler needs matching, non-empty low and high bounds')
            if any(lo > hi for lo, hi in zip(self.low, self.high)):
                raise ContractError(f'Sampler low bound exceeds high bound: {self.low} > {self.high}')
        elif not 0 < self.orbit_radius[0] <= self.orbit_radius[1]:
            raise ContractError(f'Orbit radius range is invalid: {self.orbit_radius}')
        return self


class TrainConfig(BaseModel):
    """
    Optimisation settings for one training run
    """

    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: OptimizerKind = OptimizerKind.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0
    srnn_horizon: int = 10
    log_every: int = 10

    @model_validator(mode='after')
    def check_values(self) -> 'TrainConfig':
        if self.epochs < 0:
            raise ContractError('epochs must be >= 0')
        if self.batch_size < 1:
            raise ContractError('batch_size must be >= 1')
        if self.learning_rate <= 0:
            raise ContractError('learning_rate must be > 0')
        if self.srnn_horizon < 1:
            raise ContractError('srnn_horizon must be >= 1')
        return self


class ExperimentConfig(BaseModel):
    """
    Everything needed to regenerate one benchmark cell: data, network and optimiser
    """

    preset: str
    system: SystemSpec
    model: ModelKind
    n_trajectories: int
    t_span: tuple[float, float]
    # derivative datasets: samples per unit time, or an explicit count per trajectory
    timescale: float | None = None
    samples_per_trajectory: int | None = None
    # sequence datasets: fixed grid step
    dt: float | None = None
    sampler: SamplerSpec
    split_ratio: float = 0.8
    # separately generated test set, sequence presets only
    test_trajectories: int | None = None
    test_t_span: tuple[float, float] | None = None
    seed: int = 0
    hidden_layers: list[int] = Field(default_factory=lambda: [256, 256])
    activation: Activation = Activation.TANH
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: OptimizerKind = OptimizerKind.ADAM
    srnn_horizon: int = 10
    # bouncing ball: restitution used when rolling out trained models
    eval_restitution: float | None = None
    # hyperparameters as written in the experiment description, recorded for reference
    stated: str = ''

    @model_validator(mode='after')
    def check_experiment(self) -> 'ExperimentConfig':
        if self.n_trajectories < 1:
            raise ContractError('n_trajectories must be positive')
        if not self.t_span[1] > self.t_span[0]:
            raise ContractError(f't_span must be increasing, got {self.t_span}')
        if not 0 < self.split_ratio < 1:
            raise ContractError(f'split_ratio must be in (0, 1), got {self.split_ratio}')
        if self.model == ModelKind.SRNN:
            if self.dt is None or self.dt <= 0:
                raise ContractError(f'{self.preset}: sequence presets need a positive dt')
        elif self.samples_per_trajectory is None and (self.timescale is None or self.timescale <= 0):
            raise ContractError(f'{self.preset}: derivative presets need a timescale or samples_per_trajectory')
        if self.samples_per_trajectory is not None and self.samples_per_trajectory < 1:
            raise ContractError('samples_per_trajectory must be positive')
        if self.test_trajectories is not None and self.test_trajectories < 1:
            raise ContractError('test_trajectories must be positive')
        if any(width < 1 for width in self.hidden_layers):
            raise ContractError(f'hidden layer widths must be positive, got {self.hidden_layers}')
        if self.eval_restitution is not None and not 0 < self.eval_restitution <= 1:
            raise ContractError('eval_restitution must be in (0, 1]')
        return self

    @property
    def convention(self) -> Convention:
        return Convention.LAGRANGIAN if self.model == ModelKind.LNN else Convention.HAMILTONIAN

    @property
    def rollout_restitution(self) -> float | None:
        """
        restitution applied when rolling out a trained model, None for smooth systems
        """
        if self.system.tag != SystemTag.BOUNCING_BALL:
            return None
        return self.eval_restitution if self.eval_restitution is not None else self.system.rho

    def mlp_spec(self, input_dim: int) -> MlpSpec:
        return MlpSpec(layer_sizes=[input_dim, *self.hidden_layers, 1], activation=self.activation)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            seed=self.seed,
            srnn_horizon=self.srnn_horizon,
        )


class NetworkRecord(BaseModel):
    """
    one serialised network, arrays as nested lists in layer order
    """

    spec: MlpSpec
    weights: list[list[list[float]]]
    biases: list[list[float]]


class Checkpoint(BaseModel):
    """
    A trained model, with the experiment and seed which produced it
    """

    version: str = CURRENT_VERSION
    model: ModelKind
    networks: dict[str, NetworkRecord]
    experiment: ExperimentConfig
    seed: int


class DatasetManifest(BaseModel):
    """
    describes the files written for one generated dataset
    """

    version: str = CURRENT_VERSION
    preset: str
    kind: str
    experiment: ExperimentConfig
    state_names: list[str]
    label_names: list[str] = Field(default_factory=list)
    n_train_trajectories: int
    n_test_trajectories: int
    n_train_samples: int
    n_test_samples: int
    files: dict[str, str] = Field(default_factory=dict)


class MetricsReport(BaseModel):
    """
    pooled error statistics between predicted and true trajectories
    """

    preset: str = ''
    system: str = ''
    model: str = ''
    mse: float
    mae: float
    rmse: float
    std: float
    var: float
    n_points: int
    # per state component statistics, written to their own CSV rather than the flat JSON
    per_component: dict[str, dict[str, float]] = Field(default_factory=dict, exclude=True)

    @model_validator(mode='after')
    def check_nonnegative(self) -> 'MetricsReport':
        if min(self.mse, self.mae, self.rmse, self.std, self.var) < 0:
            raise ContractError('Metrics must be nonnegative')
        return self


class BenchmarkRun(BaseModel):
    """
    record of one preset run through generate, train and evaluate
    """

    version: str = CURRENT_VERSION
    preset: str
    experiment: ExperimentConfig | None = None
    checkpoint: str | None = None
    metrics: MetricsReport | None = None
    artifacts: dict[str, str] = Field(default_factory=dict)
    status: str = 'ok'
    error: str | None = None
    physbench_version: str | None = None


# documents which carry a version and can be read back with read_json_from_path
VERSIONED_MODELS = (Checkpoint, DatasetManifest, BenchmarkRun)

# incremental transitions between versions, keyed on model then (from_version, to_version)
LIFTOVER_METHODS: dict[Any, dict[tuple[str | None, str], Any]] = {}


def lift_up_model_version(data: dict, model: Any) -> dict:
    """
    lift over data from one version to another
    walks up from the version in the dict to CURRENT_VERSION, applying any registered transition

    Args:
        data (dict): the model data prior to any transitions
        model (class): the data model the dict needs to be parsed as

    Returns:
        the input dictionary, transitioned to current format
    """

    if model not in VERSIONED_MODELS:
        return data

    from_version = data.get('version')

    if from_version == CURRENT_VERSION:
        return data

    if from_version not in ALL_VERSIONS:
        raise VersionMismatchError(f'Unknown {model.__name__} version: {from_version}')

    from_version_index = ALL_VERSIONS.index(from_version)
    for start, end in zip(ALL_VERSIONS[from_version_index:], ALL_VERSIONS[from_version_index + 1 :]):
        transition = LIFTOVER_METHODS.get(model, {}).get((start, end))
        if transition is None:
            get_logger().info(f'No liftover required for {model.__name__} {start} -> {end}')
            continue
        data = transition(data)
        data['version'] = end

    return data
