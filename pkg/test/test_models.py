"""
data model validation and version liftover
"""

import json

import pytest
from pydantic import ValidationError

from physbench import models
from physbench.models import (
    CURRENT_VERSION,
    Checkpoint,
    ContractError,
    ExperimentConfig,
    IntegratorConfig,
    MetricsReport,
    MlpSpec,
    SamplerSpec,
    SystemSpec,
    SystemTag,
    TrainConfig,
    VersionMismatchError,
    lift_up_model_version,
)
from physbench.utils import read_json_from_path
from test.conftest import CHECKPOINT_CURRENT, CHECKPOINT_UNKNOWN


def test_system_defaults():
    system = SystemSpec(tag='pendulum')
    assert system.tag == SystemTag.PENDULUM
    assert system.g == pytest.approx(9.8)
    assert system.dimensions == 2


@pytest.mark.parametrize('constants', [{'m': 0.0}, {'g': -9.8}, {'rho': 1.5}, {'rho': 0.0}, {'dimensions': 4}])
def test_system_constants_are_checked(constants: dict):
    with pytest.raises(ValidationError):
        SystemSpec(tag='mass-spring', **constants)


def test_mlp_spec():
    assert MlpSpec(layer_sizes=[4, 8, 1]).input_dim == 4
    for layers in ([4], [4, 0, 1], [4, 8, 2]):
        with pytest.raises(ValidationError):
            MlpSpec(layer_sizes=layers)


def test_integrator_config():
    assert IntegratorConfig().rtol == pytest.approx(1e-6)
    with pytest.raises(ValidationError):
        IntegratorConfig(atol=0.0)
    with pytest.raises(ValidationError):
        IntegratorConfig(dt=-0.1)


def test_sampler_spec():
    with pytest.raises(ValidationError):
        SamplerSpec(low=[0.0, 1.0], high=[1.0])
    with pytest.raises(ValidationError):
        SamplerSpec(low=[1.0], high=[0.0])
    assert SamplerSpec(kind='orbit').orbit_radius == (0.9, 1.2)


def test_train_config():
    assert TrainConfig().optimizer.value == 'adam'
    assert TrainConfig(epochs=0).epochs == 0
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=0.0)


def test_experiment_needs_a_grid():
    base = {
        'preset': 'mass-spring/hnn',
        'system': {'tag': 'mass-spring'},
        'model': 'hnn',
        'n_trajectories': 4,
        't_span': [0.0, 3.0],
        'sampler': {'low': [-1.0, -1.0], 'high': [1.0, 1.0]},
    }
    with pytest.raises(ValidationError):
        ExperimentConfig(**base)
    assert ExperimentConfig(**base, timescale=10.0).samples_per_trajectory is None
    with pytest.raises(ValidationError):
        ExperimentConfig(**{**base, 'model': 'srnn'})
    with pytest.raises(ValidationError):
        ExperimentConfig(**{**base, 'timescale': 10.0, 't_span': [3.0, 0.0]})


def test_contract_errors_are_value_errors():
    """
    raised inside validators, pydantic reports them as validation errors
    """
    assert issubclass(ContractError, ValueError)


def test_metrics_report_is_nonnegative():
    report = MetricsReport(mse=1.0, mae=1.0, rmse=1.0, std=0.0, var=0.0, n_points=2)
    assert 'per_component' not in report.model_dump()
    with pytest.raises(ValidationError):
        MetricsReport(mse=-1.0, mae=1.0, rmse=1.0, std=0.0, var=0.0, n_points=2)


def test_current_checkpoint_reads():
    checkpoint = read_json_from_path(CHECKPOINT_CURRENT, return_model=Checkpoint)
    assert checkpoint.version == CURRENT_VERSION
    assert checkpoint.experiment.system.tag == SystemTag.MASS_SPRING
    assert checkpoint.networks['hamiltonian'].biases == [[0.5]]


def test_unknown_version_is_rejected():
    data = json.loads(CHECKPOINT_UNKNOWN.read_text(encoding='utf-8'))
    with pytest.raises(VersionMismatchError, match='0.0.1'):
        lift_up_model_version(data, Checkpoint)
    data.pop('version')
    with pytest.raises(VersionMismatchError):
        lift_up_model_version(data, Checkpoint)


def test_unversioned_models_pass_through():
    data = {'mse': 1.0}
    assert lift_up_model_version(data, MetricsReport) is data


def test_liftover_applies_transitions(monkeypatch):
    monkeypatch.setattr(models, 'ALL_VERSIONS', ['0.9.0', CURRENT_VERSION])

    def add_seed(data: dict) -> dict:
        data['seed'] = data['experiment'].get('seed', 0)
        return data

    monkeypatch.setitem(models.LIFTOVER_METHODS, Checkpoint, {('0.9.0', CURRENT_VERSION): add_seed})
    data = json.loads(CHECKPOINT_CURRENT.read_text(encoding='utf-8'))
    data['version'] = '0.9.0'
    data.pop('seed')

    lifted = lift_up_model_version(data, Checkpoint)
    assert lifted['version'] == CURRENT_VERSION
    assert Checkpoint.model_validate(lifted).seed == 0
