"""
A home for common test fixtures
"""

from os import environ
from pathlib import Path

import pytest

from physbench.config import set_config
from physbench.diff_engine import MlpParams
from physbench.models import ExperimentConfig, SystemSpec, SystemTag
from physbench.presets import apply_overrides, get_preset

# force this to come first
PWD = Path(__file__).parent
INPUT = PWD / 'input'
environ['PHYSBENCH_CONFIG'] = str(INPUT / 'example_config.toml')

OVERRIDES = INPUT / 'overrides.toml'
BAD_OVERRIDES = INPUT / 'bad_overrides.toml'
CHECKPOINT_CURRENT = INPUT / 'documents' / 'checkpoint_v_current.json'
CHECKPOINT_UNKNOWN = INPUT / 'documents' / 'checkpoint_v_unknown.json'

# small enough to generate, train and evaluate in a second or two
TINY_DERIVATIVE = {'n_trajectories': 4, 'samples_per_trajectory': 10, 'hidden_layers': [8, 8], 'epochs': 2}
TINY_SEQUENCE = {'n_trajectories': 4, 't_span': [0.0, 1.0], 'dt': 0.1, 'hidden_layers': [8, 8], 'epochs': 2}


@pytest.fixture(name='reset_config', autouse=True)
def fixture_reset_config():
    """
    every test re-reads the global config from $PHYSBENCH_CONFIG
    """
    set_config(None)
    yield
    set_config(None)


@pytest.fixture(name='test_input_path', scope='session')
def fixture_test_input_path() -> Path:
    return INPUT


@pytest.fixture(name='mass_spring', scope='session')
def fixture_mass_spring() -> SystemSpec:
    return SystemSpec(tag=SystemTag.MASS_SPRING)


@pytest.fixture(name='pendulum', scope='session')
def fixture_pendulum() -> SystemSpec:
    return SystemSpec(tag=SystemTag.PENDULUM)


@pytest.fixture(name='spring_pendulum', scope='session')
def fixture_spring_pendulum() -> SystemSpec:
    return SystemSpec(tag=SystemTag.SPRING_PENDULUM)


@pytest.fixture(name='double_pendulum', scope='session')
def fixture_double_pendulum() -> SystemSpec:
    return SystemSpec(tag=SystemTag.DOUBLE_PENDULUM)


@pytest.fixture(name='bouncing_ball', scope='session')
def fixture_bouncing_ball() -> SystemSpec:
    return SystemSpec(tag=SystemTag.BOUNCING_BALL, rho=0.8)


@pytest.fixture(name='three_body', scope='session')
def fixture_three_body() -> SystemSpec:
    return SystemSpec(tag=SystemTag.THREE_BODY, m1=1.0, m2=2.0, m3=0.5)


@pytest.fixture(name='quadratic_hamiltonian', scope='session')
def fixture_quadratic_hamiltonian() -> MlpParams:
    """
    a softplus network approximating 0.5 q^2 + 0.5 p^2, the unit mass-spring Hamiltonian
    """
    return MlpParams.quadratic([0.5, 0.5])


@pytest.fixture(name='tiny_hnn_config')
def fixture_tiny_hnn_config() -> ExperimentConfig:
    return apply_overrides(get_preset('mass-spring/hnn'), TINY_DERIVATIVE)


@pytest.fixture(name='tiny_lnn_config')
def fixture_tiny_lnn_config() -> ExperimentConfig:
    return apply_overrides(get_preset('mass-spring/lnn'), TINY_DERIVATIVE)


@pytest.fixture(name='tiny_srnn_config')
def fixture_tiny_srnn_config() -> ExperimentConfig:
    return apply_overrides(get_preset('mass-spring/srnn'), {**TINY_SEQUENCE, 'srnn_horizon': 3})
