"""
the optimiser, the training loop and checkpoint IO
"""

import numpy as np
import pandas as pd
import pytest

from physbench.datasets import DerivativeDataset, generate_datasets, generate_derivative_dataset
from physbench.diff_engine import MlpParams
from physbench.learned_models import HnnModel, build_model, hnn_time_derivative, lnn_acceleration, oracle_model
from physbench.models import (
    CheckpointError,
    ContractError,
    ExperimentConfig,
    NumericError,
    OptimizerKind,
    TrainConfig,
    VersionMismatchError,
)
from physbench.presets import apply_overrides, get_preset
from physbench.training import (
    Optimiser,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
    train,
    write_loss_history,
)
from physbench.utils import file_digest
from test.conftest import CHECKPOINT_CURRENT, CHECKPOINT_UNKNOWN


def same_networks(first, second) -> bool:
    return all(
        np.array_equal(a, b)
        for name in first.networks()
        for a, b in zip(first.networks()[name].arrays(), second.networks()[name].arrays())
    )


def test_adam_first_steps():
    """
    with bias correction the first Adam steps move every parameter by about the learning rate
    """
    optimiser = Optimiser(TrainConfig(learning_rate=0.1), [np.zeros(2)])
    grads = [np.array([0.5, -4.0])]
    first = optimiser.step([np.array([1.0, -2.0])], grads)
    assert np.allclose(first[0], [0.9, -1.9])
    second = optimiser.step(first, grads)
    assert np.allclose(second[0], [0.8, -1.8])
    assert optimiser.step_count == 2


def test_adam_moments():
    optimiser = Optimiser(TrainConfig(learning_rate=0.01), [np.zeros(1)])
    optimiser.step([np.zeros(1)], [np.array([2.0])])
    updated = optimiser.step([np.zeros(1)], [np.array([1.0])])
    first_moment = 0.9 * 0.2 + 0.1 * 1.0
    second_moment = 0.999 * 0.004 + 0.001 * 1.0
    m_hat = first_moment / (1 - 0.9**2)
    v_hat = second_moment / (1 - 0.999**2)
    assert updated[0][0] == pytest.approx(-0.01 * m_hat / (np.sqrt(v_hat) + 1e-8))


def test_sgd_step():
    optimiser = Optimiser(TrainConfig(learning_rate=0.5, optimizer=OptimizerKind.SGD), [np.zeros(2)])
    updated = optimiser.step([np.array([1.0, 1.0])], [np.array([2.0, -2.0])])
    assert np.allclose(updated[0], [0.0, 2.0])
    with pytest.raises(ContractError):
        optimiser.step([np.zeros(2)], [])


def test_zero_epochs_leave_parameters_unchanged(tiny_hnn_config: ExperimentConfig):
    dataset = generate_derivative_dataset(tiny_hnn_config)
    model = build_model(tiny_hnn_config)
    trained, report = train(model, dataset, TrainConfig(epochs=0))
    assert same_networks(model, trained)
    assert len(report.losses) == 0
    assert report.final_loss is None


def test_training_is_deterministic(tiny_hnn_config: ExperimentConfig, tmp_path):
    dataset = generate_derivative_dataset(tiny_hnn_config)
    cfg = tiny_hnn_config.train_config()
    first, first_report = train(build_model(tiny_hnn_config), dataset, cfg)
    second, second_report = train(build_model(tiny_hnn_config), dataset, cfg)
    assert same_networks(first, second)
    assert np.array_equal(first_report.losses, second_report.losses)
    assert len(first_report.losses) == tiny_hnn_config.epochs

    first_path = save_checkpoint(first, tiny_hnn_config, tmp_path / 'a.json')
    second_path = save_checkpoint(second, tiny_hnn_config, tmp_path / 'b.json')
    assert file_digest(first_path) == file_digest(second_path)

    reshuffled, _ = train(build_model(tiny_hnn_config), dataset, cfg.model_copy(update={'seed': 9}))
    assert not same_networks(first, reshuffled)


def test_hnn_loss_decreases(tiny_hnn_config: ExperimentConfig):
    cfg = apply_overrides(tiny_hnn_config, {'hidden_layers': [16, 16], 'epochs': 30, 'learning_rate': 0.01})
    dataset = generate_derivative_dataset(cfg)
    _, report = train(build_model(cfg), dataset, cfg.train_config())
    assert report.losses[-1] < 0.5 * report.losses[0]


def test_lnn_trains(tiny_lnn_config: ExperimentConfig):
    dataset = generate_derivative_dataset(tiny_lnn_config)
    model, report = train(build_model(tiny_lnn_config), dataset, tiny_lnn_config.train_config())
    assert np.all(np.isfinite(report.losses))
    assert lnn_acceleration(model, dataset.inputs[:3]).shape == (3, 1)


def test_srnn_trains(tiny_srnn_config: ExperimentConfig):
    train_set, _ = generate_datasets(tiny_srnn_config)
    cfg = tiny_srnn_config.train_config()
    model, report = train(build_model(tiny_srnn_config), train_set, cfg)
    assert len(report.losses) == 2
    assert np.all(np.isfinite(report.losses))
    again, _ = train(build_model(tiny_srnn_config), train_set, cfg)
    assert same_networks(model, again)


def test_mismatched_training_inputs(tiny_hnn_config: ExperimentConfig, tiny_srnn_config: ExperimentConfig):
    derivative = generate_derivative_dataset(tiny_hnn_config)
    with pytest.raises(ContractError):
        train(build_model(tiny_srnn_config), derivative, TrainConfig(epochs=1))
    with pytest.raises(ContractError):
        train(oracle_model(tiny_hnn_config), derivative, TrainConfig(epochs=1))


def test_non_finite_loss_reports_the_batch(tiny_hnn_config: ExperimentConfig):
    dataset = generate_derivative_dataset(tiny_hnn_config)
    exploding = DerivativeDataset(
        dataset.experiment,
        dataset.times,
        dataset.inputs,
        np.full_like(dataset.labels, 1e200),
        dataset.trajectory_index,
    )
    with pytest.raises(NumericError, match='epoch 0, batch 0'):
        train(build_model(tiny_hnn_config), exploding, TrainConfig(epochs=1))


def test_periodic_checkpoints(tiny_hnn_config: ExperimentConfig, tmp_path):
    dataset = generate_derivative_dataset(tiny_hnn_config)
    cfg = tiny_hnn_config.train_config().model_copy(update={'checkpoint_every': 1})
    _, report = train(build_model(tiny_hnn_config), dataset, cfg, tmp_path / 'checkpoint.json')
    assert len(report.checkpoints) == tiny_hnn_config.epochs
    assert (tmp_path / 'checkpoint.json').exists()


def test_checkpoint_round_trip(tiny_srnn_config: ExperimentConfig, tmp_path):
    model = build_model(tiny_srnn_config)
    path = save_checkpoint(model, tiny_srnn_config, tmp_path / 'checkpoint.json')
    document = read_checkpoint(path)
    assert document.experiment == tiny_srnn_config
    assert set(document.networks) == {'kinetic', 'potential'}
    assert same_networks(model, load_checkpoint(path))


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / 'absent.json')

    truncated = tmp_path / 'truncated.json'
    truncated.write_text(CHECKPOINT_CURRENT.read_text(encoding='utf-8')[:200], encoding='utf-8')
    with pytest.raises(CheckpointError):
        load_checkpoint(truncated)

    with pytest.raises(VersionMismatchError):
        read_checkpoint(CHECKPOINT_UNKNOWN)


def test_checkpoint_document():
    """
    H(q, p) = q + 2p + 0.5, so qdot = 2 and pdot = -1 everywhere
    """
    model = load_checkpoint(CHECKPOINT_CURRENT)
    assert isinstance(model, HnnModel)
    assert isinstance(model.net, MlpParams)
    assert np.allclose(hnn_time_derivative(model, [0.3, -0.1]), [2.0, -1.0])


def test_loss_history(tmp_path):
    path = write_loss_history([0.5, 0.25], tmp_path / 'losses.csv')
    frame = pd.read_csv(path)
    assert list(frame.columns) == ['epoch', 'mean_loss']
    assert frame['epoch'].tolist() == [1, 2]
    assert frame['mean_loss'].tolist() == [0.5, 0.25]


@pytest.mark.slow
def test_mass_spring_hnn_preset_learns():
    cfg = get_preset('mass-spring/hnn')
    train_set, _ = generate_datasets(cfg)
    _, report = train(build_model(cfg), train_set, cfg.train_config())
    assert len(report.losses) == cfg.epochs
    assert report.losses[-1] < 0.1 * report.losses[0]
