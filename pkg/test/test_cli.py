"""
the stage scripts, run end to end on tiny overrides of the mass-spring presets
"""

import json

import pandas as pd
import pytest

from physbench import DescribePresets, EvaluateModel, GenerateDataset, RunBenchmark, TrainModel
from physbench.cli import exit_code, main
from physbench.config import ConfigError
from physbench.models import ManifestMismatchError, ModelKind, NumericError, SystemTag, UnknownPresetError
from physbench.presets import get_preset, preset_names
from physbench.utils import read_json_from_path
from physbench.version import __version__
from test.conftest import TINY_DERIVATIVE

TINY_FLAGS = ['--n-trajectories', '4', '--epochs', '2', '--config']


@pytest.fixture(name='tiny_overrides')
def fixture_tiny_overrides(tmp_path) -> str:
    """
    an override file holding the tiny derivative settings
    """
    path = tmp_path / 'tiny.toml'
    path.write_text('samples_per_trajectory = 10\nhidden_layers = [8, 8]\nepochs = 2\n', encoding='utf-8')
    return str(path)


def test_generate_then_evaluate_oracle(tmp_path, tiny_overrides: str):
    data, out = str(tmp_path / 'data'), str(tmp_path / 'eval')
    assert main(['generate', 'mass-spring/hnn', '--out', data, *TINY_FLAGS, tiny_overrides]) == 0
    manifest = read_json_from_path(tmp_path / 'data' / 'manifest.json')
    assert manifest['n_train_trajectories'] + manifest['n_test_trajectories'] == 4

    assert main(['evaluate', 'mass-spring/hnn', '--data', data, '--out', out, '--oracle']) == 0
    metrics = read_json_from_path(tmp_path / 'eval' / 'metrics.json')
    assert metrics['mse'] < 1e-6
    rollouts = pd.read_csv(tmp_path / 'eval' / 'rollouts.csv')
    assert set(rollouts['status']) == {'ok'}
    assert (tmp_path / 'eval' / 'energy.csv').exists()
    assert (tmp_path / 'eval' / 'metrics_by_component.csv').exists()

    trajectory = pd.read_csv(tmp_path / 'eval' / 'trajectories' / 'traj_000.csv')
    assert list(trajectory.columns)[:5] == ['t', 'truth_q', 'truth_p_q', 'pred_q', 'pred_p_q']


def test_train_and_evaluate_stages(tmp_path):
    data, train, out = tmp_path / 'data', tmp_path / 'train', tmp_path / 'eval'
    GenerateDataset.main('mass-spring/hnn', data, TINY_DERIVATIVE, workers=1)
    checkpoint = TrainModel.main('mass-spring/hnn', data, train, TINY_DERIVATIVE)
    assert checkpoint == train / TrainModel.CHECKPOINT_NAME

    losses = pd.read_csv(train / TrainModel.LOSS_NAME)
    assert losses['epoch'].tolist() == [1, 2]

    report = EvaluateModel.main('mass-spring/hnn', data, out, checkpoint)
    assert report.preset == 'mass-spring/hnn'
    assert report.n_points > 0
    assert (out / 'metrics.json').exists()


def test_training_overrides_must_not_change_the_data(tmp_path):
    data = tmp_path / 'data'
    GenerateDataset.main('mass-spring/hnn', data, TINY_DERIVATIVE, workers=1)
    with pytest.raises(ManifestMismatchError, match='seed'):
        TrainModel.main('mass-spring/hnn', data, tmp_path / 'train', {**TINY_DERIVATIVE, 'seed': 3})
    with pytest.raises(ManifestMismatchError):
        TrainModel.main('mass-spring/lnn', data, tmp_path / 'train', TINY_DERIVATIVE)


def test_evaluate_checks_the_preset(tmp_path):
    data = tmp_path / 'data'
    GenerateDataset.main('mass-spring/hnn', data, TINY_DERIVATIVE, workers=1)
    with pytest.raises(ManifestMismatchError):
        EvaluateModel.main('pendulum/hnn', data, tmp_path / 'eval', oracle=True)


def test_exit_codes(tmp_path, tiny_overrides: str):
    data = str(tmp_path / 'data')
    assert main(['generate', 'mass-spring/gnn', '--out', data]) == 1
    assert main(['generate', 'mass-spring/hnn', '--out', data, *TINY_FLAGS, tiny_overrides]) == 0
    evaluate = ['evaluate', 'mass-spring/hnn', '--data', data, '--out', str(tmp_path / 'eval')]
    # neither a checkpoint nor --oracle
    assert main(evaluate) == 1
    assert main([*evaluate, '--checkpoint', str(tmp_path / 'missing.json')]) == 2
    assert main(['benchmark', '--out', str(tmp_path / 'bench'), '--system', 'triple-pendulum']) == 1


def test_exit_code_mapping():
    assert exit_code(UnknownPresetError('x')) == 1
    assert exit_code(ConfigError('x')) == 1
    assert exit_code(NumericError('x')) == 2
    assert exit_code(OSError('x')) == 2


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as error:
        main(['train', 'mass-spring/hnn'])
    assert error.value.code == 1
    with pytest.raises(SystemExit) as error:
        main(['calibrate'])
    assert error.value.code == 1


def test_presets_listing(capsys):
    assert main(['presets']) == 0
    printed = capsys.readouterr().out
    assert 'double-pendulum/srnn' in printed
    assert '256x256' in printed

    text = DescribePresets.main('pendulum/lnn')
    assert json.loads(text.split('\n\nstated:')[0])['samples_per_trajectory'] == 100
    assert 'stated: 10 trajectories' in text


def test_oracle_benchmark(tmp_path, tiny_overrides: str):
    out = tmp_path / 'bench'
    args = ['benchmark', '--out', str(out), '--system', 'mass-spring', '--model', 'hnn', '--oracle', '--workers', '1']
    assert main([*args, *TINY_FLAGS, tiny_overrides]) == 0

    summary = pd.read_csv(out / 'summary.csv')
    assert summary['preset'].tolist() == ['mass-spring/hnn']
    assert summary['status'].tolist() == ['ok']
    assert summary['mse'].iloc[0] < 1e-6
    assert 'mass-spring' in (out / 'summary.txt').read_text(encoding='utf-8')

    run = read_json_from_path(out / 'mass-spring_hnn' / 'run.json')
    assert run['status'] == 'ok'
    assert run['metrics']['preset'] == 'mass-spring/hnn'
    assert run['physbench_version'] == __version__


def test_benchmark_marks_unsupported_oracles(tmp_path):
    runs = RunBenchmark.main(
        tmp_path,
        system='three-body',
        model='lnn',
        overrides={'n_trajectories': 2, 'samples_per_trajectory': 3, 't_span': [0.0, 0.5]},
        workers=1,
        oracle=True,
    )
    assert [record.status for record in runs] == ['unsupported']
    assert pd.read_csv(tmp_path / 'summary.csv')['status'].tolist() == ['unsupported']


def test_benchmark_trains(tmp_path):
    overrides = {'n_trajectories': 4, 't_span': [0.0, 1.0], 'dt': 0.1, 'hidden_layers': [8, 8], 'epochs': 2}
    runs = RunBenchmark.main(tmp_path, system='mass-spring', model='srnn', overrides=overrides, workers=1)
    assert runs[0].status == 'ok'
    assert runs[0].checkpoint is not None
    assert (tmp_path / 'mass-spring_srnn' / 'train' / 'losses.csv').exists()


# no analytic L for three bodies, no K + V split for the two coupled pendulums
UNSUPPORTED_ORACLES = {'three-body/lnn', 'double-pendulum/srnn', 'spring-pendulum/srnn'}


def oracle_overrides(name: str) -> dict:
    """
    five short trajectories; sequence presets on a fine grid so leapfrog stays close to the truth
    """
    cfg = get_preset(name)
    overrides = {'n_trajectories': 5, 't_span': [0.0, 1.0]}
    if cfg.model == ModelKind.SRNN:
        overrides['dt'] = 0.005
    else:
        overrides['samples_per_trajectory'] = 10
    if cfg.test_trajectories is not None:
        overrides.update(test_trajectories=1, test_t_span=overrides['t_span'])
    if name == 'bouncing-ball/srnn':
        # a single bounce; Euler truth and leapfrog may touch the floor one step apart
        overrides.update(t_span=[0.0, 0.25], test_t_span=[0.0, 0.25], dt=0.0002)
    return overrides


@pytest.mark.parametrize('name', preset_names())
def test_exact_models_reproduce_every_preset(tmp_path, name: str):
    record = RunBenchmark.run_preset(name, tmp_path, oracle_overrides(name), oracle=True)
    if name in UNSUPPORTED_ORACLES:
        assert record.status == 'unsupported'
        return
    assert record.status == 'ok', record.error
    limit = 1e-2 if get_preset(name).system.tag == SystemTag.BOUNCING_BALL else 1e-4
    assert record.metrics.mse < limit
