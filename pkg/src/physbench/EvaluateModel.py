#!/usr/bin/env python3

"""
Roll a trained model out from the initial state of every test trajectory and compare with the ground truth

writes, into the output directory:
    metrics.json - pooled mse, mae, rmse, std, var over all successful rollouts
    metrics_by_component.csv - the same statistics per state component
    trajectories/traj_NNN.csv - t, truth and predicted state columns, then truth and predicted Cartesian columns
    rollouts.csv - one row per test trajectory, with a failure flag and message
    energy.csv - drift of the true H along each prediction (and of the learned H), conservative systems only

--oracle swaps the learned networks for the system's analytic H, L or K + V
"""

import sys
from argparse import ArgumentParser, Namespace
from pathlib import Path

import numpy as np
import pandas as pd

from physbench.cli import StageArgumentParser, run_stage
from physbench.config import config_retrieve
from physbench.datasets import Dataset, DerivativeDataset, read_dataset
from physbench.diff_engine import MlpParams
from physbench.integrators import Trajectory
from physbench.learned_models import HnnModel, LearnedModel, SrnnModel, oracle_model, rollout_ode_model, srnn_rollout
from physbench.metrics import energy_drift, learned_energy_drift, pooled_metrics, residual_statistics, write_metrics
from physbench.models import (
    ContractError,
    Convention,
    ExperimentConfig,
    IntegratorConfig,
    ManifestMismatchError,
    MetricsReport,
    NumericError,
    PhysbenchError,
    SystemTag,
)
from physbench.static_values import get_logger
from physbench.systems import cartesian_coordinates, state_names
from physbench.training import model_from_checkpoint, read_checkpoint


def truth_trajectories(dataset: Dataset) -> list[Trajectory]:
    if isinstance(dataset, DerivativeDataset):
        return dataset.trajectories()
    return dataset.trajectories


def rollout(
    model: LearnedModel,
    truth: Trajectory,
    integrator: IntegratorConfig,
    restitution: float | None,
) -> Trajectory:
    """
    the model's prediction on the ground truth's time grid, starting from its first state
    """
    if isinstance(model, SrnnModel):
        dt = truth.uniform_step()
        return srnn_rollout(model, truth.initial_state, dt, len(truth) - 1, restitution, float(truth.times[0]))
    return rollout_ode_model(model, truth.initial_state, truth.times, integrator, restitution)


def _trajectory_frame(cfg: ExperimentConfig, truth: Trajectory, pred: Trajectory) -> pd.DataFrame:
    names = state_names(cfg.system, cfg.convention)
    columns = {'t': truth.times}
    for i, name in enumerate(names):
        columns[f'truth_{name}'] = truth.states[:, i]
    for i, name in enumerate(names):
        columns[f'pred_{name}'] = pred.states[:, i]
    for label, trajectory in [('truth', truth), ('pred', pred)]:
        for name, values in cartesian_coordinates(cfg.system, trajectory.states).items():
            columns[f'{label}_{name}'] = values
    return pd.DataFrame(columns)


def _energy_row(cfg: ExperimentConfig, model: LearnedModel, index: int, pred: Trajectory) -> dict | None:
    if cfg.convention != Convention.HAMILTONIAN or cfg.system.tag == SystemTag.BOUNCING_BALL:
        return None
    row = {'trajectory': index, 'true_h_drift': energy_drift(cfg.system, pred)[0]}
    if isinstance(model, HnnModel) and isinstance(model.net, MlpParams):
        row['learned_h_drift'] = learned_energy_drift(model.net, pred)[0]
    return row


def evaluate(
    model: LearnedModel,
    cfg: ExperimentConfig,
    test: Dataset,
    out_dir: str | Path,
    restitution: float | None = None,
) -> MetricsReport:
    """
    roll out every test trajectory and write the evaluation artifacts

    Args:
        model (LearnedModel): trained or oracle model
        cfg (ExperimentConfig): the experiment the data came from
        test (Dataset): the test split
        out_dir (str): output directory
        restitution (float | None): contact restitution for bouncing-ball rollouts

    Returns:
        the pooled report over the trajectories which rolled out successfully
    """
    out_dir = Path(out_dir)
    (out_dir / 'trajectories').mkdir(parents=True, exist_ok=True)
    integrator = IntegratorConfig(
        rtol=config_retrieve(['rollout', 'rtol'], 1e-6),
        atol=config_retrieve(['rollout', 'atol'], 1e-9),
    )
    logger = get_logger()

    pairs, statuses, energies = [], [], []
    for index, truth in enumerate(truth_trajectories(test)):
        try:
            pred = rollout(model, truth, integrator, restitution)
        except PhysbenchError as error:
            logger.warning(f'{cfg.preset}: rollout of test trajectory {index} failed: {error}')
            statuses.append({'trajectory': index, 'status': 'failed', 'mse': np.nan, 'error': str(error)})
            continue
        pairs.append((pred, truth))
        _trajectory_frame(cfg, truth, pred).to_csv(out_dir / 'trajectories' / f'traj_{index:03d}.csv', index=False)
        mse = residual_statistics(pred.states - truth.states)['mse']
        statuses.append({'trajectory': index, 'status': 'ok', 'mse': mse, 'error': ''})
        if (row := _energy_row(cfg, model, index, pred)) is not None:
            energies.append(row)

    pd.DataFrame(statuses, columns=['trajectory', 'status', 'mse', 'error']).to_csv(
        out_dir / 'rollouts.csv',
        index=False,
    )
    if energies:
        pd.DataFrame(energies).to_csv(out_dir / 'energy.csv', index=False)
    if not pairs:
        raise NumericError(f'{cfg.preset}: every test rollout failed, see {out_dir / "rollouts.csv"}')

    report = pooled_metrics(
        pairs,
        state_names(cfg.system, cfg.convention),
        preset=cfg.preset,
        system=cfg.system.tag.value,
        model=cfg.model.value,
    )
    write_metrics(report, out_dir)
    logger.info(f'{cfg.preset}: mse {report.mse:.6g} over {len(pairs)} trajectories, written to {out_dir}')
    return report


def main(
    preset: str,
    data_dir: str | Path,
    out_dir: str | Path,
    checkpoint: str | Path | None = None,
    oracle: bool = False,
) -> MetricsReport:
    """
    evaluate a checkpoint, or the exact-model oracle, on a dataset's test split
    """
    manifest, _, test = read_dataset(data_dir)
    if manifest.preset != preset:
        raise ManifestMismatchError(f'Dataset was generated for {manifest.preset}, not {preset}')

    if oracle:
        cfg = manifest.experiment
        model = oracle_model(cfg)
        # the oracle replays the dynamics the data were generated with
        restitution = cfg.system.rho if cfg.system.tag == SystemTag.BOUNCING_BALL else None
    else:
        if checkpoint is None:
            raise ContractError('A checkpoint is required unless --oracle is given')
        document = read_checkpoint(checkpoint)
        if document.experiment.preset != preset:
            raise ManifestMismatchError(f'Checkpoint was trained for {document.experiment.preset}, not {preset}')
        cfg = document.experiment
        model = model_from_checkpoint(document)
        restitution = cfg.rollout_restitution

    get_logger().info(f'{cfg.preset}: effective seed {cfg.seed}')
    report = evaluate(model, cfg, test, out_dir, restitution)
    print(report.model_dump_json(indent=2))
    return report


def add_arguments(parser: ArgumentParser):
    parser.add_argument('preset', help='Preset name, e.g. mass-spring/hnn')
    parser.add_argument('--data', help='Dataset directory written by GenerateDataset', required=True)
    parser.add_argument('--checkpoint', help='checkpoint.json written by TrainModel', default=None)
    parser.add_argument('--out', help='Output directory', required=True)
    parser.add_argument('--oracle', action='store_true', help='Evaluate the analytic model instead of a checkpoint')


def run(args: Namespace) -> int:
    return run_stage(lambda: main(args.preset, args.data, args.out, args.checkpoint, args.oracle))


def cli_main():
    """
    CLI entrypoint
    """
    parser = StageArgumentParser(description=__doc__)
    add_arguments(parser)
    sys.exit(run(parser.parse_args()))


if __name__ == '__main__':
    cli_main()
