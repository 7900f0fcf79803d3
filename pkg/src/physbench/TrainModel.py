#!/usr/bin/env python3

"""
Train a preset's model on a generated dataset

writes checkpoint.json and losses.csv (epoch,mean_loss) into the output directory
"""

import sys
from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Any

from physbench.cli import StageArgumentParser, add_experiment_args, collect_overrides, run_stage
from physbench.datasets import read_dataset
from physbench.learned_models import build_model
from physbench.models import ExperimentConfig, ManifestMismatchError
from physbench.presets import apply_overrides
from physbench.static_values import get_logger
from physbench.training import save_checkpoint, train, write_loss_history
from physbench.utils import file_digest

CHECKPOINT_NAME = 'checkpoint.json'
LOSS_NAME = 'losses.csv'

# fields which change how a model is trained but not the data it is trained on
TRAINING_FIELDS = {
    'hidden_layers',
    'activation',
    'epochs',
    'batch_size',
    'learning_rate',
    'optimizer',
    'srnn_horizon',
    'eval_restitution',
}


def training_experiment(preset: str, data_experiment: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """
    the dataset's experiment with training-only overrides applied
    """
    if data_experiment.preset != preset:
        raise ManifestMismatchError(f'Dataset was generated for {data_experiment.preset}, not {preset}')
    candidate = apply_overrides(data_experiment, overrides)
    changed = [
        key
        for key in ExperimentConfig.model_fields
        if key not in TRAINING_FIELDS and getattr(candidate, key) != getattr(data_experiment, key)
    ]
    if changed:
        raise ManifestMismatchError(f'Overrides {changed} change the data, regenerate the dataset instead')
    return candidate


def main(preset: str, data_dir: str | Path, out_dir: str | Path, overrides: dict[str, Any] | None = None) -> Path:
    """
    train from scratch and write the checkpoint and loss history

    Args:
        preset (str): must match the dataset manifest
        data_dir (str): output of GenerateDataset
        out_dir (str): where to write checkpoint.json and losses.csv
        overrides (dict): training-only preset fields to replace

    Returns:
        the checkpoint path
    """
    manifest, train_set, _ = read_dataset(data_dir)
    cfg = training_experiment(preset, manifest.experiment, overrides or {})
    get_logger().info(f'{cfg.preset}: effective seed {cfg.seed}')
    out_dir = Path(out_dir)
    checkpoint_path = out_dir / CHECKPOINT_NAME

    model, report = train(build_model(cfg), train_set, cfg.train_config(), checkpoint_path)
    save_checkpoint(model, cfg, checkpoint_path)
    write_loss_history(report.losses, out_dir / LOSS_NAME)
    print(
        f'{cfg.preset} (seed {cfg.seed}): {cfg.epochs} epochs in {report.wall_time:.1f}s, '
        f'final loss {report.final_loss}, checkpoint sha256 {file_digest(checkpoint_path)}',
    )
    return checkpoint_path


def add_arguments(parser: ArgumentParser):
    parser.add_argument('preset', help='Preset name, e.g. mass-spring/hnn')
    parser.add_argument('--data', help='Dataset directory written by GenerateDataset', required=True)
    parser.add_argument('--out', help='Output directory', required=True)
    add_experiment_args(parser)


def run(args: Namespace) -> int:
    return run_stage(lambda: main(args.preset, args.data, args.out, collect_overrides(args)))


def cli_main():
    """
    CLI entrypoint
    """
    parser = StageArgumentParser(description=__doc__)
    add_arguments(parser)
    sys.exit(run(parser.parse_args()))


if __name__ == '__main__':
    cli_main()
