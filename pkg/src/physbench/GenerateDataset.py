#!/usr/bin/env python3

"""
Generate the train and test datasets of one preset

writes train.csv, test.csv and manifest.json into the output directory
"""

import sys
from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Any

from physbench.cli import StageArgumentParser, add_experiment_args, collect_overrides, resolve_experiment, run_stage
from physbench.config import config_retrieve
from physbench.datasets import generate_datasets, write_dataset
from physbench.models import DatasetManifest
from physbench.static_values import get_worker_count


def main(
    preset: str,
    out_dir: str | Path,
    overrides: dict[str, Any] | None = None,
    workers: int | None = None,
) -> DatasetManifest:
    """
    generate and write one preset's datasets

    Args:
        preset (str): e.g. mass-spring/hnn
        out_dir (str): directory for the CSVs and manifest
        overrides (dict): preset fields to replace
        workers (int): processes for trajectory generation, defaults to config/env
    """
    cfg = resolve_experiment(preset, overrides)
    if workers is None:
        workers = get_worker_count(config_retrieve(['benchmark', 'workers'], 1))
    train, test = generate_datasets(cfg, workers=workers)
    manifest = write_dataset(train, test, out_dir)
    print(
        f'{cfg.preset} (seed {cfg.seed}): {manifest.n_train_samples} train / {manifest.n_test_samples} test samples '
        f'from {manifest.n_train_trajectories} / {manifest.n_test_trajectories} trajectories',
    )
    return manifest


def add_arguments(parser: ArgumentParser):
    parser.add_argument('preset', help='Preset name, e.g. mass-spring/hnn')
    parser.add_argument('--out', help='Output directory', required=True)
    parser.add_argument('--workers', type=int, help='Worker processes', default=None)
    add_experiment_args(parser)


def run(args: Namespace) -> int:
    return run_stage(lambda: main(args.preset, args.out, collect_overrides(args), args.workers))


def cli_main():
    """
    CLI entrypoint
    """
    parser = StageArgumentParser(description=__doc__)
    add_arguments(parser)
    sys.exit(run(parser.parse_args()))


if __name__ == '__main__':
    cli_main()
