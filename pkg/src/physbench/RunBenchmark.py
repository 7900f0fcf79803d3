#!/usr/bin/env python3

"""
Run generate, train and evaluate for every preset (or a filtered subset), then tabulate the metrics

one table per system with a row per model; written as summary.csv and summary.txt, and printed
each preset's artifacts sit in their own directory under the output root, alongside its run.json
"""

import sys
from argparse import ArgumentParser, Namespace
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Any

import pandas as pd
from pydantic import ValidationError
from tabulate import tabulate

from physbench import EvaluateModel, GenerateDataset, TrainModel
from physbench.cli import StageArgumentParser, add_experiment_args, collect_overrides, run_stage
from physbench.config import config_retrieve
from physbench.metrics import METRIC_KEYS
from physbench.models import BenchmarkRun, NumericError, PhysbenchError, UnsupportedSystemError
from physbench.presets import filter_presets, get_preset
from physbench.static_values import get_logger, get_worker_count
from physbench.utils import write_model
from physbench.version import __version__

SUMMARY_COLUMNS = ['preset', 'system', 'model', 'status', *METRIC_KEYS, 'n_points']


def run_preset(
    name: str,
    out_root: str | Path,
    overrides: dict[str, Any] | None = None,
    oracle: bool = False,
) -> BenchmarkRun:
    """
    the full pipeline for one preset; failures are recorded on the returned run rather than raised
    """
    preset_dir = Path(out_root) / name.replace('/', '_')
    data_dir, train_dir, eval_dir = preset_dir / 'data', preset_dir / 'train', preset_dir / 'eval'
    record = BenchmarkRun(preset=name, physbench_version=__version__)
    try:
        manifest = GenerateDataset.main(name, data_dir, overrides, workers=1)
        record.experiment = manifest.experiment
        record.artifacts['dataset'] = str(data_dir)
        if oracle:
            record.metrics = EvaluateModel.main(name, data_dir, eval_dir, oracle=True)
        else:
            checkpoint = TrainModel.main(name, data_dir, train_dir, overrides)
            record.checkpoint = str(checkpoint)
            record.artifacts['losses'] = str(train_dir / TrainModel.LOSS_NAME)
            record.metrics = EvaluateModel.main(name, data_dir, eval_dir, checkpoint)
        record.artifacts['metrics'] = str(eval_dir / 'metrics.json')
        record.artifacts['trajectories'] = str(eval_dir / 'trajectories')
    except UnsupportedSystemError as error:
        get_logger().warning(f'{name} skipped: {error}')
        record.status = 'unsupported'
        record.error = str(error)
    except (PhysbenchError, ValidationError, OSError) as error:
        get_logger().error(f'{name} failed: {type(error).__name__}: {error}')
        record.status = 'failed'
        record.error = f'{type(error).__name__}: {error}'
    write_model(record, preset_dir / 'run.json')
    return record


def summary_frame(runs: list[BenchmarkRun]) -> pd.DataFrame:
    rows = []
    for record in runs:
        cfg = record.experiment or get_preset(record.preset)
        row = {'preset': record.preset, 'system': cfg.system.tag.value, 'model': cfg.model.value}
        row['status'] = record.status
        if record.metrics is not None:
            row.update({key: getattr(record.metrics, key) for key in [*METRIC_KEYS, 'n_points']})
        rows.append(row)
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def summary_tables(frame: pd.DataFrame) -> str:
    """
    one aligned table per system, rows are models and columns the five metrics
    """
    blocks = []
    for system, group in frame.groupby('system', sort=False):
        table = group[['model', *METRIC_KEYS, 'status']].rename(columns=str.upper)
        rendered = tabulate(table, headers='keys', tablefmt='github', floatfmt='.4g', showindex=False)
        blocks.append(f'{system}\n{rendered}')
    return '\n\n'.join(blocks) + '\n'


def main(
    out_dir: str | Path,
    system: str | None = None,
    model: str | None = None,
    overrides: dict[str, Any] | None = None,
    workers: int | None = None,
    oracle: bool = False,
) -> list[BenchmarkRun]:
    """
    run the selected presets, in parallel worker processes when workers > 1

    Args:
        out_dir (str): output root
        system (str): only presets of this system tag
        model (str): only presets of this model kind
        overrides (dict): applied to every preset
        workers (int): processes across presets, defaults to config/env
        oracle (bool): evaluate the analytic models instead of training
    """
    names = filter_presets(system, model)
    if workers is None:
        workers = get_worker_count(config_retrieve(['benchmark', 'workers'], 1))
    out_dir = Path(out_dir)
    get_logger().info(f'Benchmarking {len(names)} presets with {workers} workers: {", ".join(names)}')

    job = partial(run_preset, out_root=out_dir, overrides=overrides, oracle=oracle)
    if workers > 1 and len(names) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            runs = list(executor.map(job, names))
    else:
        runs = [job(name) for name in names]

    frame = summary_frame(runs)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_dir / 'summary.csv', index=False)
    text = summary_tables(frame)
    (out_dir / 'summary.txt').write_text(text, encoding='utf-8')
    print(text)

    failed = [record.preset for record in runs if record.status == 'failed']
    if failed:
        raise NumericError(f'{len(failed)} of {len(runs)} presets failed: {", ".join(failed)}')
    return runs


def add_arguments(parser: ArgumentParser):
    parser.add_argument('--out', help='Output root directory', required=True)
    parser.add_argument('--system', help='Only run presets for this system, e.g. mass-spring', default=None)
    parser.add_argument('--model', help='Only run presets for this model: hnn, lnn or srnn', default=None)
    parser.add_argument('--workers', type=int, help='Presets run in parallel', default=None)
    parser.add_argument('--oracle', action='store_true', help='Evaluate analytic models, skipping training')
    add_experiment_args(parser)


def run(args: Namespace) -> int:
    return run_stage(
        lambda: main(args.out, args.system, args.model, collect_overrides(args), args.workers, args.oracle),
    )


def cli_main():
    """
    CLI entrypoint
    """
    parser = StageArgumentParser(description=__doc__)
    add_arguments(parser)
    sys.exit(run(parser.parse_args()))


if __name__ == '__main__':
    cli_main()
