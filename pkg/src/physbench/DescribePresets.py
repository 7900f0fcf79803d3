#!/usr/bin/env python3

"""
List the built-in presets, or dump one preset's full configuration

--dump prints the effective ExperimentConfig as JSON, followed by the hyperparameters as originally stated
"""

import sys
from argparse import ArgumentParser, Namespace

from tabulate import tabulate

from physbench.cli import StageArgumentParser, run_stage
from physbench.presets import get_preset, load_presets


def preset_table() -> str:
    rows = []
    for name, cfg in load_presets().items():
        data = f'{cfg.n_trajectories} traj, t in [{cfg.t_span[0]:g}, {cfg.t_span[1]:g}]'
        if cfg.dt is not None:
            data += f', dt {cfg.dt:g}'
        rows.append(
            [
                name,
                data,
                'x'.join(str(width) for width in cfg.hidden_layers),
                cfg.epochs,
                cfg.batch_size,
                cfg.learning_rate,
            ],
        )
    return tabulate(rows, headers=['preset', 'data', 'hidden', 'epochs', 'batch', 'lr'], tablefmt='simple')


def main(dump: str | None = None) -> str:
    """
    the text printed: a table of every preset, or one preset's config and stated hyperparameters
    """
    if dump is None:
        text = preset_table()
    else:
        cfg = get_preset(dump)
        text = f'{cfg.model_dump_json(indent=2)}\n\nstated: {cfg.stated}'
    print(text)
    return text


def add_arguments(parser: ArgumentParser):
    parser.add_argument('--dump', help='Preset name to print in full', default=None)


def run(args: Namespace) -> int:
    return run_stage(lambda: main(args.dump))


def cli_main():
    """
    CLI entrypoint
    """
    parser = StageArgumentParser(description=__doc__)
    add_arguments(parser)
    sys.exit(run(parser.parse_args()))


if __name__ == '__main__':
    cli_main()
