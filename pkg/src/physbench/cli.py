"""
Shared command-line plumbing for the stage scripts, and the `physbench` entrypoint which dispatches to them

physbench generate | train | evaluate | benchmark | presets

Each stage is also installed as its own console script (GenerateDataset, TrainModel, ...).
Exit codes: 0 success, 1 usage or configuration error, 2 runtime or numeric failure.
"""

import sys
from argparse import ArgumentParser, Namespace
from collections.abc import Callable
from typing import Any, NoReturn

from pydantic import ValidationError

from physbench.config import ConfigError, load_overrides
from physbench.models import ContractError, ExperimentConfig, PhysbenchError
from physbench.presets import apply_overrides, get_preset
from physbench.static_values import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, get_logger

# CLI flags which override preset fields, flag dest -> ExperimentConfig field
FLAG_FIELDS = {
    'seed': 'seed',
    'epochs': 'epochs',
    'batch_size': 'batch_size',
    'learning_rate': 'learning_rate',
    'n_trajectories': 'n_trajectories',
}


class StageArgumentParser(ArgumentParser):
    """
    argparse exits with 2 on bad usage, this benchmark reserves 2 for runtime failures
    """

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f'{self.prog}: error: {message}\n')


def add_experiment_args(parser: ArgumentParser):
    """
    --config and the per-field override flags
    """
    parser.add_argument('--config', help='TOML file of key = value preset overrides', default=None)
    parser.add_argument('--seed', type=int, help='Override the preset seed', default=None)
    parser.add_argument('--epochs', type=int, help='Override the number of training epochs', default=None)
    parser.add_argument('--batch-size', dest='batch_size', type=int, help='Override the batch size', default=None)
    parser.add_argument('--learning-rate', dest='learning_rate', type=float, help='Override the learning rate')
    parser.add_argument(
        '--n-trajectories',
        dest='n_trajectories',
        type=int,
        help='Override the number of generated trajectories',
        default=None,
    )


def collect_overrides(args: Namespace) -> dict[str, Any]:
    """
    file overrides, then CLI flags on top
    """
    overrides = load_overrides(getattr(args, 'config', None))
    for dest, field in FLAG_FIELDS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[field] = value
    return overrides


def resolve_experiment(preset: str, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    cfg = apply_overrides(get_preset(preset), overrides or {})
    get_logger().info(f'{cfg.preset}: effective seed {cfg.seed}')
    return cfg


def exit_code(error: BaseException) -> int:
    """
    usage and contract faults exit 1, numeric and IO faults exit 2
    """
    if isinstance(error, ContractError | ConfigError | ValidationError):
        return EXIT_USAGE
    return EXIT_RUNTIME


def run_stage(stage: Callable[[], Any]) -> int:
    """
    run a stage, logging any failure and translating it to an exit code
    """
    try:
        stage()
    except (PhysbenchError, ValidationError, OSError) as error:
        get_logger().error(f'{type(error).__name__}: {error}')
        return exit_code(error)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    # stage modules import cli for the shared helpers
    from physbench import DescribePresets, EvaluateModel, GenerateDataset, RunBenchmark, TrainModel

    stages = {
        'generate': GenerateDataset,
        'train': TrainModel,
        'evaluate': EvaluateModel,
        'benchmark': RunBenchmark,
        'presets': DescribePresets,
    }
    parser = StageArgumentParser(prog='physbench', description='Physics-informed network benchmark')
    subparsers = parser.add_subparsers(dest='command', required=True, parser_class=StageArgumentParser)
    for name, module in stages.items():
        module.add_arguments(subparsers.add_parser(name, help=module.__doc__.strip().splitlines()[0]))
    args = parser.parse_args(argv)
    return stages[args.command].run(args)


def cli_main():
    sys.exit(main())


if __name__ == '__main__':
    cli_main()
