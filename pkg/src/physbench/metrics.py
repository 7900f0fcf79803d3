"""
Error statistics between predicted and ground-truth trajectories, and energy drift diagnostics

Residuals are pooled over every time point and state component; variance is the population variance.
"""

from collections.abc import Sequence
from pathlib import Path

import numpy as np
import pandas as pd

from physbench.diff_engine import ScalarField, mlp_forward
from physbench.integrators import Trajectory
from physbench.models import ContractError, MetricsReport, SystemSpec, SystemTag, UnsupportedSystemError
from physbench.systems import hamiltonian, phase_dim
from physbench.utils import write_model

METRIC_KEYS = ('mse', 'mae', 'rmse', 'std', 'var')


def residual_statistics(residuals) -> dict[str, float]:
    """
    the five summary statistics of a flat residual vector
    """
    flat = np.ravel(np.asarray(residuals, dtype=np.float64))
    if flat.size == 0:
        raise ContractError('No residuals to summarise')
    mse = float(np.mean(flat * flat))
    var = float(np.var(flat))
    return {
        'mse': mse,
        'mae': float(np.mean(np.abs(flat))),
        'rmse': float(np.sqrt(mse)),
        'std': float(np.sqrt(var)),
        'var': var,
    }


def _residuals(pred: Trajectory, truth: Trajectory) -> np.ndarray:
    if pred.states.shape != truth.states.shape:
        raise ContractError(f'Predicted states {pred.states.shape} do not match ground truth {truth.states.shape}')
    if not np.allclose(pred.times, truth.times, rtol=1e-9, atol=1e-12):
        raise ContractError('Predicted and ground-truth trajectories are on different time grids')
    return pred.states - truth.states


def trajectory_metrics(pred: Trajectory, truth: Trajectory, names: Sequence[str] | None = None) -> MetricsReport:
    """
    statistics of flatten(pred - truth)

    Args:
        pred (Trajectory): rollout of a model
        truth (Trajectory): ground truth on the same grid
        names (list[str]): state component names for the per-component breakdown
    """
    return pooled_metrics([(pred, truth)], names)


def pooled_metrics(
    pairs: Sequence[tuple[Trajectory, Trajectory]],
    names: Sequence[str] | None = None,
    preset: str = '',
    system: str = '',
    model: str = '',
) -> MetricsReport:
    """
    one report over the residuals of several (pred, truth) pairs, with a per-component breakdown
    """
    if not pairs:
        raise ContractError('No trajectories to compare')
    residuals = np.concatenate([_residuals(pred, truth) for pred, truth in pairs], axis=0)
    names = list(names) if names is not None else [f's{i}' for i in range(residuals.shape[1])]
    if len(names) != residuals.shape[1]:
        raise ContractError(f'{len(names)} component names for {residuals.shape[1]} state components')
    per_component = {name: residual_statistics(residuals[:, i]) for i, name in enumerate(names)}
    return MetricsReport(
        preset=preset,
        system=system,
        model=model,
        n_points=int(residuals.size),
        per_component=per_component,
        **residual_statistics(residuals),
    )


def _relative_drift(energies: np.ndarray) -> tuple[float, np.ndarray]:
    energies = np.atleast_1d(np.asarray(energies, dtype=np.float64))
    series = np.abs(energies - energies[0]) / max(abs(energies[0]), 1.0)
    return float(np.max(series)), series


def energy_drift(system: SystemSpec, trajectory: Trajectory) -> tuple[float, np.ndarray]:
    """
    max_t |H(t) - H(0)| / max(|H(0)|, 1) of the analytic H along a Hamiltonian-convention trajectory

    Returns:
        the maximum relative drift and the per-time series
    """
    if system.tag == SystemTag.BOUNCING_BALL:
        raise UnsupportedSystemError('The bouncing ball loses energy at each contact, drift is not defined')
    if trajectory.states.shape[1] != phase_dim(system):
        raise ContractError(f'{system.tag.value} states need {phase_dim(system)} components')
    return _relative_drift(hamiltonian(system, trajectory.states))


def learned_energy_drift(field: ScalarField, trajectory: Trajectory) -> tuple[float, np.ndarray]:
    """
    the same drift measure for a learned H along a trajectory, normally the model's own rollout
    """
    return _relative_drift(mlp_forward(field, trajectory.states))


def write_metrics(report: MetricsReport, out_dir: str | Path) -> dict[str, Path]:
    """
    metrics.json (flat, no per-component block) and metrics_by_component.csv
    """
    out_dir = Path(out_dir)
    paths = {'metrics': write_model(report, out_dir / 'metrics.json')}
    rows = [{'component': name, **stats} for name, stats in report.per_component.items()]
    frame = pd.DataFrame(rows, columns=['component', *METRIC_KEYS])
    paths['metrics_by_component'] = out_dir / 'metrics_by_component.csv'
    frame.to_csv(paths['metrics_by_component'], index=False)
    return paths
