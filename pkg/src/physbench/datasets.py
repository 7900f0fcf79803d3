"""
Seeded generation of derivative datasets (HNN/LNN) and sequence datasets (SRNN),
trajectory-level train/test splitting, and CSV + manifest serialisation
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np
import pandas as pd

from physbench.integrators import Trajectory, integrate_with_contact, rk45_integrate
from physbench.models import (
    CheckpointError,
    ContractError,
    Convention,
    DatasetManifest,
    ExperimentConfig,
    IntegratorConfig,
    ModelKind,
    PhysbenchError,
    SamplerKind,
    SystemSpec,
    SystemTag,
)
from physbench.static_values import TRUTH_ATOL, TRUTH_RTOL, get_logger
from physbench.systems import (
    hamiltonian_eom,
    label_names,
    lagrangian_accel,
    lagrangian_vector_field,
    phase_dim,
    state_names,
)
from physbench.utils import child_seeds, make_rng, read_json_from_path, write_model

TRAIN_STREAM = 0
TEST_STREAM = 1

MANIFEST_NAME = 'manifest.json'


@dataclass(frozen=True, eq=False)
class DerivativeDataset:
    """
    states with their time derivatives (HNN) or accelerations (LNN), rows grouped by trajectory
    """

    experiment: ExperimentConfig
    times: np.ndarray
    inputs: np.ndarray
    labels: np.ndarray
    trajectory_index: np.ndarray

    def __post_init__(self):
        rows = len(self.inputs)
        if not len(self.times) == len(self.labels) == len(self.trajectory_index) == rows:
            raise ContractError('Inputs, labels, times and trajectory indices need equal row counts')

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def n_trajectories(self) -> int:
        return len(np.unique(self.trajectory_index))

    @property
    def n_samples(self) -> int:
        return len(self.inputs)

    def trajectories(self) -> list[Trajectory]:
        """
        the ground truth trajectories the rows were sampled from, in index order
        """
        return [
            Trajectory(self.times[self.trajectory_index == index], self.inputs[self.trajectory_index == index])
            for index in np.unique(self.trajectory_index)
        ]

    def select(self, indices: list[int]) -> 'DerivativeDataset':
        """
        the rows of the chosen trajectories, renumbered 0..k-1 in the order given
        """
        parts = [np.flatnonzero(self.trajectory_index == index) for index in indices]
        rows = np.concatenate(parts) if parts else np.array([], dtype=int)
        renumbered = np.concatenate([np.full(len(part), i) for i, part in enumerate(parts)]) if parts else rows
        return DerivativeDataset(
            self.experiment,
            self.times[rows],
            self.inputs[rows],
            self.labels[rows],
            renumbered.astype(int),
        )


@dataclass(frozen=True, eq=False)
class SequenceDataset:
    """
    whole trajectories on a common uniform grid
    """

    experiment: ExperimentConfig
    trajectories: list[Trajectory] = field(default_factory=list)

    def __post_init__(self):
        lengths = {len(trajectory) for trajectory in self.trajectories}
        if len(lengths) > 1:
            raise ContractError(f'Sequence trajectories must share a length, got {sorted(lengths)}')
        for trajectory in self.trajectories:
            if len(trajectory) > 1:
                trajectory.uniform_step()

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def n_trajectories(self) -> int:
        return len(self.trajectories)

    @property
    def n_samples(self) -> int:
        return sum(len(trajectory) for trajectory in self.trajectories)

    def select(self, indices: list[int]) -> 'SequenceDataset':
        return SequenceDataset(self.experiment, [self.trajectories[index] for index in indices])


Dataset = DerivativeDataset | SequenceDataset


def derivative_grid(cfg: ExperimentConfig) -> np.ndarray:
    """
    n uniformly spaced sample times starting at t0, n from samples_per_trajectory or span * timescale
    """
    t0, t1 = cfg.t_span
    span = t1 - t0
    n = cfg.samples_per_trajectory or int(round(span * cfg.timescale))
    if n < 1:
        raise ContractError(f'{cfg.preset}: derivative grid has no samples')
    return t0 + np.arange(n) * (span / n)


def sequence_grid(t_span: tuple[float, float], dt: float) -> np.ndarray:
    """
    floor(span / dt) + 1 points t0 + k dt
    """
    t0, t1 = t_span
    n = int(np.floor((t1 - t0) / dt + 1e-9)) + 1
    return t0 + np.arange(n) * dt


def _orbit_state(cfg: ExperimentConfig, rng: np.random.Generator) -> np.ndarray:
    """
    three bodies on an equilateral triangle with tangential, near-circular-orbit velocities
    """
    system, sampler = cfg.system, cfg.sampler
    d = system.dimensions
    masses = np.array([system.m1, system.m2, system.m3])
    radius = rng.uniform(*sampler.orbit_radius)
    phase = rng.uniform(0.0, 2 * np.pi)
    speed = np.sqrt(system.G * masses.mean() / (np.sqrt(3.0) * radius))
    positions = np.zeros((3, d))
    velocities = np.zeros((3, d))
    for body in range(3):
        angle = phase + 2 * np.pi * body / 3
        positions[body, :2] = radius * np.cos(angle), radius * np.sin(angle)
        scale = speed * rng.uniform(1 - sampler.orbit_noise, 1 + sampler.orbit_noise)
        velocities[body, :2] = -scale * np.sin(angle), scale * np.cos(angle)
    second = velocities * masses[:, None] if cfg.convention == Convention.HAMILTONIAN else velocities
    return np.concatenate([positions.ravel(), second.ravel()])


def sample_initial_condition(cfg: ExperimentConfig, rng: np.random.Generator) -> np.ndarray:
    """
    one initial state drawn according to the experiment's sampler

    Args:
        cfg (ExperimentConfig): supplies the system, convention and sampler
        rng (np.random.Generator): seeded generator

    Returns:
        a phase state in the experiment's convention
    """
    if cfg.sampler.kind == SamplerKind.ORBIT:
        if cfg.system.tag != SystemTag.THREE_BODY:
            raise ContractError('The orbit sampler only applies to three-body')
        return _orbit_state(cfg, rng)

    dim = phase_dim(cfg.system)
    if len(cfg.sampler.low) != dim:
        raise ContractError(f'{cfg.preset}: sampler bounds have {len(cfg.sampler.low)} entries, expected {dim}')
    return rng.uniform(np.array(cfg.sampler.low), np.array(cfg.sampler.high))


def simulate(system: SystemSpec, convention: Convention, y0: np.ndarray, times: np.ndarray, dt: float) -> Trajectory:
    """
    ground truth trajectory on a uniform grid: RK45 at tight tolerances, or Euler with contact for the bouncing ball
    """
    if convention == Convention.HAMILTONIAN:

        def derivative(_t, y):
            return hamiltonian_eom(system, y)

    else:

        def derivative(_t, y):
            return lagrangian_vector_field(system, y)

    if system.tag == SystemTag.BOUNCING_BALL:
        return integrate_with_contact(derivative, y0, dt, len(times) - 1, rho=system.rho, t0=float(times[0]))
    return rk45_integrate(derivative, y0, times, IntegratorConfig(rtol=TRUTH_RTOL, atol=TRUTH_ATOL))


def label_states(cfg: ExperimentConfig, states: np.ndarray) -> np.ndarray:
    """
    analytic labels, evaluated one row at a time so each equals the single-state call exactly
    """
    label = hamiltonian_eom if cfg.convention == Convention.HAMILTONIAN else lagrangian_accel
    return np.stack([np.atleast_1d(label(cfg.system, row)) for row in states])


def _derivative_trajectory(cfg: ExperimentConfig, job: tuple[int, np.random.SeedSequence]):
    index, seed = job
    try:
        y0 = sample_initial_condition(cfg, make_rng(seed))
        times = derivative_grid(cfg)
        dt = (cfg.t_span[1] - cfg.t_span[0]) / len(times)
        trajectory = simulate(cfg.system, cfg.convention, y0, times, dt)
        return trajectory.times, trajectory.states, label_states(cfg, trajectory.states)
    except PhysbenchError as error:
        raise type(error)(f'trajectory {index}: {error}') from error


def _sequence_trajectory(cfg: ExperimentConfig, t_span: tuple[float, float], job: tuple[int, np.random.SeedSequence]):
    index, seed = job
    try:
        y0 = sample_initial_condition(cfg, make_rng(seed))
        times = sequence_grid(t_span, cfg.dt)
        return simulate(cfg.system, cfg.convention, y0, times, cfg.dt)
    except PhysbenchError as error:
        raise type(error)(f'trajectory {index}: {error}') from error


def _run_jobs(worker, jobs: list, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(worker, jobs))
    return [worker(job) for job in jobs]


def generate_derivative_dataset(cfg: ExperimentConfig, workers: int = 1) -> DerivativeDataset:
    """
    integrate n_trajectories ground truth trajectories and label every grid state with its analytic derivative

    Args:
        cfg (ExperimentConfig): an HNN or LNN experiment
        workers (int): processes used across trajectories, results don't depend on it

    Returns:
        n_trajectories x samples-per-trajectory labelled rows
    """
    if cfg.model == ModelKind.SRNN:
        raise ContractError(f'{cfg.preset}: derivative datasets are for HNN and LNN experiments')
    jobs = list(enumerate(child_seeds(cfg.seed, cfg.n_trajectories, TRAIN_STREAM)))
    results = _run_jobs(partial(_derivative_trajectory, cfg), jobs, workers)
    dataset = DerivativeDataset(
        cfg,
        np.concatenate([times for times, _, _ in results]),
        np.concatenate([states for _, states, _ in results]),
        np.concatenate([labels for _, _, labels in results]),
        np.concatenate([np.full(len(times), index) for index, (times, _, _) in enumerate(results)]),
    )
    get_logger().info(f'{cfg.preset}: generated {dataset.n_samples} samples from {cfg.n_trajectories} trajectories')
    return dataset


def generate_sequence_dataset(cfg: ExperimentConfig, workers: int = 1, test: bool = False) -> SequenceDataset:
    """
    ground truth trajectories on a fixed dt grid; the bouncing ball applies contact at the system's restitution

    Args:
        cfg (ExperimentConfig): an SRNN experiment
        workers (int): processes used across trajectories
        test (bool): generate the separate test set (test_trajectories over test_t_span) from its own seed stream
    """
    if cfg.model != ModelKind.SRNN:
        raise ContractError(f'{cfg.preset}: sequence datasets are for SRNN experiments')
    if test:
        count = cfg.test_trajectories or cfg.n_trajectories
        t_span = cfg.test_t_span or cfg.t_span
        stream = TEST_STREAM
    else:
        count, t_span, stream = cfg.n_trajectories, cfg.t_span, TRAIN_STREAM
    jobs = list(enumerate(child_seeds(cfg.seed, count, stream)))
    trajectories = _run_jobs(partial(_sequence_trajectory, cfg, t_span), jobs, workers)
    dataset = SequenceDataset(cfg, trajectories)
    label = 'test' if test else 'train'
    get_logger().info(f'{cfg.preset}: generated {len(dataset)} {label} trajectories of {len(trajectories[0])} points')
    return dataset


def train_test_split(dataset: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """
    assign whole trajectories to train or test with a seeded shuffle

    Args:
        dataset (Dataset): derivative or sequence dataset with at least 2 trajectories
        ratio (float): fraction of trajectories for training, rounded to the nearest trajectory
        seed (int): shuffle seed

    Returns:
        (train, test), trajectories keep their original relative order
    """
    if not 0 < ratio < 1:
        raise ContractError(f'Split ratio must be in (0, 1), got {ratio}')
    n = dataset.n_trajectories
    if n < 2:
        raise ContractError(f'Splitting needs at least 2 trajectories, got {n}')
    n_train = min(max(int(round(ratio * n)), 1), n - 1)
    order = make_rng(seed).permutation(n)
    train_ids = sorted(int(i) for i in order[:n_train])
    test_ids = sorted(int(i) for i in order[n_train:])
    return dataset.select(train_ids), dataset.select(test_ids)


def generate_datasets(cfg: ExperimentConfig, workers: int = 1) -> tuple[Dataset, Dataset]:
    """
    the train and test datasets of one experiment, using a separate test set when the experiment names one
    """
    if cfg.model == ModelKind.SRNN:
        if cfg.test_trajectories is not None:
            return generate_sequence_dataset(cfg, workers), generate_sequence_dataset(cfg, workers, test=True)
        return train_test_split(generate_sequence_dataset(cfg, workers), cfg.split_ratio, cfg.seed)
    return train_test_split(generate_derivative_dataset(cfg, workers), cfg.split_ratio, cfg.seed)


def _dataset_frame(dataset: Dataset) -> pd.DataFrame:
    cfg = dataset.experiment
    names = state_names(cfg.system, cfg.convention)
    if isinstance(dataset, DerivativeDataset):
        frame = pd.DataFrame(dataset.inputs, columns=names)
        labels = pd.DataFrame(dataset.labels, columns=label_names(cfg.system, cfg.convention))
        frame = pd.concat([frame, labels], axis=1)
        frame.insert(0, 't', dataset.times)
        return frame
    frames = []
    for trajectory in dataset.trajectories:
        frame = pd.DataFrame(trajectory.states, columns=names)
        frame.insert(0, 't', trajectory.times)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def write_dataset(train: Dataset, test: Dataset, out_dir: str | Path) -> DatasetManifest:
    """
    write train.csv, test.csv and the manifest carrying the full experiment config

    CSV columns: t, the state components, then the labels (derivative datasets only)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = train.experiment
    files = {'train': 'train.csv', 'test': 'test.csv'}
    for split, dataset in [('train', train), ('test', test)]:
        _dataset_frame(dataset).to_csv(out_dir / files[split], index=False)

    derivative = isinstance(train, DerivativeDataset)
    manifest = DatasetManifest(
        preset=cfg.preset,
        kind='derivative' if derivative else 'sequence',
        experiment=cfg,
        state_names=state_names(cfg.system, cfg.convention),
        label_names=label_names(cfg.system, cfg.convention) if derivative else [],
        n_train_trajectories=train.n_trajectories,
        n_test_trajectories=test.n_trajectories,
        n_train_samples=train.n_samples,
        n_test_samples=test.n_samples,
        files=files,
    )
    write_model(manifest, out_dir / MANIFEST_NAME)
    get_logger().info(f'Wrote dataset for {cfg.preset} to {out_dir}')
    return manifest


def _split_on_time_resets(times: np.ndarray) -> list[np.ndarray]:
    starts = np.concatenate([[0], np.flatnonzero(np.diff(times) <= 0) + 1, [len(times)]])
    return [np.arange(start, stop) for start, stop in zip(starts[:-1], starts[1:])]


def _read_split(manifest: DatasetManifest, path: Path) -> Dataset:
    frame = pd.read_csv(path, float_precision='round_trip')
    expected = ['t', *manifest.state_names, *manifest.label_names]
    if list(frame.columns) != expected:
        raise CheckpointError(f'{path} columns {list(frame.columns)} do not match the manifest {expected}')
    times = frame['t'].to_numpy(dtype=np.float64)
    states = frame[manifest.state_names].to_numpy(dtype=np.float64)
    groups = _split_on_time_resets(times)
    if manifest.kind == 'derivative':
        labels = frame[manifest.label_names].to_numpy(dtype=np.float64)
        index = np.concatenate([np.full(len(rows), i) for i, rows in enumerate(groups)])
        return DerivativeDataset(manifest.experiment, times, states, labels, index.astype(int))
    return SequenceDataset(manifest.experiment, [Trajectory(times[rows], states[rows]) for rows in groups])


def read_dataset(data_dir: str | Path) -> tuple[DatasetManifest, Dataset, Dataset]:
    """
    read a directory written by write_dataset
    """
    data_dir = Path(data_dir)
    try:
        manifest = read_json_from_path(data_dir / MANIFEST_NAME, return_model=DatasetManifest)
    except ValueError as error:
        raise CheckpointError(f'Malformed dataset manifest in {data_dir}: {error}') from error
    if manifest is None:
        raise CheckpointError(f'No dataset manifest found in {data_dir}')
    train = _read_split(manifest, data_dir / manifest.files['train'])
    test = _read_split(manifest, data_dir / manifest.files['test'])
    return manifest, train, test
