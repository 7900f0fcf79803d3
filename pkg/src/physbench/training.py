"""
Minibatch training of HNN, LNN and SRNN models, plus checkpoint and loss-history IO

HNN and LNN batches are shuffled rows of a derivative dataset. SRNN batches are windows of
srnn_horizon + 1 consecutive states, one randomly placed window per trajectory per epoch.
"""

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from physbench.datasets import Dataset, DerivativeDataset, SequenceDataset
from physbench.diff_engine import Graph, MlpParams, Node
from physbench.learned_models import (
    HnnModel,
    LearnedModel,
    LnnModel,
    SrnnModel,
    hnn_loss_node,
    lnn_loss_node,
    srnn_window_loss_node,
)
from physbench.models import (
    Checkpoint,
    CheckpointError,
    ContractError,
    ExperimentConfig,
    ModelKind,
    NetworkRecord,
    NumericError,
    OptimizerKind,
    SystemTag,
    TrainConfig,
)
from physbench.static_values import get_logger
from physbench.utils import chunks, file_digest, make_rng, read_json_from_path, write_model


@dataclass
class TrainReport:
    losses: np.ndarray
    networks: dict[str, MlpParams]
    wall_time: float
    seed: int
    checkpoints: list[Path] = field(default_factory=list)

    @property
    def final_loss(self) -> float | None:
        return float(self.losses[-1]) if len(self.losses) else None


class Optimiser:
    """
    Adam, or plain gradient descent, over a flat list of parameter arrays
    """

    def __init__(self, cfg: TrainConfig, arrays: list[np.ndarray]):
        self.cfg = cfg
        self.step_count = 0
        self.first_moment = [np.zeros_like(array) for array in arrays]
        self.second_moment = [np.zeros_like(array) for array in arrays]

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        """
        one update, returns new arrays and leaves the inputs untouched
        """
        if len(arrays) != len(grads):
            raise ContractError(f'{len(arrays)} parameter arrays but {len(grads)} gradients')
        rate = self.cfg.learning_rate
        if self.cfg.optimizer == OptimizerKind.SGD:
            return [array - rate * grad for array, grad in zip(arrays, grads)]

        self.step_count += 1
        beta1, beta2 = self.cfg.beta1, self.cfg.beta2
        first_correction = 1.0 - beta1**self.step_count
        second_correction = 1.0 - beta2**self.step_count
        updated = []
        for i, (array, grad) in enumerate(zip(arrays, grads)):
            self.first_moment[i] = beta1 * self.first_moment[i] + (1.0 - beta1) * grad
            self.second_moment[i] = beta2 * self.second_moment[i] + (1.0 - beta2) * grad * grad
            m_hat = self.first_moment[i] / first_correction
            v_hat = self.second_moment[i] / second_correction
            updated.append(array - rate * m_hat / (np.sqrt(v_hat) + self.cfg.eps))
        return updated


def _trainable_networks(model: LearnedModel) -> dict[str, MlpParams]:
    networks = model.networks()
    for name, network in networks.items():
        if not isinstance(network, MlpParams):
            raise ContractError(f'{name} is not a trainable network')
    return networks


def _flatten(networks: dict[str, MlpParams]) -> list[np.ndarray]:
    return [array for name in sorted(networks) for array in networks[name].arrays()]


def _unflatten(networks: dict[str, MlpParams], arrays: list[np.ndarray]) -> dict[str, MlpParams]:
    out = {}
    offset = 0
    for name in sorted(networks):
        count = len(networks[name].arrays())
        out[name] = MlpParams.from_arrays(networks[name].spec, arrays[offset : offset + count])
        offset += count
    return out


def _check_dataset(model: LearnedModel, dataset: Dataset):
    if len(dataset) == 0:
        raise ContractError('Cannot train on an empty dataset')
    if isinstance(model, SrnnModel):
        if not isinstance(dataset, SequenceDataset):
            raise ContractError('SRNN models train on sequence datasets')
        width = dataset.trajectories[0].states.shape[1]
        if width != 2 * model.k_net.input_dim:
            raise ContractError(f'Sequence states have {width} components, model expects {2 * model.k_net.input_dim}')
        if len(dataset.trajectories[0]) < 2:
            raise ContractError('SRNN training needs trajectories of at least 2 points')
        return
    if not isinstance(dataset, DerivativeDataset):
        raise ContractError(f'{model.kind.value.upper()} models train on derivative datasets')
    if dataset.inputs.shape[1] != model.net.input_dim:
        width = dataset.inputs.shape[1]
        raise ContractError(f'Dataset states have {width} components, model expects {model.net.input_dim}')


def _training_restitution(dataset: Dataset) -> float | None:
    system = dataset.experiment.system
    return system.rho if system.tag == SystemTag.BOUNCING_BALL else None


def _batches(model: LearnedModel, dataset: Dataset, cfg: TrainConfig, rng: np.random.Generator) -> list:
    """
    one epoch of minibatches: (states, labels) row blocks, or (B, L, n) window stacks for SRNN
    """
    if isinstance(dataset, DerivativeDataset):
        order = rng.permutation(len(dataset))
        return [(dataset.inputs[rows], dataset.labels[rows]) for rows in chunks(order, cfg.batch_size)]

    length = min(cfg.srnn_horizon + 1, len(dataset.trajectories[0]))
    windows = []
    for trajectory in dataset.trajectories:
        start = int(rng.integers(0, len(trajectory) - length + 1))
        windows.append(trajectory.states[start : start + length])
    windows = np.stack(windows)[rng.permutation(len(windows))]
    return list(chunks(windows, cfg.batch_size))


def _batch_loss(graph: Graph, model: LearnedModel, networks: dict[str, MlpParams], batch, dt, restitution):
    bounds = {name: network.bind(graph) for name, network in networks.items()}
    if isinstance(model, HnnModel):
        loss = hnn_loss_node(graph, bounds['hamiltonian'], *batch)
    elif isinstance(model, LnnModel):
        loss = lnn_loss_node(graph, bounds['lagrangian'], *batch)
    else:
        loss = srnn_window_loss_node(graph, bounds['kinetic'], bounds['potential'], batch, dt, restitution)
    parameters: list[Node] = [node for name in sorted(bounds) for node in bounds[name].parameters]
    return loss, parameters


def train(
    model: LearnedModel,
    dataset: Dataset,
    cfg: TrainConfig,
    checkpoint_path: str | Path | None = None,
) -> tuple[LearnedModel, TrainReport]:
    """
    train for exactly cfg.epochs epochs

    Args:
        model (LearnedModel): initial model, its networks must be MlpParams
        dataset (Dataset): derivative dataset for HNN/LNN, sequence dataset for SRNN
        cfg (TrainConfig): optimiser settings and the shuffle seed
        checkpoint_path (Path | None): written every cfg.checkpoint_every epochs when both are set

    Returns:
        the trained model and the report holding the per-epoch mean loss
    """
    _check_dataset(model, dataset)
    networks = _trainable_networks(model)
    optimiser = Optimiser(cfg, _flatten(networks))
    rng = make_rng(cfg.seed)
    dt = dataset.trajectories[0].uniform_step() if isinstance(dataset, SequenceDataset) else None
    restitution = _training_restitution(dataset)
    logger = get_logger()
    logger.info(f'Training {model.kind.value} for {cfg.epochs} epochs, batch {cfg.batch_size}, seed {cfg.seed}')

    losses = []
    saved = []
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        batch_losses = []
        for batch_number, batch in enumerate(_batches(model, dataset, cfg, rng)):
            try:
                graph = Graph()
                loss, parameters = _batch_loss(graph, model, networks, batch, dt, restitution)
                loss_value = float(loss.value)
                if not np.isfinite(loss_value):
                    raise NumericError(f'loss is {loss_value}')
                grads = [grad.value for grad in graph.gradient(loss, parameters)]
                networks = _unflatten(networks, optimiser.step(_flatten(networks), grads))
            except NumericError as error:
                raise NumericError(f'Training failed at epoch {epoch}, batch {batch_number}: {error}') from error
            batch_losses.append(loss_value)

        losses.append(float(np.mean(batch_losses)))
        if (epoch + 1) % cfg.log_every == 0 or epoch == cfg.epochs - 1:
            logger.info(f'epoch {epoch + 1}/{cfg.epochs}: mean loss {losses[-1]:.6g}')
        if checkpoint_path and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            saved.append(save_checkpoint(model.with_networks(networks), dataset.experiment, checkpoint_path, cfg.seed))

    report = TrainReport(
        losses=np.array(losses, dtype=np.float64),
        networks=networks,
        wall_time=time.perf_counter() - start,
        seed=cfg.seed,
        checkpoints=saved,
    )
    return model.with_networks(networks), report


def save_checkpoint(
    model: LearnedModel,
    experiment: ExperimentConfig,
    path: str | Path,
    seed: int | None = None,
) -> Path:
    """
    write the model's networks with the experiment that produced them
    """
    records = {
        name: NetworkRecord(
            spec=network.spec,
            weights=[weight.tolist() for weight in network.weights],
            biases=[bias.tolist() for bias in network.biases],
        )
        for name, network in _trainable_networks(model).items()
    }
    checkpoint = Checkpoint(
        model=model.kind,
        networks=records,
        experiment=experiment,
        seed=experiment.seed if seed is None else seed,
    )
    path = write_model(checkpoint, path)
    get_logger().info(f'Wrote checkpoint {path} (sha256 {file_digest(path)})')
    return path


def read_checkpoint(path: str | Path) -> Checkpoint:
    """
    the checkpoint document, CheckpointError when missing or malformed
    """
    try:
        checkpoint = read_json_from_path(path, return_model=Checkpoint)
    except ValueError as error:
        raise CheckpointError(f'Malformed checkpoint {path}: {error}') from error
    if checkpoint is None:
        raise CheckpointError(f'Checkpoint {path} not found')
    return checkpoint


def model_from_checkpoint(checkpoint: Checkpoint) -> LearnedModel:
    try:
        networks = {
            name: MlpParams.from_arrays(
                record.spec,
                [array for pair in zip(record.weights, record.biases) for array in pair],
            )
            for name, record in checkpoint.networks.items()
        }
        if checkpoint.model == ModelKind.HNN:
            return HnnModel(networks['hamiltonian'])
        if checkpoint.model == ModelKind.LNN:
            return LnnModel(networks['lagrangian'])
        return SrnnModel(networks['kinetic'], networks['potential'])
    except (KeyError, ValueError) as error:
        raise CheckpointError(f'Checkpoint networks are inconsistent: {error}') from error


def load_checkpoint(path: str | Path) -> LearnedModel:
    return model_from_checkpoint(read_checkpoint(path))


def write_loss_history(losses, path: str | Path) -> Path:
    """
    epoch,mean_loss with epochs counted from 1
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({'epoch': np.arange(1, len(losses) + 1), 'mean_loss': np.asarray(losses, dtype=np.float64)})
    frame.to_csv(path, index=False)
    return path
