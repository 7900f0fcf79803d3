"""
a collection of methods used in multiple stages
"""

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel

from physbench.models import lift_up_model_version
from physbench.static_values import get_logger


def chunks(iterable, chunk_size):
    """
    Yield successive n-sized chunks from an iterable

    Args:
        iterable (): any iterable - tuple, str, list, numpy array
        chunk_size (): size of intervals to return

    Returns:
        intervals of requested size across the collection
    """

    if isinstance(iterable, set):
        iterable = list(iterable)

    for i in range(0, len(iterable), chunk_size):
        yield iterable[i : (i + chunk_size)]


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """
    the only random source in the package: PCG64 seeded from an integer or a spawned SeedSequence
    """
    return np.random.Generator(np.random.PCG64(seed))


def child_seeds(seed: int, n_children: int, stream: int = 0) -> list[np.random.SeedSequence]:
    """
    one independent seed per trajectory index, so generation order never changes the data

    Args:
        seed (int): the experiment seed
        n_children (int): number of child seeds required
        stream (int): separate streams for separately generated datasets (0 = train/main, 1 = test)
    """
    root = np.random.SeedSequence(entropy=seed, spawn_key=(stream,))
    return root.spawn(n_children)


def read_json_from_path(read_path: str | Path | None = None, default: Any = None, return_model: Any = None) -> Any:
    """
    take a path to a JSON file, read into an object
    if the path doesn't exist - return the default object

    Args:
        read_path (str): where to read from - if None... will return the value "default"
        default (Any):
        return_model (pydantic Models): any Model to read/validate as

    Returns:
        either the object from the JSON file, or None
    """

    if read_path is None:
        get_logger().error('read_json_from_path was passed the path "None"')
        return default

    read_path = Path(read_path)

    if not read_path.exists():
        get_logger().error(f'{read_path} did not exist')
        return default

    with read_path.open(encoding='utf-8') as handle:
        json_data = json.load(handle)
        if return_model:
            # potentially walk-up model version
            model_data = lift_up_model_version(json_data, return_model)
            return return_model.model_validate(model_data)
        return json_data


def write_model(model: BaseModel, write_path: str | Path) -> Path:
    """
    write a pydantic model as indented JSON, creating parent directories
    """
    write_path = Path(write_path)
    write_path.parent.mkdir(parents=True, exist_ok=True)
    write_path.write_text(model.model_dump_json(indent=2), encoding='utf-8')
    return write_path


def file_digest(path: str | Path) -> str:
    """
    sha256 of a file, used to compare artifacts between runs
    """
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
