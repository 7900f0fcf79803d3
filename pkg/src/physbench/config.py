"""
Provides access to config variables, lazily read from the TOML file named by $PHYSBENCH_CONFIG

Two layers of configuration exist:
    - the optional global config (rollout tolerances, worker count), read through config_retrieve
    - per-run override files (flat key = value TOML), read through load_overrides and applied to a preset
"""

from os import environ
from typing import Any

import toml

from physbench.models import PhysbenchError
from physbench.static_values import CONFIG_ENV_VAR

CONFIG_TYPE = dict[str, Any]
_config: CONFIG_TYPE | None = None  # Cached config, initialized lazily.

# tables permitted inside an override file, everything else must be a top-level scalar or list
OVERRIDE_TABLES = {'system', 'sampler'}


class ConfigError(PhysbenchError):
    """
    Error retrieving keys from config.
    """


class Unsupplied:
    pass


def set_config(config: CONFIG_TYPE | None):
    """
    replace the cached config, None forces a re-read on next access
    """
    global _config
    _config = config


def _load_config(config_path: str | None) -> CONFIG_TYPE:
    """
    read the global config; if no path is known an empty config is used
    so that every lookup with a default still succeeds
    """
    if config_path is None:
        config_path = environ.get(CONFIG_ENV_VAR)
    if not config_path:
        return {}
    try:
        with open(config_path, encoding='utf-8') as handle:
            return toml.loads(handle.read())
    except FileNotFoundError as fnfe:
        raise ConfigError(f'Config file {config_path} does not exist') from fnfe
    except toml.TomlDecodeError as tde:
        raise ConfigError(f'Config file {config_path} is not valid TOML: {tde}') from tde


def config_retrieve(key: list[str] | str, default: Any = Unsupplied, config_path: str | None = None) -> Any:
    """
    Retrieve key from config, assuming nested key specified as a list of strings.

    >> config_retrieve(['rollout', 'rtol'], default=1e-6)
    1e-06

    Allow None as default value
    >> config_retrieve(['key1', 'key2', 'key3'], default=None) is None
    True
    """

    global _config
    if _config is None:  # Lazily initialize the config.
        _config = _load_config(config_path)

    if isinstance(key, str):
        key = [key]

    if not key:
        raise ValueError('Key cannot be empty')

    d = _config
    for idx, k in enumerate(key):
        if not isinstance(d, dict) or k not in d:
            if default is Unsupplied:
                message = f'Key "{k}" not found in {d}'
                if idx > 0:
                    key_bits = ' -> '.join(key[: idx + 1])
                    message += f' (path: {key_bits})'

                raise ConfigError(message)
            return default

        d = d[k]

    return d


def config_check(key: list[str], expected_type: type | tuple[type, ...]) -> list[str]:
    """
    take a path to a config entry, and one or more expected types
    return a list of Strings:
        - if the value is present in the config dict, but the wrong type, explain
        - if the keys are not present in the config, explain where the key was absent
        - if the key(s) lead to a value, and the type is correct, return an empty list
    Args:
        key (list[str]): the keys for each layer in the config dict, leading to a value to test
        expected_type (Type | tuple[Type]): Type(s) we accept for this config value
    Returns:
        a list of the faults in the config search & type check, can be empty
    """

    try:
        value = config_retrieve(key)
        if isinstance(value, expected_type):
            return []
        config_keys = ' -> '.join(key)
        actual_type = type(value)
        return [f'config path {config_keys} was {actual_type}, expected {expected_type}']

    except ConfigError as ce:
        return [str(ce)]


def load_overrides(override_path: str | None) -> CONFIG_TYPE:
    """
    read a flat key-value override file

    Args:
        override_path (str | None): TOML file, top-level keys name ExperimentConfig fields

    Returns:
        the parsed overrides, empty if no path was given
    """
    if override_path is None:
        return {}
    overrides = _load_config(override_path)
    for key, value in overrides.items():
        if isinstance(value, dict) and key not in OVERRIDE_TABLES:
            raise ConfigError(f'Override files are flat key = value documents, found table [{key}]')
    return overrides
