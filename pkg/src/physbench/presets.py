"""
The built-in experiment grid, read from the presets.toml shipped with the package

Preset names are '<system>/<model>', e.g. 'mass-spring/hnn'
"""

from pathlib import Path
from typing import Any

import toml

from physbench.config import ConfigError
from physbench.models import ExperimentConfig, ModelKind, SystemTag, UnknownPresetError

PRESET_PATH = Path(__file__).parent / 'presets.toml'

# fields an override file may not change, they define which preset this is
FIXED_FIELDS = {'preset', 'model'}

_PRESETS: dict[str, ExperimentConfig] | None = None


def _build_preset(system_tag: str, model: str, table: dict[str, Any]) -> ExperimentConfig:
    table = dict(table)
    system = {'tag': system_tag, **table.pop('system', {})}
    return ExperimentConfig(preset=f'{system_tag}/{model}', system=system, model=model, **table)


def load_presets(preset_path: str | Path | None = None) -> dict[str, ExperimentConfig]:
    """
    parse every preset table; the packaged file is cached after the first read
    """
    global _PRESETS
    if preset_path is None and _PRESETS is not None:
        return _PRESETS

    document = toml.load(Path(preset_path or PRESET_PATH))
    presets = {}
    for system_tag, models in document.items():
        for model, table in models.items():
            config = _build_preset(system_tag, model, table)
            presets[config.preset] = config

    if preset_path is None:
        _PRESETS = presets
    return presets


def preset_names() -> list[str]:
    return list(load_presets())


def get_preset(name: str) -> ExperimentConfig:
    presets = load_presets()
    if name not in presets:
        raise UnknownPresetError(f'Unknown preset {name!r}, choose from: {", ".join(presets)}')
    return presets[name]


def filter_presets(system: str | None = None, model: str | None = None) -> list[str]:
    """
    preset names matching a system tag and/or model kind, raising if nothing matches
    """
    matches = [
        name
        for name, cfg in load_presets().items()
        if (system is None or cfg.system.tag.value == system) and (model is None or cfg.model.value == model)
    ]
    if not matches:
        systems = ', '.join(tag.value for tag in SystemTag)
        models = ', '.join(kind.value for kind in ModelKind)
        raise UnknownPresetError(
            f'No preset matches system={system} model={model} (systems: {systems}; models: {models})',
        )
    return matches


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """
    a copy of cfg with top-level fields replaced and [system] constants merged

    Args:
        cfg (ExperimentConfig): usually a built-in preset
        overrides (dict): flat key-value pairs naming ExperimentConfig fields, plus an optional system table

    Returns:
        the validated, overridden config
    """
    if not overrides:
        return cfg
    data = cfg.model_dump(mode='json')
    for key, value in overrides.items():
        if key in FIXED_FIELDS:
            raise ConfigError(f'{key} identifies the preset and cannot be overridden')
        if key not in ExperimentConfig.model_fields:
            raise ConfigError(f'Unknown experiment field {key!r}')
        if key in ('system', 'sampler') and isinstance(value, dict):
            if key == 'system' and 'tag' in value:
                raise ConfigError('The system tag identifies the preset and cannot be overridden')
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    return ExperimentConfig.model_validate(data)
