import copy
import json
import os
from typing import Any, Dict, Optional, Sequence

from pydantic import ValidationError

from src.errors import ConfigError
from src.logger import setup_logger
from src.models import ExperimentConfig

logger = setup_logger("Config")

CONFIG_FILE = "experiment.json"

DEFAULT_CONFIG = {
    "label": "experiment",
    "seed": 0,
    "repetitions": 1,
    "workers": 1,
    "output_dir": "output",
    "curve_points": 12,
    "observable": {"path": None, "random": None},
    "state": {"bitstring": None, "bloch_angles": None},
    "scheme": {"name": "CS", "floor": 0.01},
    "settings": 1000,
    "shots": 100,
    "noise": {
        "static_flip": None,
        "static_flips": None,
        "static_flip_range": None,
        "seed": 0,
        "basis_flips": {},
        "telegraph": [],
    },
    "schedule": {"mode": "blended", "circuits_per_job": 300, "shots_per_circuit": 100, "slot_seconds": 10.0},
    "qdt": {
        "enabled": True,
        "repeats_per_job": 4,
        "shots_per_instance": 100,
        "regular_shots": 100000,
        "baseline_shots": 0,
        "max_iterations": 2000,
        "tolerance": 1e-12,
        "step_tolerance": 1e-9,
    },
    "use_qdt_effects": True,
    "thresholds": {"qdt_max_sigma": None, "ideal_min_sigma": None},
}


def deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    """Nested dicts merge key by key; any other value in `update` replaces the base value."""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: Dict[str, Any], overrides: Optional[Sequence[str]]) -> Dict[str, Any]:
    """Apply `section.key=value` overrides in place; values are JSON literals or plain strings."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"Override '{item}' is not of the form key=value")
        path, raw = item.split("=", 1)
        keys = [k for k in path.strip().split(".") if k]
        if not keys:
            raise ConfigError(f"Override '{item}' has an empty key")
        node = data
        for key in keys[:-1]:
            if not isinstance(node.get(key), dict):
                node[key] = {}
            node = node[key]
        node[keys[-1]] = _parse_value(raw.strip())
    return data


class ConfigManager:
    def __init__(self, config_file: str = CONFIG_FILE):
        self.config_file = config_file

    def load_raw(self) -> Dict[str, Any]:
        """Config file merged over the defaults, unvalidated."""
        if not os.path.exists(self.config_file):
            raise ConfigError(f"Config file not found: {self.config_file}")
        try:
            with open(self.config_file, 'r', encoding='utf-8') as f:
                saved_config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{self.config_file}: invalid JSON ({e})") from e
        if not isinstance(saved_config, dict):
            raise ConfigError(f"{self.config_file}: top level must be an object")
        return deep_merge(DEFAULT_CONFIG, saved_config)

    def load_config(self, overrides: Optional[Sequence[str]] = None) -> ExperimentConfig:
        data = apply_overrides(self.load_raw(), overrides)
        base_dir = os.path.dirname(os.path.abspath(self.config_file))
        return validate_config(data, base_dir, source=self.config_file)

    def save_config(self, config_data, path: Optional[str] = None) -> bool:
        """Save a config (model or dict) as JSON."""
        target = path or self.config_file
        if isinstance(config_data, ExperimentConfig):
            config_data = config_data.model_dump(mode="json")
        try:
            with open(target, 'w', encoding='utf-8') as f:
                json.dump(config_data, f, indent=4, ensure_ascii=False)
            return True
        except OSError as e:
            logger.error(f"Error saving config to {target}: {e}")
            return False


def validate_config(data: Dict[str, Any], base_dir: str = ".", source: str = "<config>") -> ExperimentConfig:
    """Validate a merged config dict; relative observable paths resolve against `base_dir`."""
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{source}: {e}") from e

    path = config.observable.path
    if path is not None:
        resolved = path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))
        if not os.path.isfile(resolved):
            raise ConfigError(f"{source}: observable file not found: {resolved}")
        config = config.model_copy(update={"observable": config.observable.model_copy(update={"path": resolved})})
    return config
