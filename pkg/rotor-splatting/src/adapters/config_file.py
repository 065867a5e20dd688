"""
Flat key = value config files mapped onto TrainConfig.

    # comment
    total_steps = 2000
    background = 1,1,1
    static_mode = true
    seed = none

Values are validated by pydantic against the TrainConfig field types.
"""
import logging
import os
from typing import Any, Dict, Optional, get_type_hints

from pydantic import TypeAdapter, ValidationError

from src.domain.errors import ConfigError, MissingFileError
from src.domain.models import TrainConfig

logger = logging.getLogger(__name__)

_NONE = {"none", "null", ""}

_FIELD_ADAPTERS: Dict[str, TypeAdapter] = {
    name: TypeAdapter(annotation) for name, annotation in get_type_hints(TrainConfig).items()
}
_CONFIG_ADAPTER = TypeAdapter(TrainConfig)


def _first_error(exc: ValidationError) -> str:
    error = exc.errors()[0]
    location = ".".join(str(part) for part in error["loc"])
    return f"{location}: {error['msg']}" if location else error["msg"]


def _raw_value(raw: str) -> Any:
    if raw.lower() in _NONE:
        return None
    parts = [part.strip() for part in raw.split(",")]
    return parts if len(parts) > 1 else raw


def parse_config_values(text: str) -> Dict[str, Any]:
    """Parse config text into typed values keyed by TrainConfig field name"""
    values: Dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value', got '{line}'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_ADAPTERS:
            raise ConfigError(f"line {number}: unknown config key '{key}'")
        if key in values:
            raise ConfigError(f"line {number}: duplicate config key '{key}'")
        try:
            values[key] = _FIELD_ADAPTERS[key].validate_python(_raw_value(raw))
        except ValidationError as e:
            raise ConfigError(f"line {number}: {key} got '{raw}' ({_first_error(e)})")
    return values


def parse_train_config(text: str, **overrides) -> TrainConfig:
    values = parse_config_values(text)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return _CONFIG_ADAPTER.validate_python(values)
    except ValidationError as e:
        raise ConfigError(f"invalid training config: {_first_error(e)}")


def load_train_config(path: Optional[str], **overrides) -> TrainConfig:
    """Read a config file; a missing path yields the defaults"""
    if path is None:
        return parse_train_config("", **overrides)
    if not os.path.exists(path):
        raise MissingFileError(f"config file not found: {path}")
    with open(path, "r") as f:
        config = parse_train_config(f.read(), **overrides)
    logger.info(f"Loaded training config from {path}")
    return config
