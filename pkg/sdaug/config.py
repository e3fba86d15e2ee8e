"""Configuration helpers and defaults."""

from __future__ import annotations

from dataclasses import fields
from os import getenv
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union, get_args, get_origin, get_type_hints

from dotenv import dotenv_values, load_dotenv

from .errors import ConfigError

DEFAULT_SEED = 0
DEFAULT_TARGET_SIZE = 224
DEFAULT_EPOCHS = 50
DESK_EPOCHS = 15
DEFAULT_BATCH_SIZE = 4
DEFAULT_LR = 1e-3
DEFAULT_PLATEAU_PATIENCE = 2
DEFAULT_PLATEAU_FACTOR = 0.1
DEFAULT_PLATEAU_THRESHOLD = 1e-4
DEFAULT_VALIDATION_FRACTION = 0.1

# Pixel-area range for resolution augmentation (mm^2 per pixel)
RA_AREA_LO = 0.954
RA_AREA_HI = 2.692

# Padding values after intensity normalization
IMAGE_PAD_VALUE = -1.0
MASK_PAD_VALUE = 0

DEFAULT_UNET_WIDTHS: Tuple[int, ...] = (16, 32, 64, 128)

TRUE_WORDS = {"1", "true", "yes", "on"}
FALSE_WORDS = {"0", "false", "no", "off"}

# Track if we've loaded .env
_dotenv_loaded = False


def ensure_dotenv_loaded() -> None:
    """Load .env file from current directory if not already loaded."""
    global _dotenv_loaded
    if _dotenv_loaded:
        return

    env_file = Path.cwd() / ".env"
    if env_file.exists():
        load_dotenv(env_file)
    else:
        for parent in Path.cwd().parents:
            env_file = parent / ".env"
            if env_file.exists():
                load_dotenv(env_file)
                break
            if parent == Path.home():
                break

    _dotenv_loaded = True


def env_int(name: str, fallback: int) -> int:
    raw = getenv(name)
    if raw is None:
        return fallback
    try:
        value = int(raw)
    except ValueError:
        return fallback
    return value if value > 0 else fallback


def default_workers() -> int:
    ensure_dotenv_loaded()
    raw = getenv("SDAUG_WORKERS")
    if raw is None:
        return 0
    try:
        return max(0, int(raw))
    except ValueError:
        return 0


def default_log_json() -> Optional[str]:
    ensure_dotenv_loaded()
    return getenv("SDAUG_LOG_JSON") or None


def read_key_values(path: Union[str, Path]) -> Dict[str, str]:
    """Read a UTF-8 key=value file. Keys without a value are rejected."""
    file = Path(path)
    if not file.is_file():
        raise ConfigError(f"config file not found: {file}")
    values = dotenv_values(file, encoding="utf8")
    result: Dict[str, str] = {}
    for key, value in values.items():
        if value is None:
            raise ConfigError(f"config key '{key}' has no value in {file}")
        result[key.strip().lower().replace("-", "_")] = value.strip()
    return result


def coerce(raw: Any, target: Any, key: str = "value") -> Any:
    """Coerce a string from a config file to the annotated target type."""
    if not isinstance(raw, str):
        return raw
    origin = get_origin(target)
    if origin is Union:
        args = [arg for arg in get_args(target) if arg is not type(None)]
        if raw.lower() in {"", "none", "null"}:
            return None
        return coerce(raw, args[0], key)
    if origin is tuple:
        inner = get_args(target)[0] if get_args(target) else str
        return tuple(coerce(part.strip(), inner, key) for part in raw.split(",") if part.strip())
    try:
        if target is bool:
            lowered = raw.lower()
            if lowered in TRUE_WORDS:
                return True
            if lowered in FALSE_WORDS:
                return False
            raise ValueError(raw)
        if target is int:
            return int(raw)
        if target is float:
            return float(raw)
    except ValueError as err:
        raise ConfigError(f"config key '{key}': cannot parse {raw!r} as {target.__name__}") from err
    return raw


def overrides_for(cls: type, values: Mapping[str, Any]) -> Dict[str, Any]:
    """Map raw key/values onto the fields of a dataclass, coercing each value."""
    hints = get_type_hints(cls)
    known = {field.name for field in fields(cls)}
    result: Dict[str, Any] = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key '{key}' for {cls.__name__}")
        result[key] = coerce(raw, hints[key], key)
    return result
