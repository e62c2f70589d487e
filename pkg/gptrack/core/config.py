import os
import logging
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional

from dotenv import dotenv_values, load_dotenv

from ..validator import SECTIONS, Config, validate_config

ENV_PREFIX = 'GPTRACK_'


class ConfigError(ValueError):
    """Unknown or malformed configuration keys."""


def get_global_config_path() -> Path:
    """Path of the per-user config file; it is read only when it exists."""
    return Path.home() / '.gptrack' / 'config'


def _field_names(model) -> Iterable[str]:
    fields = getattr(model, 'model_fields', None)
    return fields.keys() if fields is not None else model.__fields__.keys()


def _split_key(key: str) -> tuple:
    section, sep, name = key.strip().partition('.')
    if not sep or not name:
        raise ConfigError(f"expected 'section.key', got '{key}'")
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section '{section}' in '{key}'")
    if name not in _field_names(SECTIONS[section]):
        raise ConfigError(f"unknown config key '{key}'")
    return section, name


def read_config_file(path) -> Dict[str, str]:
    """Flat `section.key = value` entries; `#` comments and blank lines are ignored."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    values = dotenv_values(path, interpolate=False)
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise ConfigError(f"{path}: entries without a value: {', '.join(missing)}")
    logging.debug(f"Read {len(values)} config entries from {path}")
    return dict(values)


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    """`section.key=value` command-line overrides."""
    out = {}
    for item in items:
        key, sep, value = item.partition('=')
        if not sep:
            raise ConfigError(f"expected 'section.key=value', got '{item}'")
        out[key.strip()] = value.strip()
    return out


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """`GPTRACK_<SECTION>_<KEY>` variables for known sections, as flat keys."""
    environ = os.environ if environ is None else environ
    out = {}
    for var, value in environ.items():
        if not var.startswith(ENV_PREFIX):
            continue
        section, _, name = var[len(ENV_PREFIX):].lower().partition('_')
        if section in SECTIONS and name:
            out[f"{section}.{name}"] = value
    return out


def nest(flat: Mapping[str, str]) -> Dict[str, Dict[str, Optional[str]]]:
    data: Dict[str, Dict[str, Optional[str]]] = {}
    for key, value in flat.items():
        section, name = _split_key(key)
        value = value.strip() if value is not None else value
        data.setdefault(section, {})[name] = None if value is None or value.lower() == 'none' else value
    return data


def load_config(path=None, overrides: Iterable[str] = (), environ: Optional[Mapping[str, str]] = None,
                use_env: bool = True) -> Config:
    """Resolve defaults < config file < GPTRACK_* environment < command-line overrides."""
    flat: Dict[str, str] = {}
    if path is not None:
        flat.update(read_config_file(path))
    if use_env:
        if environ is None:
            # local .env never overrides variables already set
            load_dotenv()
        flat.update(env_overrides(environ))
    flat.update(parse_overrides(overrides))
    return validate_config(nest(flat))


def _format_value(value) -> str:
    if value is None:
        return 'none'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_items(cfg: Config):
    """(key, value text) pairs sorted by section then key."""
    data = cfg.dict()
    for section in sorted(data):
        for name in sorted(data[section]):
            yield f"{section}.{name}", _format_value(data[section][name])


def dump_config(cfg: Config) -> str:
    return ''.join(f"{key} = {value}\n" for key, value in config_items(cfg))
