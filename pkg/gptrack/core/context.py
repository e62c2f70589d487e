import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence

import click
from pydantic import ValidationError

from ..fields import PointAtInfinityError
from ..gp import SingularModelError
from ..parser import EventParseError, atomic_write_text
from ..validator import Config
from .config import ConfigError, load_config


@dataclass
class AppContext:
    """Resolved state handed from the root group to every command."""

    config: Config
    threads: int = 1
    overrides: Sequence[str] = ()


def resolve_config(config_path, overrides: Sequence[str] = ()) -> Config:
    """Load the configuration, reporting any problem as a one-line click error."""
    try:
        cfg = load_config(config_path, overrides)
    except FileNotFoundError as e:
        raise click.ClickException(str(e)) from e
    except (ConfigError, ValidationError) as e:
        raise click.ClickException(f"invalid configuration: {e}") from e
    logging.debug(f"Resolved configuration from {config_path or 'defaults'}")
    return cfg


def _reload_config(ctx, param, value):
    if value is not None:
        app = ctx.find_object(AppContext)
        app.config = resolve_config(value, app.overrides)


def config_option(f):
    """`--config` on a subcommand; replaces the file given to (or found by) the root group."""
    return click.option('--config', 'config_path', type=click.Path(dir_okay=False), expose_value=False,
                        callback=_reload_config,
                        help='Flat "section.key = value" config file; --set overrides still apply.')(f)


@contextmanager
def cli_errors():
    """Turn library and I/O failures into one-line click errors (exit code 1)."""
    try:
        yield
    except click.ClickException:
        raise
    except EventParseError as e:
        raise click.ClickException(str(e)) from e
    except (SingularModelError, PointAtInfinityError, ValueError) as e:
        logging.debug("Command failed", exc_info=True)
        raise click.ClickException(str(e)) from e
    except OSError as e:
        raise click.ClickException(f"{e.filename or ''}: {e.strerror or e}".lstrip(': ')) from e


def write_metrics(path, payload: Dict[str, Any], config: Optional[Config] = None) -> None:
    """JSON metrics, always carrying the resolved config."""
    if path is None:
        return
    body = dict(payload)
    if config is not None:
        body['config'] = config.dict()
    atomic_write_text(path, json.dumps(body, indent=2, sort_keys=True) + '\n')
    logging.info(f"Wrote metrics to {path}")
