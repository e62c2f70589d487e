import logging
from typing import Optional, Sequence

import click

from . import __version__
from .commands.compensate import compensate
from .commands.evaluate import evaluate
from .commands.settings import config
from .commands.simulate import simulate
from .commands.track import track
from .core.config import get_global_config_path
from .core.context import AppContext, resolve_config

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


@click.group(invoke_without_command=True)
@click.version_option(version=__version__, prog_name="gptrack")
@click.option('--config', 'config_path', type=click.Path(dir_okay=False),
              help='Flat "section.key = value" config file (default: ~/.gptrack/config when present).')
@click.option('--set', 'overrides', multiple=True, metavar='SECTION.KEY=VALUE',
              help='Override one config value; may be repeated.')
@click.option('--threads', type=click.IntRange(min=1), default=1, show_default=True,
              help='Maximum worker threads for independent runs and tracks.')
@click.option('-v', '--verbose', is_flag=True, help='Debug logging.')
@click.option('-q', '--quiet', is_flag=True, help='Warnings and errors only.')
@click.pass_context
def cli(ctx, config_path, overrides, threads, verbose, quiet):
    """gptrack - event-camera motion compensation and pattern tracking with Gaussian processes."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)

    if config_path is None and get_global_config_path().exists():
        config_path = get_global_config_path()
    ctx.obj = AppContext(resolve_config(config_path, overrides), threads, overrides)

    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


cli.add_command(simulate)
cli.add_command(compensate)
cli.add_command(track)
cli.add_command(evaluate)
cli.add_command(config)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit code instead of exiting."""
    try:
        cli.main(args=list(argv) if argv is not None else None, prog_name='gptrack', standalone_mode=True)
    except SystemExit as e:
        if e.code is None:
            return 0
        return e.code if isinstance(e.code, int) else 1
    return 0
