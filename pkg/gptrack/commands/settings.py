import click
from rich.console import Console
from rich.table import Table

from ..core.config import config_items, dump_config, get_global_config_path
from ..core.context import cli_errors
from ..parser import atomic_write_text


@click.group(name='config', help='Inspect the resolved configuration.')
def config():
    """Configuration comes from defaults, a flat `section.key = value` file, GPTRACK_* variables and --set."""
    pass


@config.command('show', help='List every resolved configuration value.')
@click.pass_obj
def config_show(app):
    table = Table(title="Resolved configuration")
    table.add_column("Key", style="cyan")
    table.add_column("Value", style="magenta")
    for key, value in config_items(app.config):
        table.add_row(key, value)
    Console().print(table)


@config.command('dump', help='Write the resolved configuration as a flat config file.')
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), help='File to write (default: stdout).')
@click.pass_obj
def config_dump(app, out_path):
    text = dump_config(app.config)
    if out_path is None:
        click.echo(text, nl=False)
        return
    with cli_errors():
        atomic_write_text(out_path, text)
    click.secho(f"Wrote configuration to {out_path}", fg="green")


@config.command('path', help='Show the path of the per-user config file.')
def config_path_command():
    click.echo(get_global_config_path())
