import logging
from pathlib import Path

import click
from rich.console import Console
from rich.table import Table

from ..core.context import cli_errors, config_option, write_metrics
from ..fields import build_distance_field, rasterize_field
from ..gp import SqExpKernel
from ..parser import atomic_write_text, format_raster, format_track, parse_event_file, parse_seed_file
from ..tracker import track_many


@click.command('track', help='Track patterns from seed positions through an event stream.')
@click.option('--events', 'events_path', required=True, type=click.Path(dir_okay=False),
              help='Input event file.')
@click.option('--seeds', 'seeds_path', required=True, type=click.Path(dir_okay=False),
              help='File of "x y t" seed lines.')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Output directory.')
@click.option('--field-dump', is_flag=True, help='Also write each final template distance field as a text raster.')
@click.option('--integer-pixels', is_flag=True, help='Reject event lines whose x or y is not an integer.')
@click.option('--metrics', type=click.Path(dir_okay=False), help='Write per-track metrics as JSON.')
@config_option
@click.pass_obj
def track(app, events_path, seeds_path, out_dir, field_dump, integer_pixels, metrics):
    cfg = app.config
    out = Path(out_dir)
    with cli_errors():
        events = parse_event_file(events_path, cfg.sensor, integer_coords=integer_pixels)
        seeds = parse_seed_file(seeds_path)
        if not seeds:
            raise click.ClickException(f"{seeds_path}: no seeds")
        if len(events) == 0:
            raise click.ClickException(f"{events_path}: no events inside the sensor")
        out.mkdir(parents=True, exist_ok=True)

        tracks = track_many(events, seeds, cfg, app.threads)
        summary = []
        for tr in tracks:
            reason = tr.reason.value if tr.reason else None
            atomic_write_text(out / f"track_{tr.id}.txt", format_track(tr.id, tr.history, reason))
            if field_dump and tr.template is not None and not tr.template.empty:
                kernel = SqExpKernel(cfg.motion.kf_scale, cfg.motion.kf_lengthscale)
                f = build_distance_field(tr.template.virtual_events(), kernel, cfg.motion.occupancy_noise,
                                         cfg.tracker.field_support_limit)
                atomic_write_text(out / f"template_{tr.id}.txt",
                                  format_raster(rasterize_field(f, tr.template.origin, tr.template.shape)))
            summary.append({
                'id': tr.id,
                'batches': len(tr.records),
                'duration': tr.duration,
                'reason': reason,
            })
        write_metrics(metrics, {'events': events_path, 'tracks': summary}, cfg)

    table = Table(title=f"Tracks ({len(tracks)})")
    table.add_column("Track", style="cyan")
    table.add_column("Batches", justify="right")
    table.add_column("Duration [s]", justify="right")
    table.add_column("Ended", style="magenta")
    for s in summary:
        table.add_row(str(s['id']), str(s['batches']), f"{s['duration']:.3f}", s['reason'] or 'active')
    Console().print(table)
    logging.info(f"Wrote {len(tracks)} track files to {out}")
