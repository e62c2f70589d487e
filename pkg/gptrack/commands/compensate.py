import logging
from typing import Iterator, Optional

import click
import numpy as np

from ..core.context import cli_errors, config_option, write_metrics
from ..evaluation import chunk_bounds
from ..events import EventArray, EventBatch, collect_batch, whole_batch
from ..motion import compensate as compensate_batch
from ..motion import initial_trajectory, warm_start_parameters
from ..parser import atomic_write_text, format_number, format_trajectory, parse_event_file, write_event_file
from ..validator import Config


def parse_point(ctx, param, value) -> Optional[np.ndarray]:
    if value is None:
        return None
    try:
        x, y = (float(v) for v in value.split(','))
    except ValueError:
        raise click.BadParameter(f"expected 'x,y', got {value!r}")
    return np.array([x, y])


def window_batches(events: EventArray, seed: np.ndarray, t0: float, cfg: Config) -> Iterator[EventBatch]:
    """Consecutive batches of the events inside the patch window around a fixed seed."""
    t_from = t0
    while True:
        batch = collect_batch(events, seed, t_from, cfg.motion.batch_size, cfg.sensor.patch_radius)
        if len(batch) >= 2:
            yield batch
        if batch.depleted or len(batch) < 2:
            return
        t_from = float(np.nextafter(batch.t_end, np.inf))


def chunk_batches(events: EventArray, t0: float, cfg: Config) -> Iterator[EventBatch]:
    """Consecutive `batch_size` chunks of the whole file, each seeded at its mean position."""
    first = int(np.searchsorted(events.t, t0, side='left'))
    for start, stop in chunk_bounds(len(events) - first, cfg.motion.batch_size):
        chunk = whole_batch(events[first + start:first + stop])
        yield EventBatch(chunk.events, chunk.t_start, chunk.seed,
                         indices=np.arange(first + start, first + stop))


def metrics_line(i: int, result) -> str:
    return (f"batch {i}: lml_initial={result.lml_initial:.6f} lml_final={result.lml_final:.6f} "
            f"iterations={result.iterations}")


@click.command('compensate', help='Motion-compensate events in consecutive batches.')
@click.option('--events', 'events_path', required=True, type=click.Path(dir_okay=False),
              help='Input event file.')
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False),
              help='Compensated event file to write.')
@click.option('--seed', callback=parse_point, metavar='X,Y',
              help='Collect batches inside the patch window around this point (default: chunk the whole file).')
@click.option('--t0', type=float, help='Start time (default: first event).')
@click.option('--dump-trajectory', type=click.Path(dir_okay=False),
              help='Write the estimated poses at the inducing times of every batch.')
@click.option('--integer-pixels', is_flag=True, help='Reject event lines whose x or y is not an integer.')
@click.option('--metrics', type=click.Path(dir_okay=False), help='Write per-batch metrics as JSON.')
@config_option
@click.pass_obj
def compensate(app, events_path, out_path, seed, t0, dump_trajectory, integer_pixels, metrics):
    cfg = app.config
    with cli_errors():
        events = parse_event_file(events_path, cfg.sensor, integer_coords=integer_pixels)
        if len(events) < 2:
            raise click.ClickException(f"{events_path}: need at least 2 events, got {len(events)}")
        t0 = float(events.t[0]) if t0 is None else t0
        batches_in = window_batches(events, seed, t0, cfg) if seed is not None else chunk_batches(events, t0, cfg)

        indices, xy, dump, batches = [], [], [], []
        previous = None
        for i, batch in enumerate(batches_in):
            init = None
            if seed is not None and previous is not None:
                init = warm_start_parameters(previous, initial_trajectory(batch, cfg.motion))
            result = compensate_batch(batch, cfg.motion, init)
            previous = result
            indices.append(batch.indices)
            xy.append(result.compensated)
            traj = result.trajectory
            theta, trans = traj.poses(traj.inducing_times)
            dump.append(f"# batch {i} origin {format_number(traj.origin[0])} {format_number(traj.origin[1])}\n")
            dump.append(format_trajectory(traj.inducing_times, theta, trans))
            batches.append({
                'batch': i,
                't_start': batch.t_start,
                'n_events': len(batch),
                'n_optimized': result.n_optimized,
                'lml_initial': result.lml_initial,
                'lml_final': result.lml_final,
                'lml_threshold': result.lml_threshold,
                'converged': result.converged,
                'iterations': result.iterations,
            })
            click.echo(metrics_line(i, result))
            if not result.converged:
                click.secho(f"Batch {i}: likelihood gain {result.lml_gain:.3f} below threshold "
                            f"{result.lml_threshold:.3f}", fg='yellow')
        if not batches:
            raise click.ClickException(f"{events_path}: fewer than 2 events to compensate after t={t0}")

        order = np.concatenate(indices)
        write_event_file(out_path, events[order], xy=np.vstack(xy))
        if dump_trajectory:
            atomic_write_text(dump_trajectory, ''.join(dump))
        write_metrics(metrics, {'events': events_path, 'batches': batches}, cfg)

    logging.info(f"Compensated {len(order)} events in {len(batches)} batches")
    click.secho(f"Wrote compensated events to {out_path}", fg='green')
