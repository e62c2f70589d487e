import logging
from pathlib import Path

import click
import numpy as np

from ..core.context import cli_errors, config_option, write_metrics
from ..parser import atomic_write_text, format_ground_truth, format_number, write_event_file
from ..simulator import generate_stream, make_ground_truth, make_scene, simulate_run
from ..validator import SimulatorConfig


@click.command('simulate', help='Generate synthetic events with ground truth.')
@click.option('--scene', type=click.Choice(['tags', 'rocks']), help='Scene kind (default from config).')
@click.option('--motion', type=click.Choice(['translation', 'se2']), help='Motion kind (default from config).')
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False), help='Event file to write.')
@click.option('--gt', 'gt_path', required=True, type=click.Path(dir_okay=False), help='Ground-truth file to write.')
@click.option('--seed', type=int, help='Master random seed (default from config).')
@click.option('--run', 'run_index', type=click.IntRange(min=0), default=0, show_default=True,
              help='Run index; the random stream is seeded by (seed, run).')
@click.option('--stream', is_flag=True, help='Write a full-sensor stream at simulator.rate instead of one batch.')
@click.option('--duration', type=click.FloatRange(min=0, min_open=True), help='Override simulator.duration.')
@click.option('--seeds-out', type=click.Path(dir_okay=False), help='Also write an "x y t" seed file for the pattern centre.')
@click.option('--metrics', type=click.Path(dir_okay=False), help='Write run metrics as JSON.')
@config_option
@click.pass_obj
def simulate(app, scene, motion, out_path, gt_path, seed, run_index, stream, duration, seeds_out, metrics):
    cfg = app.config
    updates = {k: v for k, v in (('scene', scene), ('motion', motion), ('seed', seed), ('duration', duration)) if v is not None}
    with cli_errors():
        sim_cfg = SimulatorConfig(**{**cfg.simulator.dict(), **updates})
        origin = (cfg.sensor.width / 2, cfg.sensor.height / 2)
        if stream:
            rng = np.random.default_rng([sim_cfg.seed, run_index])
            sc = make_scene(sim_cfg.scene, rng)
            truth = make_ground_truth(sim_cfg.motion, rng, sim_cfg, origin)
            events, assoc = generate_stream(sc, truth, sim_cfg.duration, sim_cfg.rate, sim_cfg.noise_px, rng, cfg.sensor)
        else:
            sim = simulate_run(sim_cfg, run_index, origin=origin)
            sc, truth, events, assoc = sim.scene, sim.truth, sim.batch.events, sim.assoc
        if len(events) == 0:
            raise click.ClickException("simulation produced no events inside the sensor")

        header = [f"scene={sim_cfg.scene} motion={sim_cfg.motion} seed={sim_cfg.seed} run={run_index}"]
        write_event_file(out_path, events, header=header)
        atomic_write_text(gt_path, format_ground_truth(truth.samples(events.t), sc.landmarks, assoc))
        if seeds_out:
            centre = truth.project([events.t[0]], [[0.0, 0.0]])[0]
            atomic_write_text(seeds_out, f"{format_number(centre[0])} {format_number(centre[1])} {format_number(events.t[0])}\n")
        write_metrics(metrics, {
            'n_events': len(events),
            'n_landmarks': len(sc.landmarks),
            'scene': sim_cfg.scene,
            'motion': sim_cfg.motion,
            'seed': sim_cfg.seed,
            'run': run_index,
        }, cfg)

    logging.info(f"Simulated {len(events)} events ({sim_cfg.scene}/{sim_cfg.motion}, seed {sim_cfg.seed})")
    click.secho(f"Wrote {len(events)} events to {Path(out_path)} and ground truth to {Path(gt_path)}", fg='green')
