import json

import click
from rich.console import Console
from rich.table import Table

from ..core.context import cli_errors, config_option
from ..evaluation import ScoreReport, run_benchmark, run_matrix, score_compensated
from ..parser import atomic_write_text, parse_event_file, parse_ground_truth
from ..simulator import sampled_trajectory


@click.group(name='eval', help='Score compensated events and run simulated benchmarks.')
def evaluate():
    pass


def _summary_table(reports, title: str) -> Table:
    table = Table(title=title)
    table.add_column("Scene", style="cyan")
    table.add_column("Motion", style="cyan")
    table.add_column("Runs", justify="right")
    table.add_column("Success", justify="right")
    table.add_column("Mean RMSE [px]", justify="right", style="magenta")
    table.add_column("Raw RMSE [px]", justify="right")
    for r in reports:
        mean = '-' if r.mean_rmse is None else f"{r.mean_rmse:.3f}"
        table.add_row(r.scene, r.motion, str(r.n_runs), f"{r.success_rate:.0%}", mean, f"{r.mean_raw_rmse:.3f}")
    return table


@evaluate.command('score', help='Reprojection RMSE of a compensated event file against ground truth.')
@click.option('--events', 'events_path', required=True, type=click.Path(dir_okay=False),
              help='Compensated event file.')
@click.option('--gt', 'gt_path', required=True, type=click.Path(dir_okay=False),
              help='Ground-truth file written by simulate.')
@click.option('--report', type=click.Path(dir_okay=False), help='Write the score as JSON.')
@config_option
@click.pass_obj
def score(app, events_path, gt_path, report):
    cfg = app.config
    with cli_errors():
        events = parse_event_file(events_path, cfg.sensor, clip=False)
        gt = parse_ground_truth(gt_path)
        if len(events) == 0:
            raise click.ClickException(f"{events_path}: no events")
        landmarks = gt.event_landmarks(len(events))
        rmse = score_compensated(events, landmarks, sampled_trajectory(gt.samples), cfg.motion.batch_size)
        result = ScoreReport(
            n_events=len(events),
            rmse=rmse,
            gate_px=cfg.simulator.gate_px,
            success=rmse < cfg.simulator.gate_px,
            config=cfg.dict(),
        )
        if report:
            atomic_write_text(report, result.to_json())
    colour = 'green' if result.success else 'red'
    click.secho(f"RMSE {rmse:.4f}px over {len(events)} events ({'success' if result.success else 'failure'})", fg=colour)


@evaluate.command('benchmark', help='Compensate and score simulated batches.')
@click.option('--runs', type=click.IntRange(min=1), default=20, show_default=True)
@click.option('--scene', type=click.Choice(['tags', 'rocks']), help='Scene kind (default from config).')
@click.option('--motion', type=click.Choice(['translation', 'se2']), help='Motion kind (default from config).')
@click.option('--seed', type=int, help='Master random seed (default from config).')
@click.option('--report', type=click.Path(dir_okay=False), help='Write the report as JSON.')
@click.option('--timings', is_flag=True, help='Include runtimes in the JSON report.')
@config_option
@click.pass_obj
def benchmark(app, runs, scene, motion, seed, report, timings):
    with cli_errors():
        result = run_benchmark(runs, scene, motion, app.config, seed, app.threads)
        if report:
            atomic_write_text(report, result.to_json(timings))
    Console().print(_summary_table([result], "Benchmark"))


@evaluate.command('matrix', help='Benchmark every scene and motion combination.')
@click.option('--runs', type=click.IntRange(min=1), default=20, show_default=True)
@click.option('--seed', type=int, help='Master random seed (default from config).')
@click.option('--report', type=click.Path(dir_okay=False), help='Write all reports as a JSON list.')
@click.option('--timings', is_flag=True, help='Include runtimes in the JSON report.')
@config_option
@click.pass_obj
def matrix(app, runs, seed, report, timings):
    with cli_errors():
        reports = run_matrix(n_runs=runs, cfg=app.config, seed=seed, threads=app.threads)
        if report:
            body = [json.loads(r.to_json(timings)) for r in reports]
            atomic_write_text(report, json.dumps(body, indent=2, sort_keys=True) + '\n')
    Console().print(_summary_table(reports, "Evaluation matrix"))
