"""Reprojection-error scoring and the simulated benchmark protocol.

A run succeeds when the RMSE of all events in the batch is below the gate; the mean
RMSE is aggregated over successful runs only.
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from .events import EventArray
from .motion import compensate
from .simulator import GroundTruthTrajectory, simulate_run
from .validator import Config


class RunResult(BaseModel):
    run: int
    scene: str
    motion: str
    n_events: int
    n_optimized: int
    rmse: float
    raw_rmse: float
    success: bool
    lml_initial: float
    lml_final: float
    iterations: int
    runtime: float = 0.0


class EvalReport(BaseModel):
    scene: str
    motion: str
    gate_px: float
    n_runs: int
    success_rate: float = Field(..., ge=0, le=1)
    # None when no run succeeded
    mean_rmse: Optional[float] = None
    mean_raw_rmse: float
    runs: List[RunResult] = []
    runtime: float = 0.0
    config: Dict[str, Any] = {}

    def to_json(self, timings: bool = False) -> str:
        """Stable JSON; timings are left out unless asked for so reports compare byte-for-byte."""
        exclude = None if timings else {'runtime': True, 'runs': {'__all__': {'runtime'}}}
        return json.dumps(self.dict(exclude=exclude), indent=2, sort_keys=True) + '\n'


class ScoreReport(BaseModel):
    n_events: int
    rmse: float
    gate_px: float
    success: bool
    config: Dict[str, Any] = {}

    def to_json(self) -> str:
        return json.dumps(self.dict(), indent=2, sort_keys=True) + "\n"


def reprojection_rmse(compensated, landmarks, truth: GroundTruthTrajectory, tau_ref: float) -> float:
    """RMSE between compensated events and their landmarks posed at τ_ref (landmarks aligned per event)."""
    compensated = np.asarray(compensated, dtype=float).reshape(-1, 2)
    landmarks = np.asarray(landmarks, dtype=float).reshape(-1, 2)
    if len(compensated) != len(landmarks):
        raise ValueError(f"{len(compensated)} events but {len(landmarks)} landmark references")
    if len(compensated) == 0:
        raise ValueError("no events to score")
    reference = truth.project([tau_ref], landmarks)
    return float(np.sqrt(np.mean(np.sum((compensated - reference) ** 2, axis=1))))


def raw_rmse(events: EventArray, landmarks, truth: GroundTruthTrajectory, tau_ref: Optional[float] = None) -> float:
    """Uncompensated baseline: raw event positions against the same references."""
    tau_ref = float(events.t[0]) if tau_ref is None else tau_ref
    return reprojection_rmse(events.xy, landmarks, truth, tau_ref)


def chunk_bounds(n: int, size: int) -> List[tuple]:
    """Consecutive [start, stop) ranges of `size` events; a trailing single event joins its predecessor."""
    if size < 2:
        raise ValueError(f"chunk size must be >= 2, got {size}")
    bounds = [(i, min(i + size, n)) for i in range(0, n, size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < 2:
        last = bounds.pop()
        bounds[-1] = (bounds[-1][0], last[1])
    return bounds


def score_compensated(compensated: EventArray, landmarks, truth: GroundTruthTrajectory, size: int) -> float:
    """RMSE of a compensated file made of consecutive batches of `size` events, each referenced at its first time."""
    landmarks = np.asarray(landmarks, dtype=float).reshape(-1, 2)
    sq = []
    for start, stop in chunk_bounds(len(compensated), size):
        reference = truth.project([compensated.t[start]], landmarks[start:stop])
        sq.append(np.sum((compensated.xy[start:stop] - reference) ** 2, axis=1))
    return float(np.sqrt(np.mean(np.concatenate(sq))))


def _run_one(run: int, scene: str, motion: str, cfg: Config, seed: int) -> RunResult:
    started = time.perf_counter()
    sim = simulate_run(cfg.simulator, run, seed, scene, motion, _sensor_centre(cfg))
    batch = sim.batch
    refs = sim.scene.landmarks[sim.assoc]
    result = compensate(batch, cfg.motion)
    rmse = reprojection_rmse(result.compensated, refs, sim.truth, batch.t_start)
    baseline = raw_rmse(batch.events, refs, sim.truth, batch.t_start)
    logging.debug(f"Run {run} ({scene}/{motion}): RMSE {rmse:.3f}px, raw {baseline:.3f}px")
    return RunResult(
        run=run,
        scene=scene,
        motion=motion,
        n_events=len(batch),
        n_optimized=result.n_optimized,
        rmse=rmse,
        raw_rmse=baseline,
        success=rmse < cfg.simulator.gate_px,
        lml_initial=result.lml_initial,
        lml_final=result.lml_final,
        iterations=result.iterations,
        runtime=time.perf_counter() - started,
    )


def _sensor_centre(cfg: Config):
    return (cfg.sensor.width / 2, cfg.sensor.height / 2)


def summarize(runs: Sequence[RunResult], scene: str, motion: str, cfg: Config, runtime: float = 0.0) -> EvalReport:
    if not runs:
        raise ValueError("cannot summarize zero runs")
    gate = cfg.simulator.gate_px
    successes = [r.rmse for r in runs if r.success]
    return EvalReport(
        scene=scene,
        motion=motion,
        gate_px=gate,
        n_runs=len(runs),
        success_rate=len(successes) / len(runs),
        mean_rmse=float(np.mean(successes)) if successes else None,
        mean_raw_rmse=float(np.mean([r.raw_rmse for r in runs])),
        runs=list(runs),
        runtime=runtime,
        config=cfg.dict(),
    )


def run_benchmark(n_runs: int, scene: Optional[str] = None, motion: Optional[str] = None,
                  cfg: Optional[Config] = None, seed: Optional[int] = None, threads: int = 1) -> EvalReport:
    """Compensate and score `n_runs` independent simulated batches."""
    cfg = cfg or Config()
    if n_runs < 1:
        raise ValueError(f"n_runs must be >= 1, got {n_runs}")
    scene = scene or cfg.simulator.scene
    motion = motion or cfg.simulator.motion
    seed = cfg.simulator.seed if seed is None else seed
    logging.info(f"Benchmark {scene}/{motion}: {n_runs} runs, seed {seed}")
    started = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(lambda i: _run_one(i, scene, motion, cfg, seed), range(n_runs)))
    else:
        runs = [_run_one(i, scene, motion, cfg, seed) for i in range(n_runs)]
    report = summarize(runs, scene, motion, cfg, time.perf_counter() - started)
    mean = 'n/a' if report.mean_rmse is None else f"{report.mean_rmse:.3f}px"
    logging.info(f"Benchmark {scene}/{motion}: success {report.success_rate:.0%}, mean RMSE {mean}")
    return report


def run_matrix(scenes: Sequence[str] = ('tags', 'rocks'), motions: Sequence[str] = ('translation', 'se2'),
               n_runs: int = 20, cfg: Optional[Config] = None, seed: Optional[int] = None,
               threads: int = 1) -> List[EvalReport]:
    """One benchmark per (scene, motion) pair, in row-major order."""
    return [run_benchmark(n_runs, s, m, cfg, seed, threads) for s in scenes for m in motions]
