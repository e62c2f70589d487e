"""Event-only pattern tracking.

Each batch around the current seed is motion-compensated with a local SE(2) model, then
registered by homography to the previous compensated batch and to the dynamic template.
Frames: batch n is compensated into the frame of its first event time τ_n; a step
homography maps τ_n coordinates into τ_{n-1} coordinates, and the chain maps the
initial seed s_0 to the seed of the current batch.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .events import EventArray, EventBatch, collect_batch
from .fields import (DistanceField, Homography, PointAtInfinityError, RegistrationTerm,
                     build_distance_field, register_terms)
from .gp import SingularModelError, SqExpKernel
from .motion import MotionCompResult, compensate, initial_trajectory, warm_start_parameters
from .se2 import Se2Trajectory, pose_matrix
from .template import DynamicTemplate
from .validator import Config

TEMPLATE_EMPTY = 'template_empty'


class TerminationReason(str, Enum):
    LML_FAILURE = 'lml_failure'
    DIVERGENCE = 'divergence'
    BORDER = 'border'
    STREAM_DEPLETED = 'stream_depleted'
    REGISTRATION_FAILURE = 'registration_failure'


@dataclass
class BatchRecord:
    tau: float
    seed: np.ndarray
    trajectory: Se2Trajectory
    lml_initial: float
    lml_final: float
    n_events: int
    registration_cost: Optional[float] = None
    # maps τ_n coordinates to τ_{n-1} coordinates
    step: Optional[Homography] = None
    notes: List[str] = field(default_factory=list)


@dataclass
class Track:
    id: int
    seed0: np.ndarray
    t0: float
    status: str = 'active'
    reason: Optional[TerminationReason] = None
    history: List[Tuple[float, np.ndarray]] = field(default_factory=list)
    H_chain: Homography = field(default_factory=Homography.identity)
    records: List[BatchRecord] = field(default_factory=list)
    template: Optional[DynamicTemplate] = field(default=None, repr=False)

    def __post_init__(self):
        self.seed0 = np.asarray(self.seed0, dtype=float).reshape(2)

    @property
    def active(self) -> bool:
        return self.status == 'active'

    @property
    def seed(self) -> np.ndarray:
        return self.history[-1][1] if self.history else self.seed0

    @property
    def duration(self) -> float:
        return self.history[-1][0] - self.history[0][0] if self.history else 0.0

    def append(self, t: float, position) -> None:
        if self.history and not t > self.history[-1][0]:
            raise ValueError(f"history time {t} does not follow {self.history[-1][0]}")
        self.history.append((float(t), np.asarray(position, dtype=float).reshape(2)))

    def end(self, reason: TerminationReason) -> None:
        if not self.active:
            raise ValueError(f"track {self.id} already ended ({self.reason.value})")
        self.status = 'ended'
        self.reason = reason
        t = self.history[-1][0] if self.history else self.t0
        logging.info(f"Track {self.id} ended at t={t:.6f} after {len(self.records)} batches: {reason.value}")

    def position_at(self, t: float) -> np.ndarray:
        """Continuous seed position for t within the tracked span."""
        if not self.records:
            raise ValueError(f"track {self.id} has no processed batches")
        taus = np.array([r.tau for r in self.records])
        if t < taus[0] or t > taus[-1]:
            raise ValueError(f"t={t} outside tracked span [{taus[0]}, {taus[-1]}]")
        if len(taus) == 1:
            return self.records[0].seed.copy()
        i = min(int(np.searchsorted(taus, t, side='right')) - 1, len(taus) - 2)
        prev, nxt = self.records[i], self.records[i + 1]
        return interpolate_seed(prev.trajectory, prev.seed, prev.tau, nxt.seed, nxt.tau, t)


def _se2_back(traj: Se2Trajectory, t: float, point: np.ndarray) -> np.ndarray:
    """Where a point of the trajectory's reference frame is observed at time t."""
    Minv = np.linalg.inv(pose_matrix(traj, t))
    return Minv[:2, :2] @ point + Minv[:2, 2]


def interpolate_seed(traj: Se2Trajectory, seed_prev, tau_prev: float, seed_next, tau_next: float,
                     t: float) -> np.ndarray:
    """SE(2)-propagated previous seed plus the linear correction that closes the gap at τ_next."""
    seed_prev = np.asarray(seed_prev, dtype=float)
    predicted = _se2_back(traj, tau_next, seed_prev)
    alpha = (np.asarray(seed_next, dtype=float) - predicted) / (tau_next - tau_prev)
    return _se2_back(traj, t, seed_prev) + (t - tau_prev) * alpha


def update_seed(track: Track, traj: Se2Trajectory, H_new: Homography, t: float, tau_next: float) -> np.ndarray:
    """Seed at t in [τ_{n-1}, τ_n] from the last history sample and the new chain homography."""
    tau_prev, seed_prev = track.history[-1]
    if not tau_prev <= t <= tau_next:
        raise ValueError(f"t={t} outside [{tau_prev}, {tau_next}]")
    seed_next = H_new.project(track.seed0)[0]
    return interpolate_seed(traj, seed_prev, tau_prev, seed_next, tau_next, t)


def near_border(point, cfg: Config) -> bool:
    m = cfg.tracker.margin(cfg.sensor.patch_radius)
    x, y = point
    return bool(x < m or y < m or x > cfg.sensor.width - 1 - m or y > cfg.sensor.height - 1 - m)


def check_termination(track: Track, motion_result: MotionCompResult, H_new: Optional[Homography],
                      seed_se2_prediction, cfg: Config) -> Optional[TerminationReason]:
    """Return a termination reason, or None to continue."""
    if not motion_result.converged:
        return TerminationReason.LML_FAILURE
    if H_new is None:
        seed = np.asarray(seed_se2_prediction, dtype=float)
    else:
        seed = H_new.project(track.seed0)[0]
        gap = float(np.linalg.norm(seed - np.asarray(seed_se2_prediction, dtype=float)))
        if gap > cfg.tracker.divergence_px:
            logging.debug(f"Track {track.id}: homography and SE(2) seeds differ by {gap:.2f}px")
            return TerminationReason.DIVERGENCE
    if near_border(seed, cfg):
        return TerminationReason.BORDER
    return None


@dataclass
class _Previous:
    batch: EventBatch
    result: MotionCompResult
    field: DistanceField


def _field(points, cfg: Config) -> DistanceField:
    kernel = SqExpKernel(cfg.motion.kf_scale, cfg.motion.kf_lengthscale)
    return build_distance_field(points, kernel, cfg.motion.occupancy_noise, cfg.tracker.field_support_limit)


def _register(track: Track, moving: np.ndarray, moving_field: DistanceField, prev: _Previous,
              template_field: Optional[DistanceField], virtual: Optional[np.ndarray],
              H_init: Homography, cfg: Config):
    tcfg = cfg.tracker
    terms = [RegistrationTerm(moving, prev.field, prev.result.compensated, moving_field)]
    if template_field is not None:
        terms.append(RegistrationTerm(moving, template_field, virtual, moving_field, pre=track.H_chain.inverse()))
    return register_terms(terms, H_init, cauchy_scale=tcfg.cauchy_scale,
                          max_iterations=tcfg.lm_max_iterations, initial_lambda=tcfg.lm_initial_lambda)


def track_pattern(stream: EventArray, s0, t0: float, cfg: Optional[Config] = None, track_id: int = 0) -> Track:
    cfg = cfg or Config()
    mcfg, tcfg = cfg.motion, cfg.tracker
    radius = cfg.sensor.patch_radius
    track = Track(track_id, s0, t0)
    if len(stream) == 0:
        track.end(TerminationReason.STREAM_DEPLETED)
        return track
    if near_border(track.seed0, cfg):
        track.end(TerminationReason.BORDER)
        return track

    template = DynamicTemplate.around(track.seed0, radius, tcfg.template_padding, tcfg.template_threshold)
    track.template = template
    prev: Optional[_Previous] = None
    t_from = float(t0)

    for _ in range(tcfg.max_batches):
        batch = collect_batch(stream, track.seed, t_from, mcfg.batch_size, radius)
        if batch.depleted or len(batch) < 2:
            track.end(TerminationReason.STREAM_DEPLETED)
            break
        tau = batch.t_start
        init = warm_start_parameters(prev.result, initial_trajectory(batch, mcfg)) if prev else None
        try:
            result = compensate(batch, mcfg, init)
        except SingularModelError as e:
            logging.debug(f"Track {track.id}: compensation failed: {e}")
            track.end(TerminationReason.LML_FAILURE)
            break
        if not result.converged:
            track.end(TerminationReason.LML_FAILURE)
            break

        record = BatchRecord(tau, track.seed, result.trajectory, result.lml_initial, result.lml_final, len(batch))
        try:
            current_field = _field(result.compensated, cfg)
        except SingularModelError as e:
            logging.debug(f"Track {track.id}: field build failed: {e}")
            track.end(TerminationReason.REGISTRATION_FAILURE)
            break

        if prev is None:
            reason = check_termination(track, result, None, track.seed, cfg)
            if reason is not None:
                track.end(reason)
                break
            track.append(tau, track.seed)
        else:
            H_pred = Homography(pose_matrix(prev.result.trajectory, tau))
            se2_seed = H_pred.inverse().project(track.seed)[0]
            try:
                if tcfg.registration_mode == 'se2-only':
                    step, cost = H_pred, None
                else:
                    template_field = virtual = None
                    if tcfg.registration_mode == 'full':
                        if template.empty:
                            record.notes.append(TEMPLATE_EMPTY)
                        else:
                            virtual = template.virtual_events()
                            template_field = _field(virtual, cfg)
                    reg = _register(track, result.compensated, current_field, prev,
                                    template_field, virtual, H_pred, cfg)
                    if not reg.converged:
                        track.end(TerminationReason.REGISTRATION_FAILURE)
                        break
                    step, cost = reg.H, reg.cost
                H_new = step.inverse().compose(track.H_chain)
                seed = H_new.project(track.seed0)[0]
            except (PointAtInfinityError, SingularModelError, ValueError) as e:
                logging.debug(f"Track {track.id}: registration failed: {e}")
                track.end(TerminationReason.REGISTRATION_FAILURE)
                break

            reason = check_termination(track, result, H_new, se2_seed, cfg)
            if reason is not None:
                track.end(reason)
                break
            record.seed = seed
            record.registration_cost = cost
            record.step = step
            track.H_chain = H_new
            track.append(tau, seed)

        try:
            template.accumulate(track.H_chain.inverse().project(result.compensated))
        except PointAtInfinityError:
            logging.debug(f"Track {track.id}: batch at t={tau:.6f} not added to the template")
        track.records.append(record)
        prev = _Previous(batch, result, current_field)
        t_from = float(np.nextafter(batch.t_end, np.inf))
    return track


def track_many(stream: EventArray, seeds: Sequence[Tuple[np.ndarray, float]], cfg: Optional[Config] = None,
               threads: int = 1) -> List[Track]:
    """Independent tracks over a shared stream, returned in seed order."""
    cfg = cfg or Config()
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    jobs = [(stream, s, t, cfg, i) for i, (s, t) in enumerate(seeds)]
    if threads == 1 or len(jobs) <= 1:
        return [track_pattern(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: track_pattern(*job), jobs))
