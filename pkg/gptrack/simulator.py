"""Synthetic events from planar landmark scenes moving under known trajectories.

Scenes are schematic: only edge geometry matters to the compensation and tracking
methods, so a scene is a set of landmark points sampled along edges. An event is a
landmark drawn at a uniform random time, moved by the ground-truth pose and perturbed
by isotropic pixel noise.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .events import EventArray, EventBatch, whole_batch
from .gp import SqExpKernel
from .validator import SensorGeometry, SimulatorConfig

EDGE_SPACING = 0.5


@dataclass(frozen=True, eq=False)
class Scene:
    kind: str
    landmarks: np.ndarray
    # relative event rate per landmark
    density: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.landmarks, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            raise ValueError("a scene needs at least one landmark")
        w = np.ones(len(pts)) if self.density is None else np.asarray(self.density, dtype=float).reshape(-1)
        if len(w) != len(pts) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("density must be non-negative with one entry per landmark")
        object.__setattr__(self, 'landmarks', pts)
        object.__setattr__(self, 'density', w / w.sum())

    @property
    def extent(self) -> float:
        return float(np.max(np.abs(self.landmarks)))


def square_outline(center, side: float, spacing: float = EDGE_SPACING) -> np.ndarray:
    n = max(1, int(round(side / spacing)))
    h = side / 2
    corners = np.asarray(center, dtype=float) + np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
    s = np.arange(n)[:, None] / n
    return np.vstack([a + s * (b - a) for a, b in zip(corners, np.roll(corners, -1, axis=0))])


def _tags(rng: np.random.Generator) -> np.ndarray:
    parts = []
    for cx in (-6.0, 6.0):
        for cy in (-6.0, 6.0):
            center = np.array([cx, cy]) + rng.uniform(-0.5, 0.5, 2)
            parts.append(square_outline(center, rng.uniform(6.0, 8.0)))
            if rng.random() < 0.5:
                parts.append(square_outline(center + rng.uniform(-1.0, 1.0, 2), rng.uniform(2.0, 3.5)))
    return np.vstack(parts)


def _rocks(rng: np.random.Generator, count: int = 30) -> np.ndarray:
    parts = []
    for _ in range(count):
        center = rng.uniform(-10.0, 10.0, 2)
        r0 = rng.uniform(0.8, 2.5)
        amps = rng.uniform(0.0, 0.15, 3)
        phases = rng.uniform(0.0, 2 * np.pi, 3)
        n = max(8, int(np.ceil(2 * np.pi * r0 * 1.1 / EDGE_SPACING)))
        phi = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        r = r0 * (1 + sum(a * np.cos(k * phi + p) for k, a, p in zip((2, 3, 4), amps, phases)))
        parts.append(center + np.column_stack([r * np.cos(phi), r * np.sin(phi)]))
    return np.vstack(parts)


def make_scene(kind: str, rng=None) -> Scene:
    rng = np.random.default_rng(rng)
    if kind == 'tags':
        return Scene(kind, _tags(rng))
    if kind == 'rocks':
        return Scene(kind, _rocks(rng))
    raise ValueError(f"unknown scene kind: {kind}")


@dataclass(frozen=True, eq=False)
class GroundTruthTrajectory:
    """Absolute pattern poses: a landmark l appears at R(θ(t)) l + p(t)."""

    kind: str
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    theta_fn: Optional[Callable] = field(default=None, repr=False)
    trans_fn: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, 'origin', np.asarray(self.origin, dtype=float).reshape(2))
        object.__setattr__(self, 'velocity', np.asarray(self.velocity, dtype=float).reshape(2))

    def pose(self, t) -> Tuple[np.ndarray, np.ndarray]:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.theta_fn is None:
            return np.zeros(len(t)), self.origin + t[:, None] * self.velocity
        return self.theta_fn(t), self.origin + self.trans_fn(t)

    def project(self, t, landmarks) -> np.ndarray:
        """Image positions of landmarks[i] at times t[i] (or one time for all)."""
        pts = np.asarray(landmarks, dtype=float).reshape(-1, 2)
        theta, p = self.pose(t)
        if len(theta) == 1 and len(pts) > 1:
            theta, p = np.repeat(theta, len(pts)), np.repeat(p, len(pts), axis=0)
        c, s = np.cos(theta), np.sin(theta)
        return np.column_stack([c * pts[:, 0] - s * pts[:, 1], s * pts[:, 0] + c * pts[:, 1]]) + p

    def samples(self, t) -> np.ndarray:
        """Rows of (t, θ, px, py)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        theta, p = self.pose(t)
        return np.column_stack([t, theta, p])


def constant_velocity(velocity, origin=(0.0, 0.0)) -> GroundTruthTrajectory:
    return GroundTruthTrajectory('translation', origin, velocity)


def random_translation(rng, duration: float, max_translation: float, origin=(0.0, 0.0)) -> GroundTruthTrajectory:
    rng = np.random.default_rng(rng)
    speed = rng.uniform(0.5, 1.0) * max_translation / duration
    heading = rng.uniform(0.0, 2 * np.pi)
    return constant_velocity(speed * np.array([np.cos(heading), np.sin(heading)]), origin)


def random_se2(rng, duration: float, max_angle: float, max_translation: float, origin=(0.0, 0.0),
               knots: int = 9) -> GroundTruthTrajectory:
    """Smooth SE(2) motion from GP samples at knots, starting at the identity and scaled to the bounds."""
    rng = np.random.default_rng(rng)
    ts = np.linspace(0.0, duration, knots)
    K = SqExpKernel(1.0, duration / 2).matrix(ts)
    w, V = np.linalg.eigh(K)
    values = V @ (np.sqrt(np.clip(w, 0.0, None))[:, None] * rng.standard_normal((knots, 3)))
    values -= values[0]

    dense = CubicSpline(ts, values, axis=0)(np.linspace(0.0, duration, 256))
    peak_angle = np.max(np.abs(dense[:, 0]))
    peak_shift = np.max(np.linalg.norm(dense[:, 1:], axis=1))
    if peak_angle > 0:
        values[:, 0] *= rng.uniform(0.5, 1.0) * max_angle / peak_angle
    if peak_shift > 0:
        values[:, 1:] *= rng.uniform(0.5, 1.0) * max_translation / peak_shift

    spline = CubicSpline(ts, values, axis=0)
    return GroundTruthTrajectory(
        'se2', origin,
        theta_fn=lambda t: spline(t)[:, 0],
        trans_fn=lambda t: spline(t)[:, 1:],
    )


def sampled_trajectory(samples: np.ndarray) -> GroundTruthTrajectory:
    """Trajectory linearly interpolated from (t, θ, px, py) rows; exact at the sample times."""
    s = np.asarray(samples, dtype=float).reshape(-1, 4)
    order = np.argsort(s[:, 0], kind='stable')
    s = s[order]
    return GroundTruthTrajectory(
        'sampled',
        theta_fn=lambda t: np.interp(t, s[:, 0], s[:, 1]),
        trans_fn=lambda t: np.column_stack([np.interp(t, s[:, 0], s[:, 2]), np.interp(t, s[:, 0], s[:, 3])]),
    )


def make_ground_truth(motion: str, rng, cfg: SimulatorConfig, origin=(0.0, 0.0)) -> GroundTruthTrajectory:
    if motion == 'translation':
        return random_translation(rng, cfg.duration, cfg.max_translation, origin)
    if motion == 'se2':
        return random_se2(rng, cfg.duration, cfg.max_angle, cfg.max_translation, origin)
    raise ValueError(f"unknown motion kind: {motion}")


def _sample(scene: Scene, traj: GroundTruthTrajectory, duration: float, count: int, noise: float, rng):
    times = np.sort(rng.uniform(0.0, duration, count))
    assoc = rng.choice(len(scene.landmarks), size=count, p=scene.density)
    xy = traj.project(times, scene.landmarks[assoc])
    if noise > 0:
        xy = xy + rng.normal(0.0, noise, xy.shape)
    polarity = rng.integers(0, 2, count)
    return times, xy, polarity, assoc


def generate_events(scene: Scene, traj: GroundTruthTrajectory, duration: float, count: int,
                    noise: float = 0.0, seed=None) -> Tuple[EventBatch, np.ndarray]:
    """One batch of `count` events and the landmark index of every event."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if noise < 0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    if not duration > 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    rng = np.random.default_rng(seed)
    times, xy, polarity, assoc = _sample(scene, traj, duration, count, noise, rng)
    return whole_batch(EventArray(times, xy, polarity)), assoc


def generate_stream(scene: Scene, traj: GroundTruthTrajectory, duration: float, rate: float,
                    noise: float = 0.0, seed=None,
                    geometry: Optional[SensorGeometry] = None) -> Tuple[EventArray, np.ndarray]:
    """A long event stream at `rate` events per second; events leaving the sensor are dropped."""
    geometry = geometry or SensorGeometry()
    count = int(round(rate * duration))
    if count < 1:
        raise ValueError(f"rate * duration must give at least one event, got {rate} * {duration}")
    rng = np.random.default_rng(seed)
    times, xy, polarity, assoc = _sample(scene, traj, duration, count, noise, rng)
    inside = (xy[:, 0] >= 0) & (xy[:, 0] < geometry.width) & (xy[:, 1] >= 0) & (xy[:, 1] < geometry.height)
    if not inside.all():
        logging.debug(f"Dropped {int((~inside).sum())} simulated events outside the sensor")
    return EventArray(times[inside], xy[inside], polarity[inside]), assoc[inside]


def noise_events(count: int, t_start: float, duration: float, center, radius: float, seed=None) -> EventArray:
    """Uniform random events in time and in the square window around `center`."""
    rng = np.random.default_rng(seed)
    times = np.sort(rng.uniform(t_start, t_start + duration, count))
    xy = np.asarray(center, dtype=float) + rng.uniform(-radius, radius, (count, 2))
    return EventArray(times, xy, rng.integers(0, 2, count))


@dataclass
class SimulatedRun:
    scene: Scene
    truth: GroundTruthTrajectory
    batch: EventBatch
    assoc: np.ndarray


def simulate_run(cfg: SimulatorConfig, run: int = 0, seed: Optional[int] = None,
                 scene: Optional[str] = None, motion: Optional[str] = None,
                 origin=None) -> SimulatedRun:
    """One (scene instance, trajectory, batch) draw from the stream seeded by (seed, run).

    The pattern starts at `origin`, by default the centre of the default sensor.
    """
    if origin is None:
        geometry = SensorGeometry()
        origin = (geometry.width / 2, geometry.height / 2)
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng([seed, run])
    sc = make_scene(scene or cfg.scene, rng)
    gt = make_ground_truth(motion or cfg.motion, rng, cfg, origin)
    batch, assoc = generate_events(sc, gt, cfg.duration, cfg.count, cfg.noise_px, rng)
    return SimulatedRun(sc, gt, batch, assoc)
