"""Continuous-time SE(2) image-plane trajectories.

Rotation angle and the two translation components are three independent scalar GPs
over time. Their inducing values are the free parameters of the trajectory; the pose at
any time is the GP posterior mean evaluated through the cached interpolation weights.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Tuple

import numpy as np

from .events import EventBatch
from .gp import GpModel, SqExpKernel

DEFAULT_TRAJECTORY_NOISE = 1e-6


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True, eq=False)
class Se2Transform:
    theta: float = 0.0
    p: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if not np.isfinite(self.theta):
            raise ValueError(f"rotation angle must be finite, got {self.theta}")
        object.__setattr__(self, 'theta', float(self.theta))
        object.__setattr__(self, 'p', np.asarray(self.p, dtype=float).reshape(2))

    @classmethod
    def identity(cls) -> 'Se2Transform':
        return cls()

    @property
    def R(self) -> np.ndarray:
        return rotation(self.theta)

    def matrix(self) -> np.ndarray:
        M = np.eye(3)
        M[:2, :2] = self.R
        M[:2, 2] = self.p
        return M

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.R.T + self.p

    def inverse(self) -> 'Se2Transform':
        return Se2Transform(-self.theta, -(rotation(-self.theta) @ self.p))

    def compose(self, other: 'Se2Transform') -> 'Se2Transform':
        """self ∘ other: apply `other` first."""
        return Se2Transform(self.theta + other.theta, self.R @ other.p + self.p)


def apply_se2(T: Se2Transform, e) -> np.ndarray:
    return T.apply(e)


def inverse_se2(T: Se2Transform) -> Se2Transform:
    return T.inverse()


def compose_se2(A: Se2Transform, B: Se2Transform) -> Se2Transform:
    return A.compose(B)


@dataclass(frozen=True, eq=False)
class Se2Trajectory:
    """Rotation/translation GPs over time, acting about `origin` in image coordinates.

    Parameter vector layout: Q angles, then Q x-translations, then Q y-translations.
    `anchor` is post-composed with the GP pose; it is the identity until the trajectory
    is re-anchored after optimisation.
    """

    inducing_times: np.ndarray
    rot_values: np.ndarray
    trans_values: np.ndarray
    kernel_r: SqExpKernel
    kernel_p: SqExpKernel
    reference_time: float
    noise: float = DEFAULT_TRAJECTORY_NOISE
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    anchor: Se2Transform = field(default_factory=Se2Transform.identity)

    def __post_init__(self):
        s = np.array(self.inducing_times, dtype=float).reshape(-1)
        if len(s) < 1:
            raise ValueError("a trajectory needs at least one inducing time")
        if np.any(np.diff(s) <= 0):
            raise ValueError("inducing times must be strictly increasing")
        object.__setattr__(self, 'inducing_times', s)
        object.__setattr__(self, 'rot_values', np.array(self.rot_values, dtype=float).reshape(len(s)))
        object.__setattr__(self, 'trans_values', np.array(self.trans_values, dtype=float).reshape(len(s), 2))
        object.__setattr__(self, 'origin', np.asarray(self.origin, dtype=float).reshape(2))

    @property
    def size(self) -> int:
        return len(self.inducing_times)

    @cached_property
    def _rot_model(self) -> GpModel:
        return GpModel(self.inducing_times, np.zeros(self.size), self.kernel_r, self.noise)

    @cached_property
    def _trans_model(self) -> GpModel:
        return GpModel(self.inducing_times, np.zeros(self.size), self.kernel_p, self.noise)

    def weights(self, t) -> Tuple[np.ndarray, np.ndarray]:
        """Interpolation weights (rotation, translation), each of shape (M, Q)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        A_r = self._rot_model.interpolation_weights(t)
        A_p = A_r if self.kernel_p == self.kernel_r else self._trans_model.interpolation_weights(t)
        return A_r, A_p

    def parameters(self) -> np.ndarray:
        return np.concatenate([self.rot_values, self.trans_values[:, 0], self.trans_values[:, 1]])

    def with_parameters(self, theta: np.ndarray) -> 'Se2Trajectory':
        theta = np.asarray(theta, dtype=float)
        q = self.size
        if theta.shape != (3 * q,):
            raise ValueError(f"expected {3 * q} parameters, got {theta.shape}")
        new = replace(self, rot_values=theta[:q], trans_values=np.column_stack([theta[q:2 * q], theta[2 * q:]]))
        # share factorisations; they depend on times and kernels only
        for name in ('_rot_model', '_trans_model'):
            if name in self.__dict__:
                new.__dict__[name] = self.__dict__[name]
        return new

    def raw_poses(self, t, weights: Optional[Tuple[np.ndarray, np.ndarray]] = None):
        """GP posterior means without the anchor: angles (M,) and translations (M, 2)."""
        A_r, A_p = weights if weights is not None else self.weights(t)
        return A_r @ self.rot_values, A_p @ self.trans_values

    def poses(self, t, weights=None):
        theta, p = self.raw_poses(t, weights)
        a = self.anchor
        if a.theta == 0.0 and not np.any(a.p):
            return theta, p
        return theta + a.theta, p @ a.R.T + a.p

    def reanchored(self) -> 'Se2Trajectory':
        """Copy whose pose at the reference time is exactly the identity."""
        theta, p = self.raw_poses([self.reference_time])
        new = replace(self, anchor=Se2Transform(theta[0], p[0]).inverse())
        for name in ('_rot_model', '_trans_model'):
            if name in self.__dict__:
                new.__dict__[name] = self.__dict__[name]
        return new

    def transform_points(self, t, xy, weights=None) -> np.ndarray:
        """Move each point xy[i] observed at t[i] by the pose at t[i], rotating about `origin`."""
        theta, p = self.poses(t, weights)
        d = np.asarray(xy, dtype=float) - self.origin
        c, s = np.cos(theta), np.sin(theta)
        out = np.empty_like(d)
        out[:, 0] = c * d[:, 0] - s * d[:, 1]
        out[:, 1] = s * d[:, 0] + c * d[:, 1]
        return out + p + self.origin


def make_trajectory(t_start: float, t_end: float, events_per_state: int, batch: EventBatch,
                    lengthscale_factor: float = 3.0, noise: float = DEFAULT_TRAJECTORY_NOISE) -> Se2Trajectory:
    """Zero trajectory with one inducing time every `events_per_state` events of `batch`."""
    if events_per_state < 1:
        raise ValueError(f"events_per_state must be >= 1, got {events_per_state}")
    if not t_start < t_end:
        raise ValueError(f"t_start ({t_start}) must precede t_end ({t_end})")
    t = batch.t
    n = len(t)
    if n < events_per_state:
        times = np.array([t_start])
    else:
        idx = list(range(0, n, events_per_state))
        if idx[-1] != n - 1:
            idx.append(n - 1)
        times = np.unique(t[idx])
    if len(times) > 1:
        spacing = float(np.mean(np.diff(times)))
    else:
        spacing = t_end - t_start
    kernel = SqExpKernel(1.0, lengthscale_factor * spacing)
    q = len(times)
    return Se2Trajectory(
        inducing_times=times,
        rot_values=np.zeros(q),
        trans_values=np.zeros((q, 2)),
        kernel_r=kernel,
        kernel_p=kernel,
        reference_time=float(t_start),
        noise=noise,
        origin=batch.seed,
    )


def pose_at(traj: Se2Trajectory, t: float) -> Se2Transform:
    theta, p = traj.poses([t])
    return Se2Transform(theta[0], p[0])


def pose_matrix(traj: Se2Trajectory, t: float) -> np.ndarray:
    """3×3 homogeneous matrix of the pose at t in image coordinates (rotation about the origin)."""
    T = pose_at(traj, t)
    c = traj.origin
    M = T.matrix()
    M[:2, 2] = c - T.R @ c + T.p
    return M


def compensate_batch(traj: Se2Trajectory, batch: EventBatch) -> np.ndarray:
    if len(batch) == 0:
        raise ValueError("cannot compensate an empty batch")
    return traj.transform_points(batch.t, batch.xy)
