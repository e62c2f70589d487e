"""SE(2) motion compensation of an event batch by GP marginal-likelihood maximisation.

The occupancy GP over a batch uses unit targets and the kernel

    k_f(i, j) = σ_f · exp(−‖T(t_i)e_i − T(t_j)e_j‖² / (2 l_f²))

so the trajectory inducing values act as kernel hyperparameters. The negative log
marginal likelihood and its analytic gradient are minimised with BFGS, coarse to fine
over the kernel lengthscale.
"""

import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize

from .events import EventArray, EventBatch, downsample_batch
from .gp import GpModel, SingularModelError, SqExpKernel
from .se2 import Se2Trajectory, compensate_batch, make_trajectory, rotation
from .validator import MotionCompConfig

# returned instead of a likelihood when the Gram matrix cannot be factorised
PENALTY = 1e12
# coarse continuation stages never use fewer events than this
COARSE_MIN_EVENTS = 200
NULL_SEED = 0


@dataclass
class MotionCompResult:
    trajectory: Se2Trajectory
    compensated: np.ndarray
    lml_initial: float
    lml_final: float
    converged: bool
    iterations: int
    n_optimized: int
    runtime: float = 0.0
    message: str = ''
    # Δ_min actually applied, after calibration against the shuffled batch
    lml_threshold: float = 0.0
    null_gain: Optional[float] = None

    @property
    def lml_gain(self) -> float:
        return self.lml_final - self.lml_initial


def occupancy_kernel(cfg: MotionCompConfig, lengthscale: Optional[float] = None) -> SqExpKernel:
    return SqExpKernel(cfg.kf_scale, cfg.kf_lengthscale if lengthscale is None else lengthscale)


def kf_gram(traj: Se2Trajectory, batch: EventBatch, cfg: MotionCompConfig) -> np.ndarray:
    if len(batch) == 0:
        raise ValueError("cannot build a Gram matrix for an empty batch")
    return occupancy_kernel(cfg).matrix(compensate_batch(traj, batch))


class MotionObjective:
    """Negative log marginal likelihood of the occupancy GP as a function of Θ.

    Interpolation weights of the trajectory GPs at the event times are computed once;
    they do not depend on Θ.
    """

    def __init__(self, traj: Se2Trajectory, batch: EventBatch, cfg: MotionCompConfig,
                 lengthscale: Optional[float] = None):
        if len(batch) == 0:
            raise ValueError("objective needs a non-empty batch")
        self.traj = traj
        self.batch = batch
        self.cfg = cfg
        self.kernel = occupancy_kernel(cfg, lengthscale)
        self.weights = traj.weights(batch.t)
        self.local = batch.xy - traj.origin
        self.ones = np.ones(len(batch))
        q = traj.size
        if cfg.model == 'translation':
            self.free = np.arange(q, 3 * q)
        else:
            self.free = np.arange(3 * q)

    @property
    def size(self) -> int:
        return len(self.free)

    def evaluate(self, theta_full: np.ndarray) -> Tuple[float, np.ndarray]:
        """Value and full-length gradient at a full parameter vector."""
        q = self.traj.size
        A_r, A_p = self.weights
        angles = A_r @ theta_full[:q]
        trans = A_p @ np.column_stack([theta_full[q:2 * q], theta_full[2 * q:]])

        c, s = np.cos(angles), np.sin(angles)
        d = self.local
        rotated = np.column_stack([c * d[:, 0] - s * d[:, 1], s * d[:, 0] + c * d[:, 1]])
        points = rotated + trans

        try:
            model = GpModel(points, self.ones, self.kernel, self.cfg.occupancy_noise)
        except SingularModelError:
            logging.debug("Occupancy Gram matrix singular; returning penalty value")
            return PENALTY, np.zeros(3 * q)

        lml = model.log_marginal_likelihood()
        M = model.lml_weight_matrix() * model.K
        # ∂lml/∂c_i = −(1/l²) Σ_j M_ij (c_i − c_j)
        G = -(points * M.sum(axis=1)[:, None] - M @ points) / self.kernel.lengthscale ** 2

        # ∂c_i/∂angle_i = R'(angle_i) d_i = [-s dx - c dy, c dx - s dy]
        d_rot = np.column_stack([-rotated[:, 1], rotated[:, 0]])
        grad = np.concatenate([
            A_r.T @ np.sum(G * d_rot, axis=1),
            A_p.T @ G[:, 0],
            A_p.T @ G[:, 1],
        ])
        return -lml, -grad


def objective(theta, batch: EventBatch, cfg: MotionCompConfig,
              traj: Optional[Se2Trajectory] = None) -> Tuple[float, np.ndarray]:
    """Negative log marginal likelihood and gradient at Θ (angles, then x, then y inducing values)."""
    traj = traj or initial_trajectory(batch, cfg)
    return MotionObjective(traj, batch, cfg).evaluate(np.asarray(theta, dtype=float))


def initial_trajectory(batch: EventBatch, cfg: MotionCompConfig) -> Se2Trajectory:
    t_end = max(batch.t_end, batch.t_start + 1e-9)
    return make_trajectory(batch.t_start, t_end, cfg.events_per_state, batch,
                           cfg.lengthscale_factor, cfg.trajectory_noise)


def warm_start_parameters(previous: MotionCompResult, traj: Se2Trajectory) -> np.ndarray:
    """Constant-velocity extrapolation of the end of `previous` into the frame of `traj`."""
    prev = previous.trajectory
    t_end = float(prev.inducing_times[-1])
    if prev.size > 1:
        h = 0.25 * float(np.mean(np.diff(prev.inducing_times)))
    else:
        h = max(1e-6, 0.25 * (t_end - prev.reference_time))
    theta, p = prev.poses([t_end - h, t_end])
    omega = (theta[1] - theta[0]) / h
    velocity = rotation(-theta[1]) @ ((p[1] - p[0]) / h)
    dt = traj.inducing_times - traj.reference_time
    return np.concatenate([omega * dt, velocity[0] * dt, velocity[1] * dt])


def lengthscale_stages(cfg: MotionCompConfig) -> List[float]:
    """Kernel lengthscales of the continuation, halving from `coarse_lengthscale` down to `kf_lengthscale`."""
    stages = []
    length = cfg.coarse_lengthscale
    while length > 1.5 * cfg.kf_lengthscale:
        stages.append(length)
        length /= 2
    stages.append(cfg.kf_lengthscale)
    return stages


def coarse_size(cfg: MotionCompConfig, n_opt: int) -> int:
    return min(n_opt, max(COARSE_MIN_EVENTS, int(cfg.coarse_fraction * n_opt)))


class ReducedObjective:
    """Per-event objective over the free, gauge-fixed parameters.

    The inducing values at the reference time are pinned to zero: the likelihood does
    not change under a rigid motion of all events, and the result is re-anchored there
    anyway. Angles are optimised as arc lengths at the lever arm of the batch so that
    every coordinate is in pixels.
    """

    def __init__(self, fn: MotionObjective, lever: float):
        q = fn.traj.size
        pinned = {0, q, 2 * q} if q > 1 else set(range(3 * q))
        self.fn = fn
        self.active = np.array([i for i in fn.free if i not in pinned], dtype=int)
        self.scale = np.where(self.active < q, lever, 1.0)
        self.full_size = 3 * q

    @property
    def size(self) -> int:
        return len(self.active)

    def reduce(self, theta_full: np.ndarray) -> np.ndarray:
        return theta_full[self.active] * self.scale

    def expand(self, u: np.ndarray) -> np.ndarray:
        full = np.zeros(self.full_size)
        full[self.active] = u / self.scale
        return full

    def __call__(self, u: np.ndarray) -> Tuple[float, np.ndarray]:
        value, grad = self.fn.evaluate(self.expand(u))
        n = len(self.fn.batch)
        return value / n, grad[self.active] / self.scale / n


def lever_arm(traj: Se2Trajectory, batch: EventBatch) -> float:
    d = batch.xy - traj.origin
    return max(1.0, float(np.sqrt(np.mean(np.sum(d * d, axis=1)))))


def _continuation(traj0: Se2Trajectory, opt_batch: EventBatch, cfg: MotionCompConfig,
                  theta_start: np.ndarray) -> Tuple[np.ndarray, int, str]:
    """BFGS at each stage lengthscale, each stage starting where the previous one stopped."""
    lever = lever_arm(traj0, opt_batch)
    theta = theta_start
    iterations, message = 0, 'no free parameters'
    stages = lengthscale_stages(cfg)
    for i, length in enumerate(stages):
        final = i == len(stages) - 1
        batch = opt_batch if final else downsample_batch(opt_batch, coarse_size(cfg, len(opt_batch)))
        problem = ReducedObjective(MotionObjective(traj0, batch, cfg, length), lever)
        if problem.size == 0:
            break
        u0 = problem.reduce(theta)
        f0, _ = problem(u0)
        res = minimize(problem, u0, jac=True, method='BFGS',
                       options={'maxiter': cfg.max_iterations, 'gtol': cfg.gtol})
        iterations += int(res.nit)
        message = str(res.message)
        if res.fun <= f0:
            theta = problem.expand(res.x)
        logging.debug(f"Stage l={length:g} on {len(batch)} events: {f0:.5f} -> {float(res.fun):.5f} "
                      f"per event in {res.nit} iterations")
    return theta, iterations, message


def _gauge_fixed(fn: MotionObjective, theta: np.ndarray, lever: float) -> np.ndarray:
    problem = ReducedObjective(fn, lever)
    return problem.expand(problem.reduce(theta))


def shuffled_batch(batch: EventBatch, seed: int = NULL_SEED) -> EventBatch:
    """Same times and positions with the positions randomly reassigned to the times."""
    perm = np.random.default_rng(seed).permutation(len(batch))
    events = EventArray(batch.t, batch.xy[perm], batch.events.polarity[perm])
    return EventBatch(events=events, t_start=batch.t_start, seed=batch.seed)


def null_gain(traj0: Se2Trajectory, opt_batch: EventBatch, cfg: MotionCompConfig) -> float:
    """Likelihood gain the optimiser reaches once positions no longer follow a motion."""
    shuffled = shuffled_batch(opt_batch)
    fine = MotionObjective(traj0, shuffled, cfg)
    zero = np.zeros(3 * traj0.size)
    f_zero, _ = fine.evaluate(zero)
    theta, _, _ = _continuation(traj0, shuffled, cfg, zero)
    f_best, _ = fine.evaluate(theta)
    return max(0.0, f_zero - f_best)


def compensate(batch: EventBatch, cfg: Optional[MotionCompConfig] = None,
               init: Optional[np.ndarray] = None) -> MotionCompResult:
    """Estimate the batch trajectory by BFGS and compensate every event of the batch."""
    cfg = cfg or MotionCompConfig()
    if len(batch) < 2:
        raise ValueError(f"compensate needs at least 2 events, got {len(batch)}")
    started = time.perf_counter()

    traj0 = initial_trajectory(batch, cfg)
    opt_batch = downsample_batch(batch, min(cfg.optimize_size, len(batch)))
    fn = MotionObjective(traj0, opt_batch, cfg)
    lever = lever_arm(traj0, opt_batch)

    theta_zero = np.zeros(3 * traj0.size)
    f_zero, _ = fn.evaluate(theta_zero)
    theta_start, f_start = theta_zero, f_zero
    if init is not None:
        theta_init = _gauge_fixed(fn, np.asarray(init, dtype=float), lever)
        f_init, _ = fn.evaluate(theta_init)
        if f_init < f_zero:
            theta_start, f_start = theta_init, f_init

    theta, iterations, message = _continuation(traj0, opt_batch, cfg, theta_start)
    f_best, _ = fn.evaluate(theta)
    if f_best > f_start:
        theta, f_best = theta_start, f_start

    n = len(opt_batch)
    lml_initial, lml_final = -f_zero, -f_best
    gain = lml_final - lml_initial
    threshold = cfg.min_lml_gain(n)
    baseline = None
    if threshold <= gain < cfg.lml_accept_per_event * n and cfg.null_gain_ratio > 0:
        baseline = null_gain(traj0, opt_batch, cfg)
        threshold = max(threshold, cfg.null_gain_ratio * baseline)
        logging.debug(f"Shuffled-batch gain {baseline:.3f}; threshold {threshold:.3f}")
    converged = gain >= threshold
    traj = traj0.with_parameters(theta).reanchored()
    compensated = compensate_batch(traj, batch)
    runtime = time.perf_counter() - started

    logging.info(
        f"BFGS on {n} events: lml {lml_initial:.3f} -> {lml_final:.3f} "
        f"in {iterations} iterations ({runtime:.2f}s): {message}"
    )
    if not converged:
        logging.info(f"Likelihood gain {gain:.3f} below threshold {threshold:.3f}")
    return MotionCompResult(
        trajectory=traj,
        compensated=compensated,
        lml_initial=lml_initial,
        lml_final=lml_final,
        converged=converged,
        iterations=iterations,
        n_optimized=n,
        runtime=runtime,
        message=message,
        lml_threshold=threshold,
        null_gain=baseline,
    )
