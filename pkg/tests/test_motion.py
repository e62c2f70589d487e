import time

import numpy as np
import pytest

from gptrack import motion
from gptrack.events import EventArray, collect_batch, whole_batch
from gptrack.evaluation import run_benchmark
from gptrack.gp import SingularModelError, SqExpKernel
from gptrack.motion import (
    PENALTY,
    MotionCompResult,
    MotionObjective,
    ReducedObjective,
    coarse_size,
    compensate,
    initial_trajectory,
    kf_gram,
    lengthscale_stages,
    objective,
    shuffled_batch,
    warm_start_parameters,
)
from gptrack.se2 import Se2Trajectory
from gptrack.simulator import constant_velocity, generate_events, make_scene, noise_events, random_se2
from gptrack.validator import Config, MotionCompConfig

CENTRE = (120.0, 90.0)


def _small_cfg(n, per_state, **kwargs):
    return MotionCompConfig(batch_size=n, optimize_size=n, events_per_state=per_state, **kwargs)


def _moving_batch(n, seed, noise=0.15):
    scene = make_scene('tags', seed)
    truth = random_se2(seed, 0.25, 0.1, 3.0, origin=CENTRE)
    batch, _ = generate_events(scene, truth, 0.25, n, noise, seed=seed)
    return batch


def test_kf_gram_examples():
    """Coincident events give σ_f, events l_f apart give σ_f·exp(-1/2)."""
    cfg = MotionCompConfig()
    same = whole_batch(EventArray([0.0, 0.1], [[5.0, 5.0], [5.0, 5.0]], [1, 0]))
    np.testing.assert_allclose(kf_gram(initial_trajectory(same, cfg), same, cfg), np.ones((2, 2)))

    apart = whole_batch(EventArray([0.0, 0.1], [[5.0, 5.0], [5.25, 5.0]], [1, 0]))
    K = kf_gram(initial_trajectory(apart, cfg), apart, cfg)
    assert K[0, 1] == pytest.approx(np.exp(-0.5))
    np.testing.assert_allclose(np.diag(K), cfg.kf_scale)


@pytest.mark.parametrize("seed", range(10))
def test_objective_gradient_matches_finite_differences(seed):
    """The analytic gradient through the trajectory GPs matches central differences."""
    batch = _moving_batch(50, seed)
    cfg = _small_cfg(50, 10)
    traj = initial_trajectory(batch, cfg)
    rng = np.random.default_rng(seed)
    q = traj.size
    theta = np.concatenate([rng.normal(0, 0.01, q), rng.normal(0, 0.3, 2 * q)])

    _, grad = objective(theta, batch, cfg, traj)
    h = 1e-6
    numeric = np.empty_like(theta)
    for i in range(len(theta)):
        step = np.zeros_like(theta)
        step[i] = h
        numeric[i] = (objective(theta + step, batch, cfg, traj)[0] - objective(theta - step, batch, cfg, traj)[0]) / (2 * h)
    np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-4 * np.max(np.abs(numeric)))


def test_reduced_objective_pins_reference_pose_and_scales_angles():
    """The optimiser's view drops the reference inducing values and works in pixels."""
    batch = _moving_batch(60, 7)
    cfg = _small_cfg(60, 15)
    traj = initial_trajectory(batch, cfg)
    q = traj.size
    fn = MotionObjective(traj, batch, cfg)
    problem = ReducedObjective(fn, lever=10.0)
    assert problem.size == 3 * q - 3
    assert not set(problem.active) & {0, q, 2 * q}

    rng = np.random.default_rng(7)
    u = rng.normal(0, 0.2, problem.size)
    value, grad = problem(u)
    full_value, full_grad = fn.evaluate(problem.expand(u))
    assert value == pytest.approx(full_value / len(batch))
    np.testing.assert_allclose(grad, full_grad[problem.active] / problem.scale / len(batch))
    assert problem.expand(u)[1] == pytest.approx(u[0] / 10.0)
    np.testing.assert_allclose(problem.reduce(problem.expand(u)), u)


def test_lengthscale_stages_halve_down_to_the_kernel_lengthscale():
    """Continuation runs 8, 4, 2, 1, 0.5 px before the final kernel lengthscale."""
    assert lengthscale_stages(MotionCompConfig()) == [8.0, 4.0, 2.0, 1.0, 0.5, 0.25]
    assert lengthscale_stages(MotionCompConfig(coarse_lengthscale=0.25)) == [0.25]
    assert coarse_size(MotionCompConfig(), 1250) == 312
    assert coarse_size(MotionCompConfig(), 400) == 200
    assert coarse_size(MotionCompConfig(), 150) == 150


def test_shuffled_batch_keeps_times_and_positions():
    """The null batch reassigns positions to times without changing either set."""
    batch = _moving_batch(40, 8)
    shuffled = shuffled_batch(batch)
    np.testing.assert_array_equal(shuffled.t, batch.t)
    np.testing.assert_array_equal(np.sort(shuffled.xy, axis=0), np.sort(batch.xy, axis=0))
    assert not np.array_equal(shuffled.xy, batch.xy)
    np.testing.assert_array_equal(shuffled_batch(batch).xy, shuffled.xy)


def test_objective_is_deterministic():
    """Repeated evaluations are bit-identical."""
    batch = _moving_batch(80, 1)
    cfg = _small_cfg(80, 20)
    theta = np.full(3 * initial_trajectory(batch, cfg).size, 0.01)
    a = objective(theta, batch, cfg)
    b = objective(theta, batch, cfg)
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1], b[1])


def test_singular_gram_returns_penalty(mocker):
    """A Gram matrix that cannot be factorised yields the penalty value and no gradient."""
    batch = _moving_batch(30, 2)
    cfg = _small_cfg(30, 10)
    mocker.patch.object(motion, 'GpModel', side_effect=SingularModelError("forced"))
    value, grad = objective(np.zeros(3 * initial_trajectory(batch, cfg).size), batch, cfg)
    assert value == PENALTY
    assert not np.any(grad)


def test_translation_model_keeps_rotation_at_zero():
    """The translation model never moves the angle inducing values."""
    batch = _moving_batch(120, 3)
    cfg = _small_cfg(120, 40, model='translation')
    traj = initial_trajectory(batch, cfg)
    assert MotionObjective(traj, batch, cfg).size == 2 * traj.size
    result = compensate(batch, cfg)
    theta, _ = result.trajectory.poses(batch.t)
    np.testing.assert_array_equal(theta, 0.0)


def test_compensate_needs_two_events():
    """A single event cannot be compensated."""
    batch = whole_batch(EventArray([0.0], [[1.0, 1.0]], [1]))
    with pytest.raises(ValueError):
        compensate(batch, MotionCompConfig())


def test_static_batch_stays_near_identity():
    """Events that are already sharp keep an identity trajectory."""
    scene = make_scene('tags', 0)
    batch, _ = generate_events(scene, constant_velocity((0.0, 0.0), CENTRE), 0.25, 300, 0.0, seed=0)
    result = compensate(batch, _small_cfg(300, 100))
    assert result.lml_final >= result.lml_initial
    theta, p = result.trajectory.poses(batch.t)
    assert np.max(np.abs(theta)) < 1e-2
    assert np.max(np.linalg.norm(p, axis=1)) < 0.1


def test_result_is_anchored_and_never_worse():
    """The reference event stays in place and the likelihood never drops."""
    batch = _moving_batch(200, 4)
    result = compensate(batch, _small_cfg(200, 50))
    assert result.lml_final >= result.lml_initial
    assert result.n_optimized == 200
    np.testing.assert_allclose(result.compensated[0], batch.xy[0], atol=1e-9)
    assert result.lml_threshold >= 0.02 * 200
    assert result.converged == (result.lml_gain >= result.lml_threshold)


def test_compensation_sharpens_a_moving_batch():
    """Compensated events lie closer to their landmarks than the raw events."""
    scene = make_scene('tags', 11)
    truth = constant_velocity((16.0, -8.0), CENTRE)
    batch, assoc = generate_events(scene, truth, 0.25, 250, 0.1, seed=11)
    result = compensate(batch, _small_cfg(250, 50, model='translation'))
    landmarks_now = truth.project([batch.t[0]], scene.landmarks[assoc])
    raw = np.sqrt(np.mean(np.sum((batch.xy - landmarks_now) ** 2, axis=1)))
    fixed = np.sqrt(np.mean(np.sum((result.compensated - landmarks_now) ** 2, axis=1)))
    assert raw > 1.5
    assert fixed < 0.5 * raw


def test_threshold_is_calibrated_on_the_shuffled_batch(mocker):
    """Below the accept level, Δ_min becomes the ratio times the shuffled-batch gain."""
    batch = _moving_batch(150, 9)
    cfg = _small_cfg(150, 50, lml_gain_per_event=1e-9, lml_accept_per_event=1e6)
    baseline = mocker.patch.object(motion, 'null_gain', return_value=1e6)
    result = compensate(batch, cfg)
    baseline.assert_called_once()
    assert result.null_gain == 1e6
    assert result.lml_threshold == pytest.approx(2e6)
    assert not result.converged


def test_large_gain_or_zero_ratio_skips_the_shuffled_batch(mocker):
    """The shuffled batch is only optimised when its gain can change the verdict."""
    batch = _moving_batch(150, 10)
    baseline = mocker.patch.object(motion, 'null_gain', return_value=0.0)
    compensate(batch, _small_cfg(150, 50, lml_gain_per_event=1e-9, null_gain_ratio=0.0))
    compensate(batch, _small_cfg(150, 50, lml_gain_per_event=1e-9, lml_accept_per_event=1e-9))
    baseline.assert_not_called()


def test_translating_the_batch_translates_the_result():
    """Shifting every event shifts the compensated events by the same amount."""
    batch = _moving_batch(150, 5)
    shift = np.array([7.0, -3.0])
    moved = whole_batch(EventArray(batch.t, batch.xy + shift, batch.events.polarity))
    cfg = _small_cfg(150, 50)
    a = compensate(batch, cfg)
    b = compensate(moved, cfg)
    np.testing.assert_allclose(b.compensated, a.compensated + shift, atol=1e-3)


def test_warm_start_extrapolates_velocity():
    """The warm start continues the previous batch at constant velocity."""
    k = SqExpKernel(1.0, 0.3)
    prev_traj = Se2Trajectory([0.0, 0.1, 0.2], [0.0, 0.0, 0.0], [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
                              k, k, reference_time=0.0)
    prev = MotionCompResult(prev_traj, np.zeros((0, 2)), 0.0, 0.0, True, 0, 0)
    nxt = Se2Trajectory([0.2, 0.3, 0.4], np.zeros(3), np.zeros((3, 2)), k, k, reference_time=0.2)
    params = warm_start_parameters(prev, nxt)
    assert params.shape == (9,)
    np.testing.assert_array_equal(params[:3], 0.0)
    np.testing.assert_array_equal(params[6:], 0.0)
    assert params[3] == 0.0
    assert 0.0 < params[4] < params[5]


@pytest.mark.slow
def test_translation_accuracy():
    """Constant-velocity translation: every run succeeds with sub-pixel mean error."""
    report = run_benchmark(20, 'tags', 'translation', Config(), seed=0)
    assert report.success_rate == 1.0
    assert report.mean_rmse < 1.0


@pytest.mark.slow
def test_se2_accuracy():
    """Smooth SE(2) motion: every run succeeds with mean error below 1.25 px."""
    report = run_benchmark(20, 'tags', 'se2', Config(), seed=0)
    assert report.success_rate == 1.0
    assert report.mean_rmse < 1.25


@pytest.mark.slow
def test_single_batch_runtime():
    """One full-size batch compensates within a minute."""
    batch = _moving_batch(1250, 0)
    result = compensate(batch, MotionCompConfig())
    assert result.runtime < 60.0


@pytest.mark.slow
def test_downsampled_optimisation():
    """Optimising 400 of 1250 events stays accurate and is much faster."""
    full = Config()
    fast = Config(motion={'optimize_size': 400})

    started = time.perf_counter()
    slow_report = run_benchmark(3, 'tags', 'se2', full, seed=1)
    full_time = time.perf_counter() - started

    started = time.perf_counter()
    fast_report = run_benchmark(3, 'tags', 'se2', fast, seed=1)
    fast_time = time.perf_counter() - started

    assert all(r.n_optimized == 400 and r.n_events == 1250 for r in fast_report.runs)
    assert fast_report.mean_rmse is not None and fast_report.mean_rmse < 1.5
    assert fast_time < full_time / 8
    assert slow_report.success_rate == 1.0


@pytest.mark.slow
def test_noise_batches_are_not_converged():
    """Uniform noise never gains enough likelihood over its shuffled copy."""
    cfg = MotionCompConfig()
    failures = 0
    for seed in range(10):
        stream = noise_events(4000, 0.0, 1.0, CENTRE, 15.0, seed=seed)
        batch = collect_batch(stream, CENTRE, 0.0, cfg.batch_size, 15.0)
        failures += not compensate(batch, cfg).converged
    assert failures >= 9
