import numpy as np
import pytest

from gptrack.simulator import (
    GroundTruthTrajectory,
    Scene,
    constant_velocity,
    generate_events,
    generate_stream,
    make_scene,
    noise_events,
    random_se2,
    sampled_trajectory,
    simulate_run,
    square_outline,
)
from gptrack.validator import SensorGeometry, SimulatorConfig


def test_square_outline_spacing():
    """Outline points are spaced half a pixel apart along each side."""
    pts = square_outline((0.0, 0.0), 4.0)
    assert len(pts) == 32
    assert np.max(np.abs(pts)) == pytest.approx(2.0)
    step = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    np.testing.assert_allclose(step[:7], 0.5)


@pytest.mark.parametrize("kind", ['tags', 'rocks'])
def test_scenes_fit_the_patch(kind):
    """Both scene kinds fit inside the patch window with a normalised density."""
    scene = make_scene(kind, 4)
    assert len(scene.landmarks) > 50
    assert scene.extent <= 15.0
    assert scene.density.sum() == pytest.approx(1.0)


def test_unknown_scene():
    """Unknown scene kinds and empty landmark sets are rejected."""
    with pytest.raises(ValueError):
        make_scene('clouds', 0)
    with pytest.raises(ValueError):
        Scene('empty', np.zeros((0, 2)))


def test_static_noiseless_events_lie_on_landmarks():
    """Without motion or noise every event sits on its landmark."""
    scene = make_scene('tags', 1)
    batch, assoc = generate_events(scene, constant_velocity((0.0, 0.0)), 1.0, 300, 0.0, seed=2)
    assert len(batch) == 300
    np.testing.assert_array_equal(batch.xy, scene.landmarks[assoc])
    assert np.all(np.diff(batch.t) >= 0)


def test_constant_velocity_position():
    """Constant-velocity motion moves events linearly in time."""
    truth = constant_velocity((5.0, 0.0))
    np.testing.assert_allclose(truth.project([0.5], [[0.0, 0.0]]), [[2.5, 0.0]])

    scene = Scene('dot', [[0.0, 0.0]])
    batch, _ = generate_events(scene, truth, 1.0, 50, 0.0, seed=0)
    np.testing.assert_allclose(batch.xy, np.column_stack([5.0 * batch.t, np.zeros(50)]))


def test_generation_is_deterministic():
    """The same seed gives the same events and associations."""
    scene = make_scene('rocks', 3)
    truth = random_se2(5, 0.25, 0.2, 8.0)
    a, assoc_a = generate_events(scene, truth, 0.25, 200, 0.15, seed=9)
    b, assoc_b = generate_events(scene, truth, 0.25, 200, 0.15, seed=9)
    np.testing.assert_array_equal(a.xy, b.xy)
    np.testing.assert_array_equal(a.t, b.t)
    np.testing.assert_array_equal(assoc_a, assoc_b)


def test_generate_events_validation():
    """Zero counts and negative noise are rejected."""
    scene = Scene('dot', [[0.0, 0.0]])
    truth = constant_velocity((0.0, 0.0))
    with pytest.raises(ValueError):
        generate_events(scene, truth, 1.0, 0)
    with pytest.raises(ValueError):
        generate_events(scene, truth, 1.0, 10, noise=-1.0)


def test_random_se2_bounds():
    """Random SE(2) motion starts at the origin and stays within its bounds."""
    truth = random_se2(0, 0.25, 0.2, 8.0, origin=(100.0, 50.0))
    theta, p = truth.pose(np.linspace(0.0, 0.25, 500))
    assert theta[0] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(p[0], [100.0, 50.0], atol=1e-12)
    assert np.max(np.abs(theta)) <= 0.2 * 1.01
    assert np.max(np.linalg.norm(p - [100.0, 50.0], axis=1)) <= 8.0 * 1.01


def test_sampled_trajectory_is_exact_at_samples():
    """A replayed ground truth reproduces its samples exactly."""
    truth = random_se2(2, 1.0, 0.2, 8.0)
    t = np.sort(np.random.default_rng(0).uniform(0, 1, 40))
    samples = truth.samples(t)
    replay = sampled_trajectory(samples[::-1])
    theta, p = replay.pose(t)
    np.testing.assert_array_equal(theta, samples[:, 1])
    np.testing.assert_array_equal(p, samples[:, 2:])


def test_stream_drops_events_outside_sensor():
    """Stream events that leave the sensor are dropped."""
    scene = Scene('dot', [[0.0, 0.0]])
    truth = GroundTruthTrajectory('translation', origin=(5.0, 5.0), velocity=(-10.0, 0.0))
    events, assoc = generate_stream(scene, truth, 1.0, 200, 0.0, seed=1, geometry=SensorGeometry())
    assert 0 < len(events) < 200
    assert len(assoc) == len(events)
    assert np.all(events.xy[:, 0] >= 0)


def test_noise_events_stay_in_window():
    """Noise events stay inside their time span and window."""
    events = noise_events(100, 1.0, 0.5, (50.0, 40.0), 10.0, seed=0)
    assert len(events) == 100
    assert np.all(np.abs(events.xy - [50.0, 40.0]) <= 10.0)
    assert events.t.min() >= 1.0 and events.t.max() <= 1.5


def test_simulate_run_uses_run_index():
    """Runs are seeded by their index and centred on the sensor."""
    cfg = SimulatorConfig(count=100)
    a = simulate_run(cfg, run=0)
    b = simulate_run(cfg, run=0)
    c = simulate_run(cfg, run=1)
    np.testing.assert_array_equal(a.batch.xy, b.batch.xy)
    assert not np.array_equal(a.batch.xy, c.batch.xy)
    np.testing.assert_allclose(a.truth.pose([0.0])[1][0], [120.0, 90.0])
