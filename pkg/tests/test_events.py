import numpy as np
import pytest

from gptrack.events import Event, EventArray, collect_batch, downsample_batch, whole_batch


def _uniform_stream(n=5000, center=(50.0, 50.0), radius=10.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 1, n))
    xy = np.asarray(center) + rng.uniform(-radius, radius, (n, 2))
    return EventArray(t, xy, rng.integers(0, 2, n))


def test_event_rejects_negative_time():
    """Events with a negative time are rejected."""
    with pytest.raises(ValueError):
        Event(-1.0, 0.0, 0.0, 1)


def test_event_array_indexing():
    """Integer indexing gives events and slices give arrays."""
    events = EventArray.from_events([Event(0.0, 1, 2, 1), Event(0.5, 3, 4, 0), Event(1.0, 5, 6, 1)])
    assert len(events) == 3
    assert events[1] == Event(0.5, 3.0, 4.0, 0)
    tail = events[1:]
    assert isinstance(tail, EventArray)
    assert list(tail.t) == [0.5, 1.0]
    assert [e.polarity for e in events] == [1, 0, 1]


def test_event_array_columns_are_read_only():
    """Event arrays cannot be modified in place."""
    xy = np.array([[1.0, 2.0]])
    events = EventArray([0.0], xy, [1])
    with pytest.raises(ValueError):
        events.xy[0, 0] = 5.0
    # the caller's array is copied, not frozen
    xy[0, 0] = 7.0
    assert events.xy[0, 0] == 1.0


def test_sorted_restores_time_order():
    """Sorting restores time order with positions kept in step."""
    events = EventArray([0.3, 0.1, 0.2], [[0, 0], [1, 1], [2, 2]], [1, 1, 0])
    assert not events.is_sorted()
    s = events.sorted()
    assert list(s.t) == [0.1, 0.2, 0.3]
    assert s.xy[0].tolist() == [1.0, 1.0]


def test_collect_batch_count_contract():
    """A dense stream fills a batch of exactly the requested size."""
    stream = _uniform_stream()
    batch = collect_batch(stream, (50.0, 50.0), 0.0, 1250, 15.0)
    assert len(batch) == 1250
    assert not batch.depleted
    assert batch.events.is_sorted()
    assert batch.t_start == batch.t[0]


def test_collect_batch_respects_time_and_window():
    """Batches only hold events after the start time inside the window."""
    stream = _uniform_stream()
    batch = collect_batch(stream, (45.0, 45.0), 0.5, 100, 3.0)
    assert np.all(batch.t >= 0.5)
    assert np.all(np.max(np.abs(batch.xy - [45.0, 45.0]), axis=1) <= 3.0)


def test_collect_batch_far_seed_is_depleted():
    """A seed with no events nearby gives an empty depleted batch."""
    batch = collect_batch(_uniform_stream(), (200.0, 200.0), 0.0, 10, 5.0)
    assert batch.depleted
    assert len(batch) == 0
    assert batch.t_start == 0.0


def test_collect_batch_includes_chebyshev_boundary():
    """Events on the window edge are included."""
    stream = EventArray([0.0, 0.1, 0.2], [[12.0, 10.0], [10.0, 7.0], [12.5, 10.0]], [1, 1, 1])
    batch = collect_batch(stream, (10.0, 10.0), 0.0, 5, 2.0)
    assert len(batch) == 1
    assert batch.xy[0].tolist() == [12.0, 10.0]
    assert batch.depleted


def test_downsample_identity_and_stride():
    """Downsampling keeps full batches and takes every k-th event otherwise."""
    stream = _uniform_stream(n=1250)
    batch = whole_batch(stream)
    assert downsample_batch(batch, 1250) is batch

    small = whole_batch(stream[:10])
    half = downsample_batch(small, 5)
    assert half.indices.tolist() == [0, 2, 4, 6, 8]
    assert half.t_start == small.t_start


def test_downsample_to_400():
    """Downsampling to 400 events keeps the first event and the order."""
    batch = whole_batch(_uniform_stream(n=1250))
    down = downsample_batch(batch, 400)
    assert len(down) == 400
    assert down.indices[0] == 0
    assert np.all(np.diff(down.indices) > 0)


def test_whole_batch_seed_is_mean_position():
    """A whole-file batch is seeded at the mean event position."""
    events = EventArray([0.0, 1.0], [[0.0, 0.0], [2.0, 4.0]], [1, 0])
    batch = whole_batch(events)
    assert batch.seed.tolist() == [1.0, 2.0]
    assert batch.t_start == 0.0
