"""Event containers and fixed-size spatiotemporal batching."""

import logging
from dataclasses import dataclass, field
from collections.abc import Sequence
from typing import Iterable, Iterator, Union

import numpy as np


@dataclass(frozen=True)
class Event:
    t: float
    x: float
    y: float
    polarity: int = 1

    def __post_init__(self):
        if not np.isfinite(self.t) or self.t < 0:
            raise ValueError(f"Event time must be finite and non-negative, got {self.t}")
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError(f"Event coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True, eq=False)
class EventArray(Sequence):
    """Columnar, read-only event sequence sorted by time.

    Iterating yields `Event` objects; numerical code reads the columns directly.
    """

    t: np.ndarray
    xy: np.ndarray
    polarity: np.ndarray

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(-1)
        xy = np.array(self.xy, dtype=float).reshape(-1, 2)
        p = np.array(self.polarity, dtype=np.int8).reshape(-1)
        if not (len(t) == len(xy) == len(p)):
            raise ValueError("Event columns must have equal length")
        for arr in (t, xy, p):
            arr.setflags(write=False)
        object.__setattr__(self, 't', t)
        object.__setattr__(self, 'xy', xy)
        object.__setattr__(self, 'polarity', p)

    @classmethod
    def empty(cls) -> 'EventArray':
        return cls(np.zeros(0), np.zeros((0, 2)), np.zeros(0, dtype=np.int8))

    @classmethod
    def from_events(cls, events: Iterable[Event]) -> 'EventArray':
        events = list(events)
        if not events:
            return cls.empty()
        return cls(
            np.array([e.t for e in events]),
            np.array([[e.x, e.y] for e in events]),
            np.array([e.polarity for e in events]),
        )

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, index: Union[int, slice, np.ndarray]):
        if isinstance(index, (int, np.integer)):
            return Event(float(self.t[index]), float(self.xy[index, 0]), float(self.xy[index, 1]),
                         int(self.polarity[index]))
        return EventArray(self.t[index], self.xy[index], self.polarity[index])

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.t) >= 0))

    def sorted(self) -> 'EventArray':
        order = np.argsort(self.t, kind='stable')
        return self[order]


@dataclass(frozen=True, eq=False)
class EventBatch:
    events: EventArray
    t_start: float
    seed: np.ndarray
    depleted: bool = False
    indices: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, 'seed', np.asarray(self.seed, dtype=float).reshape(2))

    def __len__(self) -> int:
        return len(self.events)

    @property
    def t(self) -> np.ndarray:
        return self.events.t

    @property
    def xy(self) -> np.ndarray:
        return self.events.xy

    @property
    def t_end(self) -> float:
        return float(self.events.t[-1]) if len(self.events) else self.t_start


def collect_batch(stream: EventArray, seed, t_from: float, size: int, radius: float) -> EventBatch:
    """Collect the first `size` events at or after `t_from` inside the square window around `seed`.

    A short (possibly empty) batch is returned with `depleted=True` when the stream
    runs out of qualifying events.
    """
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    seed = np.asarray(seed, dtype=float).reshape(2)

    start = int(np.searchsorted(stream.t, t_from, side='left'))
    xy = stream.xy[start:]
    inside = np.max(np.abs(xy - seed), axis=1) <= radius
    hits = np.flatnonzero(inside)[:size] + start

    events = stream[hits]
    depleted = len(hits) < size
    if depleted:
        logging.debug(f"Stream depleted after t={t_from:.6f}: {len(hits)}/{size} events around {seed}")
    t_start = float(events.t[0]) if len(events) else float(t_from)
    return EventBatch(events=events, t_start=t_start, seed=seed, depleted=depleted, indices=hits)


def downsample_batch(batch: EventBatch, target: int) -> EventBatch:
    """Keep `target` events at evenly strided indices, always including the first."""
    n = len(batch)
    if not 1 <= target <= n:
        raise ValueError(f"target must be in [1, {n}], got {target}")
    if target == n:
        return batch
    keep = (np.arange(target) * n) // target
    return EventBatch(
        events=batch.events[keep],
        t_start=batch.t_start,
        seed=batch.seed,
        depleted=batch.depleted,
        indices=None if batch.indices is None else batch.indices[keep],
    )


def whole_batch(events: EventArray, seed=None) -> EventBatch:
    """All of `events` as one batch; the seed defaults to the mean event position."""
    if len(events) == 0:
        raise ValueError("cannot batch an empty event sequence")
    seed = events.xy.mean(axis=0) if seed is None else seed
    return EventBatch(events=events, t_start=float(events.t[0]), seed=seed,
                      indices=np.arange(len(events)))
