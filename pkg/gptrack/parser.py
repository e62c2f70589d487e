"""Text formats: event files, trajectory dumps, ground truth, track files and field rasters."""

import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .events import EventArray
from .validator import SensorGeometry

PathLike = Union[str, os.PathLike]


class EventParseError(ValueError):
    """Raised for a malformed line in an event file."""

    def __init__(self, path, line_number: int, message: str):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write `text` to `path` through a temp file in the same directory and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix='.tmp', dir=str(path.parent))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    return path


def format_number(value: float) -> str:
    """Shortest text that parses back to exactly `value`; integral values print without a point."""
    value = float(value)
    if value.is_integer() and abs(value) < 2 ** 53:
        return str(int(value))
    return repr(value)


def parse_event_file(path: PathLike, geometry: Optional[SensorGeometry] = None, clip: bool = True,
                     integer_coords: bool = False) -> EventArray:
    """Parse an ASCII event file of `<t> <x> <y> <p>` lines.

    Out-of-sensor events are dropped unless `clip` is False. Non-monotonic timestamps are re-sorted with a warning.
    Sensor recordings carry integer pixel coordinates; `integer_coords` rejects anything else. Simulated and
    compensated files carry sub-pixel coordinates and are read as floats.
    """
    geometry = geometry or SensorGeometry()
    logging.info(f"Parsing event file: {path}")
    ts: List[float] = []
    xys: List[Tuple[float, float]] = []
    ps: List[int] = []
    dropped = 0
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith('#'):
                continue
            fields = line.split()
            if len(fields) != 4:
                raise EventParseError(path, line_number, f"expected 4 fields, got {len(fields)}")
            try:
                t = float(fields[0])
                x = float(fields[1])
                y = float(fields[2])
                p = int(fields[3])
            except ValueError as e:
                raise EventParseError(path, line_number, str(e)) from e
            if integer_coords and not (fields[1].lstrip('-').isdigit() and fields[2].lstrip('-').isdigit()):
                raise EventParseError(path, line_number, f"expected integer pixel coordinates, got {fields[1]} {fields[2]}")
            if p not in (0, 1):
                raise EventParseError(path, line_number, f"polarity must be 0 or 1, got {p}")
            if not (np.isfinite(t) and t >= 0 and np.isfinite(x) and np.isfinite(y)):
                raise EventParseError(path, line_number, "non-finite or negative value")
            if clip and not (0 <= x < geometry.width and 0 <= y < geometry.height):
                dropped += 1
                continue
            ts.append(t)
            xys.append((x, y))
            ps.append(p)

    if dropped:
        logging.debug(f"Dropped {dropped} out-of-sensor events from {path}")
    if not ts:
        return EventArray.empty()
    events = EventArray(np.array(ts), np.array(xys), np.array(ps))
    if not events.is_sorted():
        logging.warning(f"Timestamps in {path} are not monotonic; re-sorting {len(events)} events.")
        events = events.sorted()
    return events


def format_events(events: EventArray, xy: Optional[np.ndarray] = None) -> str:
    xy = events.xy if xy is None else np.asarray(xy, dtype=float)
    lines = [
        f"{format_number(t)} {format_number(x)} {format_number(y)} {int(p)}"
        for t, (x, y), p in zip(events.t, xy, events.polarity)
    ]
    return '\n'.join(lines) + ('\n' if lines else '')


def write_event_file(path: PathLike, events: EventArray, xy: Optional[np.ndarray] = None,
                     header: Sequence[str] = ()) -> Path:
    """Write events (optionally with replacement coordinates) in the event-file format."""
    text = ''.join(f"# {h}\n" for h in header) + format_events(events, xy)
    return atomic_write_text(path, text)


def format_trajectory(times: np.ndarray, theta: np.ndarray, trans: np.ndarray) -> str:
    return ''.join(
        f"{format_number(s)} {format_number(r)} {format_number(px)} {format_number(py)}\n"
        for s, r, (px, py) in zip(times, theta, trans)
    )


@dataclass
class GroundTruthFile:
    samples: np.ndarray  # rows of t, theta, px, py
    landmarks: Dict[int, np.ndarray]
    assoc: Dict[int, int]

    def landmark_array(self) -> np.ndarray:
        return np.array([self.landmarks[i] for i in sorted(self.landmarks)])

    def assoc_array(self, n_events: int) -> np.ndarray:
        missing = [i for i in range(n_events) if i not in self.assoc]
        if missing:
            raise ValueError(f"ground truth has no landmark for event {missing[0]}")
        return np.array([self.assoc[i] for i in range(n_events)], dtype=int)

    def event_landmarks(self, n_events: int) -> np.ndarray:
        """Landmark position of each of the first `n_events` events."""
        assoc = self.assoc_array(n_events)
        unknown = sorted(set(assoc.tolist()) - set(self.landmarks))
        if unknown:
            raise ValueError(f"ground truth references unknown landmark {unknown[0]}")
        return np.array([self.landmarks[j] for j in assoc]).reshape(-1, 2)


def format_ground_truth(samples: np.ndarray, landmarks: np.ndarray, assoc: np.ndarray) -> str:
    lines = [
        ' '.join(format_number(v) for v in row) for row in np.asarray(samples, dtype=float)
    ]
    lines += [f"# landmark {i} {format_number(x)} {format_number(y)}" for i, (x, y) in enumerate(landmarks)]
    lines += [f"# assoc {i} {int(j)}" for i, j in enumerate(assoc)]
    return '\n'.join(lines) + '\n'


def parse_ground_truth(path: PathLike) -> GroundTruthFile:
    samples = []
    landmarks: Dict[int, np.ndarray] = {}
    assoc: Dict[int, int] = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, raw in enumerate(f, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                if line.startswith('# landmark'):
                    _, _, i, x, y = line.split()
                    landmarks[int(i)] = np.array([float(x), float(y)])
                elif line.startswith('# assoc'):
                    _, _, i, j = line.split()
                    assoc[int(i)] = int(j)
                elif line.startswith('#'):
                    continue
                else:
                    row = [float(v) for v in line.split()]
                    if len(row) != 4:
                        raise ValueError(f"expected 4 fields, got {len(row)}")
                    samples.append(row)
            except ValueError as e:
                raise EventParseError(path, line_number, str(e)) from e
    return GroundTruthFile(np.array(samples).reshape(-1, 4), landmarks, assoc)


def format_track(track_id, samples: Sequence[Tuple[float, np.ndarray]], reason: Optional[str]) -> str:
    lines = [f"{track_id} {format_number(t)} {format_number(p[0])} {format_number(p[1])}" for t, p in samples]
    lines.append(f"# ended {reason}" if reason is not None else "# active")
    return '\n'.join(lines) + '\n'


def parse_seed_file(path: PathLike) -> List[Tuple[np.ndarray, float]]:
    """Parse `x y t` seed lines."""
    seeds = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith('#'):
                continue
            fields = line.split()
            if len(fields) != 3:
                raise EventParseError(path, line_number, f"expected 'x y t', got {len(fields)} fields")
            try:
                x, y, t = (float(v) for v in fields)
            except ValueError as e:
                raise EventParseError(path, line_number, str(e)) from e
            seeds.append((np.array([x, y]), t))
    return seeds


def format_raster(values: np.ndarray) -> str:
    """Row-major text matrix."""
    return ''.join(' '.join(f"{v:.6g}" for v in row) + '\n' for row in np.atleast_2d(values))
