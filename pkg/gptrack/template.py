"""Dynamic pattern template: accumulated histogram of compensated events, binarised and skeletonised."""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

# 3x3 cross
CROSS = ndimage.generate_binary_structure(2, 1)


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Morphological skeleton: erode, dilate the erosion, subtract, union; repeat until empty."""
    current = np.asarray(mask, dtype=bool)
    skeleton = np.zeros_like(current)
    while current.any():
        eroded = ndimage.binary_erosion(current, structure=CROSS, border_value=0)
        opened = ndimage.binary_dilation(eroded, structure=CROSS)
        skeleton |= current & ~opened
        current = eroded
    return skeleton


@dataclass
class DynamicTemplate:
    """Histogram over a square window of 1 px cells centred on integer coordinates.

    `origin` is the integer (x, y) of cell (row 0, col 0); a point maps to cell
    (round(y) - origin_y, round(x) - origin_x).
    """

    origin: np.ndarray
    shape: tuple
    threshold: int = 2
    reference_time: float = 0.0
    counts: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=int).reshape(2)
        if self.threshold < 1:
            raise ValueError(f"threshold must be >= 1, got {self.threshold}")
        if self.counts is None:
            self.counts = np.zeros(self.shape, dtype=np.int64)

    @classmethod
    def around(cls, center, radius: float, padding: int = 0, threshold: int = 2,
               reference_time: float = 0.0) -> 'DynamicTemplate':
        half = int(np.ceil(radius)) + int(padding)
        origin = np.round(np.asarray(center, dtype=float)).astype(int) - half
        return cls(origin, (2 * half + 1, 2 * half + 1), threshold, reference_time)

    def accumulate(self, points) -> int:
        """Add points (template frame) to the histogram; returns how many fell inside the grid."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        cells = np.round(pts).astype(np.int64) - self.origin
        rows, cols = cells[:, 1], cells[:, 0]
        inside = (rows >= 0) & (rows < self.shape[0]) & (cols >= 0) & (cols < self.shape[1])
        np.add.at(self.counts, (rows[inside], cols[inside]), 1)
        return int(inside.sum())

    @property
    def binary(self) -> np.ndarray:
        return self.counts >= self.threshold

    @property
    def skeleton(self) -> np.ndarray:
        return skeletonize(self.binary)

    @property
    def empty(self) -> bool:
        return not self.binary.any()

    def virtual_events(self) -> np.ndarray:
        """Skeleton cell centres as (x, y) points in the template frame."""
        rows, cols = np.nonzero(self.skeleton)
        return np.column_stack([cols, rows]).astype(float) + self.origin


def build_template(point_sets, center, radius: float, threshold: int = 2, padding: int = 0,
                   reference_time: float = 0.0) -> Optional[DynamicTemplate]:
    """Accumulate compensated point sets; returns None when the binarised mask is empty."""
    point_sets = list(point_sets)
    if not point_sets:
        raise ValueError("build_template needs at least one compensated point set")
    template = DynamicTemplate.around(center, radius, padding, threshold, reference_time)
    for pts in point_sets:
        template.accumulate(pts)
    if template.empty:
        logging.debug("Template binarisation left no cells above threshold")
        return None
    return template
