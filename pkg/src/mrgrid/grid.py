"""Nested square grids: resolution ladders, cell addressing and geometry.

All levels share one origin, so a cell at level ``L`` is the union of an
exact ``k x k`` block of level ``L-1`` cells, ``k = res[L] / res[L-1]``.
Cell extents are half-open, ``[x0, x0 + res) x [y0, y0 + res)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    GridError,
    LevelOrder,
    NotIncreasing,
    NotIntegerMultiple,
    OnBorder,
    OutsideGrid,
)

# packed cell keys: 6 bits level | 29 bits col | 29 bits row
_IDX_BITS = 29
_IDX_MAX = (1 << _IDX_BITS) - 1
_IDX_MASK = np.int64(_IDX_MAX)


@dataclass(frozen=True)
class GridSpec:
    origin_x: float
    origin_y: float
    crs_id: int
    resolutions: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "resolutions", tuple(self.resolutions))
        if not (math.isfinite(self.origin_x) and math.isfinite(self.origin_y)):
            raise GridError("grid origin must be finite")
        _check_ladder(self.resolutions)

    @property
    def levels(self) -> int:
        return len(self.resolutions)

    @property
    def top(self) -> int:
        return len(self.resolutions) - 1

    def res(self, level: int) -> float:
        return self.resolutions[level]

    def factor(self, level: int, base: int = 0) -> int:
        """Number of ``base``-level cells along one side of a ``level`` cell."""
        return int(round(self.resolutions[level] / self.resolutions[base]))

    def level_of(self, res: float) -> int:
        try:
            return self.resolutions.index(res)
        except ValueError:
            raise GridError(f"resolution {res} is not part of the ladder {self.resolutions}") from None


def _check_ladder(resolutions: Sequence[float]) -> None:
    if len(resolutions) == 0:
        raise GridError("at least one resolution is required")
    for r in resolutions:
        if not (isinstance(r, (int, float)) and math.isfinite(r) and r > 0):
            raise GridError(f"resolution {r!r} must be a positive finite number")
    for lo, hi in zip(resolutions, resolutions[1:]):
        if hi <= lo:
            raise NotIncreasing(f"resolutions must be strictly increasing ({lo} -> {hi})")
        if math.fmod(hi, lo) != 0:
            raise NotIntegerMultiple((lo, hi))


def validate_resolutions(resolutions: Sequence[float], origin: tuple[float, float] = (0.0, 0.0),
                         crs_id: int = 3035) -> GridSpec:
    """Build a :class:`GridSpec`, rejecting ladders that do not nest.

    >>> validate_resolutions([1000, 5000, 10000]).levels
    3
    """
    return GridSpec(float(origin[0]), float(origin[1]), int(crs_id), tuple(resolutions))


@dataclass(frozen=True, order=True)
class CellId:
    level: int
    col: int
    row: int

    def __post_init__(self):
        if self.col < 0 or self.row < 0 or self.level < 0:
            raise OutsideGrid(f"negative cell index {self.level, self.col, self.row}")

    def label(self, spec: GridSpec) -> str:
        return f"R{fmt_number(spec.res(self.level))}_C{self.col}_R{self.row}"


def fmt_number(v: float) -> str:
    """Integral floats print without a fractional part; others use ``repr``."""
    f = float(v)
    if f.is_integer():
        return str(int(f))
    return repr(f)


def cell_of(point: tuple[float, float], level: int, spec: GridSpec) -> CellId:
    x, y = point
    if not (math.isfinite(x) and math.isfinite(y)):
        raise GridError(f"non-finite point {point}")
    res = spec.res(level)
    fx = (x - spec.origin_x) / res
    fy = (y - spec.origin_y) / res
    if fx == math.floor(fx) or fy == math.floor(fy):
        raise OnBorder(f"point {point} lies on a grid line at resolution {res}")
    col, row = math.floor(fx), math.floor(fy)
    if col < 0 or row < 0:
        raise OutsideGrid(f"point {point} lies below or left of the grid origin")
    return CellId(level, col, row)


def parent_of(cell: CellId, target_level: int, spec: GridSpec) -> CellId:
    if target_level <= cell.level:
        raise LevelOrder(f"target level {target_level} is not above cell level {cell.level}")
    k = spec.factor(target_level, cell.level)
    return CellId(target_level, cell.col // k, cell.row // k)


def children_of(cell: CellId, child_level: int, spec: GridSpec) -> list[CellId]:
    if child_level >= cell.level:
        raise LevelOrder(f"child level {child_level} is not below cell level {cell.level}")
    k = spec.factor(cell.level, child_level)
    c0, r0 = cell.col * k, cell.row * k
    return [CellId(child_level, c0 + i, r0 + j) for i in range(k) for j in range(k)]


def cell_bounds(cell: CellId, spec: GridSpec) -> tuple[float, float, float, float]:
    """``(x_min, y_min, x_max, y_max)`` of a cell."""
    res = spec.res(cell.level)
    x0 = spec.origin_x + cell.col * res
    y0 = spec.origin_y + cell.row * res
    return x0, y0, x0 + res, y0 + res


def cell_polygon(cell: CellId, spec: GridSpec) -> list[tuple[float, float]]:
    """Corners counter-clockwise from the lower left."""
    x0, y0, x1, y1 = cell_bounds(cell, spec)
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


# -- vectorised helpers used by the engine ---------------------------------

def base_indices(x: np.ndarray, y: np.ndarray, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Level-0 ``(col, row)`` for arrays of points.

    Coarser grid lines are a subset of the level-0 lines, so a point that is
    off every level-0 line is off every line of the ladder.
    """
    res = spec.res(0)
    fx = (np.asarray(x, dtype=float) - spec.origin_x) / res
    fy = (np.asarray(y, dtype=float) - spec.origin_y) / res
    if not (np.isfinite(fx).all() and np.isfinite(fy).all()):
        raise GridError("non-finite coordinates")
    cx, cy = np.floor(fx), np.floor(fy)
    on = (cx == fx) | (cy == fy)
    if on.any():
        i = int(np.flatnonzero(on)[0])
        raise OnBorder(f"point ({x[i]}, {y[i]}) lies on a grid line at resolution {res}")
    if (cx < 0).any() or (cy < 0).any():
        raise OutsideGrid("points lie below or left of the grid origin")
    if cx.max(initial=0) > _IDX_MAX or cy.max(initial=0) > _IDX_MAX:
        raise OutsideGrid("points lie too far from the grid origin")
    return cx.astype(np.int64), cy.astype(np.int64)


def pack(level, col, row) -> np.ndarray:
    return (np.int64(level) << 58) | (np.asarray(col, dtype=np.int64) << _IDX_BITS) | np.asarray(row, dtype=np.int64)


def unpack(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    keys = np.asarray(keys, dtype=np.int64)
    return keys >> 58, (keys >> _IDX_BITS) & _IDX_MASK, keys & _IDX_MASK


def key_of(cell: CellId) -> int:
    return (cell.level << 58) | (cell.col << _IDX_BITS) | cell.row


def cell_from_key(key: int) -> CellId:
    key = int(key)
    return CellId(key >> 58, (key >> _IDX_BITS) & _IDX_MAX, key & _IDX_MAX)
