"""Suppression, rounding and ratio grids."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .engine import MRCell, MRGrid
from .errors import VariableMissing
from .grid import CellId
from .rules import Outcome


def round_to_base(value: float, base: int = 10) -> int:
    """Nearest multiple of ``base``; ties go away from zero.

    >>> round_to_base(877), round_to_base(5), round_to_base(-15)
    (880, 10, -20)
    """
    if base < 1:
        raise ValueError("base must be >= 1")
    q = math.floor(abs(value) / base + 0.5)
    return int(math.copysign(q * base, value)) if q else 0


def _process_cell(c: MRCell, base: int) -> MRCell:
    if c.verdict.outcome is Outcome.FAIL:
        return replace(c, suppressed=True, warning=False, published_count=None,
                       published={v: None for v in c.totals})
    return replace(c, suppressed=False, warning=c.verdict.warning,
                   published_count=round_to_base(c.weighted_count, base),
                   published={v: round_to_base(t, base) for v, t in c.totals.items()})


def post_process(grid: MRGrid, config=None) -> MRGrid:
    """Suppress failing cells and round everything that is disclosed.

    Internal totals stay on the cells for auditing; only ``published``
    values are meant for output.  Running it twice changes nothing.
    """
    config = config or grid.config
    cells = tuple(_process_cell(c, int(config.rounding_base)) for c in grid.cells)
    return replace(grid, cells=cells, processed=True)


@dataclass(frozen=True)
class RatioCell:
    cell: CellId
    numerator: int | None
    denominator: int | None
    ratio: float | None
    suppressed: bool
    above_one: bool = False


def ratio_grid(grid: MRGrid, numerator: str, denominator: str, decimals: int = 3) -> list[RatioCell]:
    """Per-cell ratio of two jointly gridded variables.

    Computed from the published (rounded) values so that it agrees with the
    published numerator and denominator.  Ratios above 1 are kept but
    flagged; with a numerator bounded by its denominator on every record,
    that can only come from rounding.
    """
    for v in (numerator, denominator):
        if v not in grid.variables:
            raise VariableMissing(v)
    if not grid.processed:
        grid = post_process(grid)
    out = []
    for c in grid.cells:
        num, den = c.published.get(numerator), c.published.get(denominator)
        if c.suppressed or num is None or den is None or den == 0:
            out.append(RatioCell(c.cell, num, den, None, True))
            continue
        r = round(num / den, decimals)
        out.append(RatioCell(c.cell, num, den, r, False, r > 1))
    return out
