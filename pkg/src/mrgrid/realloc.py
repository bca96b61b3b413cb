"""Reallocation of failing cells into neighbouring cells.

Both strategies move a failing cell's complete statistics into a recipient
and drop the donor, so totals over the grid never change.  Reliability is
not checked here: merged statistics carry no variance estimate.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Mapping, Sequence

import numpy as np

from .grid import CellId, GridSpec, base_indices, parent_of
from .ingest import as_table
from .rules import CellStats, Outcome, RuleConfig, UserRule, evaluate_cell


def _confidential(config: RuleConfig) -> RuleConfig:
    return replace(config, reliability_enabled=False) if config.reliability_enabled else config


def _fails(stats: CellStats, config: RuleConfig, user_rule, cell) -> bool:
    return evaluate_cell(stats, config, user_rule, cell).outcome is Outcome.FAIL


def _rank(item: tuple[CellId, CellStats]):
    cell, stats = item
    return (-stats.value(), cell)


def realloc_blocks(grid: Mapping[CellId, CellStats], spec: GridSpec, config: RuleConfig,
                   block_level: int | None = None, user_rule: UserRule | None = None) -> dict[CellId, CellStats]:
    """Empty failing cells into a sibling of the same block.

    The recipient is the largest passing cell of the block (by first
    variable total, or weighted count), or the largest cell when none
    passes; ties go to the lower :class:`CellId`.  ``block_level`` defaults
    to one level above the cells; passing a higher level widens the blocks
    for a second stage.
    """
    if not grid:
        return {}
    levels = {c.level for c in grid}
    if len(levels) != 1:
        raise ValueError("block reallocation needs a single-resolution grid")
    level = levels.pop()
    block_level = level + 1 if block_level is None else block_level
    config = _confidential(config)

    blocks: dict[CellId, list[CellId]] = {}
    for c in sorted(grid):
        blocks.setdefault(parent_of(c, block_level, spec), []).append(c)

    out = dict(grid)
    for members in blocks.values():
        failing = [c for c in members if _fails(out[c], config, user_rule, c)]
        if not failing:
            continue
        passing = [c for c in members if c not in failing]
        pool = passing or members
        recipient = min(((c, out[c]) for c in pool), key=_rank)[0]
        for c in failing:
            if c == recipient:
                continue
            out[recipient] = out[recipient].combine(out.pop(c))
    return out


def realloc_hierarchical(grid: Mapping[CellId, CellStats], spec: GridSpec, config: RuleConfig,
                         stages: int = 2, user_rule: UserRule | None = None) -> dict[CellId, CellStats]:
    """Block reallocation repeated over successively larger blocks."""
    if not grid:
        return {}
    level = next(iter(grid)).level
    out = dict(grid)
    for s in range(1, stages + 1):
        if level + s > spec.top:
            break
        out = realloc_blocks(out, spec, config, level + s, user_rule)
    return out


def cell_regions(records, spec: GridSpec, level: int = 0) -> dict[CellId, str]:
    """Region of each populated cell: the one with the largest weighted count.

    Ties go to the smallest region id.
    """
    t = as_table(records)
    if t.region is None:
        raise ValueError("records carry no region")
    c0, r0 = base_indices(t.x, t.y, spec)
    k = spec.factor(level)
    acc: dict[CellId, dict[str, float]] = {}
    for col, row, reg, w in zip(c0 // k, r0 // k, t.region, t.weight):
        d = acc.setdefault(CellId(level, int(col), int(row)), {})
        d[reg] = d.get(reg, 0.0) + float(w)
    return {c: min(d.items(), key=lambda kv: (-kv[1], kv[0]))[0] for c, d in acc.items()}


def _ring(cell: CellId, r: int):
    for dc in range(-r, r + 1):
        for dr in range(-r, r + 1):
            if max(abs(dc), abs(dr)) == r and cell.col + dc >= 0 and cell.row + dr >= 0:
                yield CellId(cell.level, cell.col + dc, cell.row + dr)


def realloc_neighbor(grid: Mapping[CellId, CellStats], regions: Mapping[CellId, str], config: RuleConfig,
                     rng: np.random.Generator | int, max_radius: int = 3,
                     user_rule: UserRule | None = None) -> tuple[dict[CellId, CellStats], list[CellId]]:
    """Move each failing cell into a random populated neighbour of the same region.

    Cells are visited in :class:`CellId` order.  Neighbours are searched in
    Chebyshev rings of radius 1, 2, ... up to ``max_radius``; the first
    ring with an eligible cell is drawn from uniformly.  Cells without any
    eligible neighbour stay as they are and are returned as unresolved.
    A cell that has received values is checked again when its turn comes.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    config = _confidential(config)
    out = dict(grid)
    unresolved = []
    for c in sorted(grid):
        if c not in out or not _fails(out[c], config, user_rule, c):
            continue
        reg = regions[c]
        target = None
        for r in range(1, max_radius + 1):
            cand = sorted(n for n in _ring(c, r)
                          if n in out and out[n].record_count >= 1 and regions.get(n) == reg)
            if cand:
                target = cand[int(rng.integers(len(cand)))]
                break
        if target is None:
            unresolved.append(c)
            continue
        out[target] = out[target].combine(out.pop(c))
    return out, unresolved


def grid_totals(grid: Mapping[CellId, CellStats], variables: Sequence[str]) -> dict[str, float]:
    tot = {"count": sum(s.weighted_count for s in grid.values())}
    for v in variables:
        tot[v] = sum(s.variables[v].total for s in grid.values())
    return tot
