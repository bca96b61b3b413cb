"""Multi-resolution gridding.

Every record carries the level of the cell it currently belongs to.  At
iteration ``i`` the cells at level ``i-1`` are evaluated; a failing cell
forces its level-``i`` parent to replace everything inside the parent's
extent, unless the cell is small enough relative to that parent to be left
behind (``suppresslim``) and suppressed later.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .errors import SpecMismatch, UnknownStratum
from .grid import CellId, GridSpec, base_indices, cell_from_key, key_of, pack, unpack
from .ingest import RecordTable, as_table
from .rules import (
    BatchStats,
    BatchVerdicts,
    CellStats,
    Outcome,
    Rule,
    RuleConfig,
    RuleVerdict,
    UserRule,
    evaluate_batch,
)
from .variance import StratumInfo, grouped_estimates, stratum_table

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MRCell:
    cell: CellId
    weighted_count: float
    record_count: int
    totals: Mapping[str, float]
    verdict: RuleVerdict
    suppressed: bool = False
    warning: bool = False
    published_count: int | None = None
    published: Mapping[str, int | None] = field(default_factory=dict)


@dataclass(frozen=True)
class MRGrid:
    """A mixed-resolution tiling of the populated area.

    ``totals`` and ``weighted_count`` on each cell are exact internal sums;
    what may be disseminated is in ``published``/``published_count`` once
    :func:`~mrgrid.postprocess.post_process` has run.  ``trail`` maps each
    cell created by a merge to the failing children that forced it.
    """

    cells: tuple[MRCell, ...]
    spec: GridSpec
    config: RuleConfig
    variables: tuple[str, ...] = ()
    provenance: Mapping[str, object] = field(default_factory=dict)
    trail: Mapping[CellId, tuple[CellId, ...]] = field(default_factory=dict)
    processed: bool = False

    def __len__(self) -> int:
        return len(self.cells)

    def cell_map(self) -> dict[CellId, MRCell]:
        return {c.cell: c for c in self.cells}

    def level_counts(self) -> dict[int, int]:
        out = {lv: 0 for lv in range(self.spec.levels)}
        for c in self.cells:
            out[c.cell.level] += 1
        return out


# -- statistics ---------------------------------------------------------------

def _strata_arrays(t: RecordTable, strata: Mapping[str, StratumInfo] | None):
    if strata is None:
        strata = stratum_table(t)
    n_h = np.zeros(len(t.stratum_labels), dtype=np.int64)
    N_h = np.zeros(len(t.stratum_labels))
    present = np.bincount(t.stratum, minlength=len(t.stratum_labels)) > 0
    for i, label in enumerate(t.stratum_labels):
        if label in strata:
            n_h[i] = strata[label].n_h
            N_h[i] = strata[label].N_h
        elif present[i]:
            raise UnknownStratum(label)
    return n_h, N_h


def _top_two(inv: np.ndarray, g: int, w: np.ndarray, x: np.ndarray):
    w1, x1, w2, x2 = (np.zeros(g) for _ in range(4))
    pos = np.flatnonzero(x > 0)
    if len(pos) == 0:
        return w1, x1, w2, x2
    gi, wi, xi = inv[pos], w[pos], x[pos]
    order = np.lexsort((-wi, -xi, gi))
    gs = gi[order]
    first = np.ones(len(gs), dtype=bool)
    first[1:] = gs[1:] != gs[:-1]
    p1 = np.flatnonzero(first)
    w1[gs[p1]] = wi[order[p1]]
    x1[gs[p1]] = xi[order[p1]]
    p2 = p1 + 1
    p2 = p2[p2 < len(gs)]
    p2 = p2[~first[p2]]
    w2[gs[p2]] = wi[order[p2]]
    x2[gs[p2]] = xi[order[p2]]
    return w1, x1, w2, x2


def group_stats(t: RecordTable, idx: np.ndarray, inv: np.ndarray, g: int, variables: Sequence[str],
                strata_arrays=None) -> BatchStats:
    """Column-wise cell statistics for records ``idx`` grouped by ``inv``."""
    w = t.weight[idx]
    W = np.bincount(inv, weights=w, minlength=g)
    n = np.bincount(inv, minlength=g)
    totals, top, est = {}, {}, None
    xs = {v: t.value(v)[idx] for v in variables}
    for v, x in xs.items():
        totals[v] = np.bincount(inv, weights=w * x, minlength=g)
        top[v] = _top_two(inv, g, w, x)
    if strata_arrays is not None:
        n_h, N_h = strata_arrays
        s = t.stratum[idx]
        est = {v: grouped_estimates(inv, g, x, w, s, n_h, N_h) for v, x in xs.items()}
        if not variables:
            est[""] = grouped_estimates(inv, g, np.ones(len(idx)), w, s, n_h, N_h)
    return BatchStats(W, n, totals, top, est)


def _grouped(t, idx, keys, variables, strata_arrays):
    ukeys, inv = np.unique(keys, return_inverse=True)
    return ukeys, group_stats(t, idx, inv.reshape(-1), len(ukeys), variables, strata_arrays)


def build_base_grid(records, spec: GridSpec, variables: Sequence[str] = (),
                    strata: Mapping[str, StratumInfo] | None = None, level: int = 0) -> dict[CellId, CellStats]:
    """Statistics of every populated cell at one level (the finest by default).

    Pass ``strata`` to have variance estimates attached.
    """
    t = as_table(records, variables)
    if len(t) == 0:
        return {}
    c0, r0 = base_indices(t.x, t.y, spec)
    idx = np.arange(len(t))
    sa = _strata_arrays(t, strata) if strata is not None else None
    ukeys, bs = _grouped(t, idx, _level_keys(c0, r0, spec, level), list(variables), sa)
    return {cell_from_key(k): bs.cell(i) for i, k in enumerate(ukeys)}


# -- the iteration ------------------------------------------------------------

def _level_keys(c0, r0, spec: GridSpec, level: int) -> np.ndarray:
    k = spec.factor(level)
    return pack(level, c0 // k, r0 // k)


def multi_res_grid(records, spec: GridSpec, config: RuleConfig, variables: Sequence[str] = (),
                   user_rule: UserRule | None = None, strata: Mapping[str, StratumInfo] | None = None,
                   provenance: Mapping[str, object] | None = None) -> MRGrid:
    """Coarsen failing cells up the resolution ladder.

    Returns the grid before post-processing: failing cells still carry
    their totals and a FAIL verdict.
    """
    variables = tuple(variables)
    t = as_table(records, variables)
    prov = {"version": __version__, **(provenance or {})}
    if len(t) == 0:
        return MRGrid((), spec, config, variables, prov)
    c0, r0 = base_indices(t.x, t.y, spec)
    sa = _strata_arrays(t, strata) if config.reliability_enabled else None
    share_of = t.value(variables[0]) * t.weight if variables else t.weight
    assign = np.zeros(len(t), dtype=np.int8)
    trail: dict[CellId, tuple[CellId, ...]] = {}

    prev_keys = pack(0, c0, r0)
    for i in range(1, spec.levels):
        idx = np.flatnonzero(assign == i - 1)
        if len(idx) == 0:
            break
        ukeys, bs = _grouped(t, idx, prev_keys[idx], variables, sa)
        cells = [cell_from_key(k) for k in ukeys] if user_rule is not None else None
        bv = evaluate_batch(bs, config, user_rule, cells)
        failing = bv.outcome == Outcome.FAIL

        keys_i = _level_keys(c0, r0, spec, i)
        k = spec.factor(i, i - 1)
        _, pcol, prow = unpack(ukeys)
        parent = pack(i, pcol // k, prow // k)

        if config.suppresslim > 0 and failing.any():
            upar, pinv = np.unique(keys_i, return_inverse=True)
            pval = np.bincount(pinv.reshape(-1), weights=share_of)
            fp = parent[failing]
            pv = pval[np.searchsorted(upar, fp)]
            cv = bs.totals[variables[0]][failing] if variables else bs.weighted_count[failing]
            exempt = np.zeros(len(ukeys), dtype=bool)
            with np.errstate(divide="ignore", invalid="ignore"):
                exempt[failing] = (pv > 0) & (cv / np.where(pv > 0, pv, 1.0) < config.suppresslim)
            forcing = failing & ~exempt
        else:
            forcing = failing

        merge = np.unique(parent[forcing])
        if len(merge):
            fpar, fkid = parent[forcing], ukeys[forcing]
            order = np.lexsort((fkid, fpar))
            fpar, fkid = fpar[order], fkid[order]
            cuts = np.flatnonzero(np.diff(fpar)) + 1
            for pk, kids in zip(fpar[np.r_[0, cuts]], np.split(fkid, cuts)):
                trail[cell_from_key(pk)] = tuple(cell_from_key(c) for c in kids)
            assign[np.isin(keys_i, merge, assume_unique=False)] = i
        prev_keys = keys_i
        log.debug("level %d: %d cells evaluated, %d failing, %d parents formed",
                  i - 1, len(ukeys), int(failing.sum()), len(merge))

    final = np.empty(len(t), dtype=np.int64)
    for lv in np.unique(assign):
        m = assign == lv
        final[m] = _level_keys(c0[m], r0[m], spec, int(lv))
    return _finish(t, np.arange(len(t)), final, spec, config, variables, user_rule, sa, prov, trail)


def _finish(t, idx, keys, spec, config, variables, user_rule, sa, prov, trail) -> MRGrid:
    ukeys, bs = _grouped(t, idx, keys, variables, sa)
    cells = [cell_from_key(k) for k in ukeys]
    bv = evaluate_batch(bs, config, user_rule, cells)
    out = _cells_from_batch(cells, bs, bv, variables)
    return MRGrid(tuple(out), spec, config, variables, prov, trail)


def _cells_from_batch(cells, bs: BatchStats, bv: BatchVerdicts, variables) -> list[MRCell]:
    out = []
    for i, cell in enumerate(cells):
        verdict = bv.verdict(i)
        out.append(MRCell(
            cell=cell,
            weighted_count=float(bs.weighted_count[i]),
            record_count=int(bs.record_count[i]),
            totals={v: float(bs.totals[v][i]) for v in variables},
            verdict=verdict,
            warning=verdict.warning,
        ))
    return out


def grid_from_stats(stats: Mapping[CellId, CellStats], spec: GridSpec, config: RuleConfig,
                    variables: Sequence[str] = (), user_rule: UserRule | None = None,
                    provenance: Mapping[str, object] | None = None) -> MRGrid:
    """Wrap per-cell statistics (e.g. after reallocation) into an :class:`MRGrid`."""
    cells = sorted(stats)
    bs = batch_from_cells([stats[c] for c in cells], variables)
    bv = evaluate_batch(bs, config, user_rule, cells)
    prov = {"version": __version__, **(provenance or {})}
    return MRGrid(tuple(_cells_from_batch(cells, bs, bv, tuple(variables))), spec, config,
                  tuple(variables), prov)


def batch_from_cells(stats: Sequence[CellStats], variables: Sequence[str]) -> BatchStats:
    def col(f):
        return np.array([f(s) for s in stats], dtype=float)

    totals, top = {}, {}
    for v in variables:
        totals[v] = col(lambda s: s.variables[v].total)
        top[v] = (
            col(lambda s: s.variables[v].top1.weight if s.variables[v].top1 else 0.0),
            col(lambda s: s.variables[v].top1.value if s.variables[v].top1 else 0.0),
            col(lambda s: s.variables[v].top2.weight if s.variables[v].top2 else 0.0),
            col(lambda s: s.variables[v].top2.value if s.variables[v].top2 else 0.0),
        )
    est = None
    if stats and all(s.variables[v].estimate is not None for s in stats for v in variables) and \
            (variables or all(s.count_estimate is not None for s in stats)):
        est = {}
        for v in variables:
            est[v] = (col(lambda s: s.variables[v].estimate.total),
                      col(lambda s: s.variables[v].estimate.variance),
                      col(lambda s: s.variables[v].estimate.degenerate).astype(bool))
        if not variables:
            est[""] = (col(lambda s: s.count_estimate.total), col(lambda s: s.count_estimate.variance),
                       col(lambda s: s.count_estimate.degenerate).astype(bool))
    return BatchStats(col(lambda s: s.weighted_count), col(lambda s: s.record_count).astype(np.int64),
                      totals, top, est)


# -- matching an existing geometry -------------------------------------------

def grid_to_match(existing: MRGrid, records, variable: str | Sequence[str], config: RuleConfig,
                  user_rule: UserRule | None = None, strata: Mapping[str, StratumInfo] | None = None,
                  provenance: Mapping[str, object] | None = None) -> MRGrid:
    """Aggregate ``variable`` onto the cells of ``existing`` without re-aggregating.

    Only records that carry a value for a variable count towards that
    variable's rules, so a sparse second variable fails (and is later
    suppressed) where it is too thin, instead of changing the geometry.
    With several variables each is checked on its own contributors and the
    cell fails if any of them fails.
    """
    variables = (variable,) if isinstance(variable, str) else tuple(variable)
    t = as_table(records, variables)
    for v in variables:
        if v not in t.values:
            t.values[v] = np.full(len(t), np.nan)
    spec = existing.spec
    cells = [c.cell for c in existing.cells]
    if not cells:
        raise SpecMismatch("the existing grid has no cells")
    ckeys = np.array([key_of(c) for c in cells], dtype=np.int64)
    order = np.argsort(ckeys)
    skeys = ckeys[order]

    where = np.full(len(t), -1, dtype=np.int64)
    if len(t):
        try:
            c0, r0 = base_indices(t.x, t.y, spec)
        except Exception as e:
            raise SpecMismatch(f"records do not fit the existing grid: {e}") from e
        for lv in sorted({c.level for c in cells}):
            kl = _level_keys(c0, r0, spec, lv)
            pos = np.clip(np.searchsorted(skeys, kl), 0, len(skeys) - 1)
            hit = skeys[pos] == kl
            where[hit] = order[pos[hit]]

    sa = _strata_arrays(t, strata) if config.reliability_enabled else None
    g = len(cells)
    verdicts = [[] for _ in range(g)]
    per_var: dict[str, BatchStats] = {}
    for v in variables:
        carries = ~np.isnan(t.values[v])
        if (carries & (where < 0)).any():
            raise SpecMismatch(f"records carrying {v!r} fall outside the existing grid")
        idx = np.flatnonzero(carries)
        bs = group_stats(t, idx, where[idx], g, [v], sa)
        bv = evaluate_batch(bs, config, user_rule, cells)
        per_var[v] = bs
        for i in range(g):
            verdicts[i].append(bv.verdict(i))

    idx_all = np.flatnonzero(where >= 0)
    base = group_stats(t, idx_all, where[idx_all], g, [], None)
    out = []
    for i, cell in enumerate(cells):
        verdict = _combine(verdicts[i], variables)
        out.append(MRCell(cell, float(base.weighted_count[i]), int(base.record_count[i]),
                          {v: float(per_var[v].totals[v][i]) for v in variables}, verdict,
                          warning=verdict.warning))
    out.sort(key=lambda c: c.cell)
    prov = {"version": __version__, "matched_to": dict(existing.provenance), **(provenance or {})}
    return MRGrid(tuple(out), spec, config, variables, prov)


def _combine(verdicts: Sequence[RuleVerdict], variables: Sequence[str]) -> RuleVerdict:
    failed = Rule.NONE
    warn = False
    details = []
    for v, vd in zip(variables, verdicts):
        details += [(d[0] or v, d[1], d[2]) for d in vd.details]
        if vd.outcome is Outcome.FAIL and failed is Rule.NONE:
            failed = vd.failed_rule
        warn |= vd.warning
    outcome = Outcome.FAIL if failed is not Rule.NONE else (Outcome.PASS_WITH_WARNING if warn else Outcome.PASS)
    return RuleVerdict(outcome, failed, tuple(details))


def with_cells(grid: MRGrid, cells: Sequence[MRCell], **changes) -> MRGrid:
    return replace(grid, cells=tuple(cells), **changes)
