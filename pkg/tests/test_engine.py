import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrgrid import GridSpec, RuleConfig, build_base_grid, grid_to_match, multi_res_grid
from mrgrid.errors import SpecMismatch
from mrgrid.grid import CellId, cell_bounds, parent_of
from mrgrid.ingest import Record
from mrgrid.rules import Outcome
from helpers import grid_as_dict, points_table, random_table, toy_points
from oracles import exact_sum, quadtree_grid

UNIT = GridSpec(0.0, 0.0, 0, (1, 2, 4, 8, 16))


def block(col, row, n, value=1.0, level_res=1.0):
    """``n`` unit-weight records in base cell (col, row)."""
    return [Record(f"{col}-{row}-{i}", (col + 0.5) * level_res, (row + 0.5) * level_res, 1.0, "",
                   {"UAA": value}) for i in range(n)]


class TestBaseGrid:
    def test_one_cell(self):
        recs = [Record(str(i), 1500.5, 1500.5, 1.0, "", {"UAA": v}) for i, v in enumerate([10, 20, 30])]
        spec = GridSpec(0, 0, 3035, (1000, 2000))
        base = build_base_grid(recs, spec, ["UAA"])
        (cell, stats), = base.items()
        assert cell == CellId(0, 1, 1)
        assert stats.weighted_count == 3 and stats.variables["UAA"].total == 60
        assert stats.variables["UAA"].top1.value == 30 and stats.variables["UAA"].top2.value == 20

    def test_two_cells_and_empty(self):
        spec = GridSpec(0, 0, 3035, (1000, 2000))
        recs = [Record("a", 500.5, 500.5), Record("b", 1500.5, 500.5)]
        assert len(build_base_grid(recs, spec)) == 2
        assert build_base_grid([], spec) == {}

    def test_coarser_level(self):
        recs = block(0, 0, 3) + block(1, 1, 4)
        base = build_base_grid(recs, UNIT, ["UAA"], level=1)
        assert list(base) == [CellId(1, 0, 0)] and base[CellId(1, 0, 0)].weighted_count == 7


class TestMultiRes:
    def test_all_pass_keeps_base_grid(self):
        recs = block(0, 0, 12) + block(5, 5, 15)
        g = multi_res_grid(recs, UNIT, RuleConfig(), ["UAA"])
        assert [c.cell for c in g.cells] == [CellId(0, 0, 0), CellId(0, 5, 5)]
        assert not g.trail

    def test_dense_block_survives_sparse_rest_merges(self):
        # 4x4 base grid: the upper right 2x2 block is dense, everything else sparse
        recs = []
        for c in range(4):
            for r in range(4):
                recs += block(c, r, 12 if (c >= 2 and r >= 2) else 3)
        spec = GridSpec(0.0, 0.0, 0, (1, 2, 4))
        g = multi_res_grid(recs, spec, RuleConfig(), ["UAA"])
        cells = {c.cell for c in g.cells}
        assert {CellId(0, c, r) for c in (2, 3) for r in (2, 3)} <= cells
        assert {CellId(1, 0, 0), CellId(1, 1, 0), CellId(1, 0, 1)} <= cells
        assert len(cells) == 7

    def test_small_failing_cell_is_left_behind(self):
        # one failing cell holding 8% of its would-be parent
        recs = block(0, 0, 4, value=2.0) + block(1, 0, 12, value=2.0) + block(0, 1, 17, value=2.0) \
            + block(1, 1, 17, value=2.0)
        cfg = RuleConfig(suppresslim=0.1)
        g = multi_res_grid(recs, UNIT, cfg, ["UAA"])
        cells = {c.cell: c for c in g.cells}
        assert CellId(0, 0, 0) in cells and cells[CellId(0, 0, 0)].verdict.outcome is Outcome.FAIL
        assert {CellId(0, 1, 0), CellId(0, 0, 1), CellId(0, 1, 1)} <= set(cells)
        merged = multi_res_grid(recs, UNIT, RuleConfig(), ["UAA"])
        assert [c.cell for c in merged.cells] == [CellId(1, 0, 0)]

    def test_count_only(self):
        recs = block(0, 0, 4) + block(1, 0, 4) + block(0, 1, 4)
        g = multi_res_grid(recs, UNIT, RuleConfig())
        assert [c.cell for c in g.cells] == [CellId(1, 0, 0)]
        assert g.cells[0].weighted_count == 12 and g.cells[0].totals == {}

    def test_empty(self):
        assert len(multi_res_grid([], UNIT, RuleConfig())) == 0

    def test_trail_explains_every_coarse_cell(self, rng):
        t = random_table(rng, 800, extent=16.0, res=1.0, spread=3.0)
        g = multi_res_grid(t, UNIT, RuleConfig(), ["UAA"])
        for c in g.cells:
            if c.cell.level > 0:
                kids = g.trail[c.cell]
                assert kids and all(parent_of(k, c.cell.level, UNIT) == c.cell for k in kids)

    def test_no_fail_below_top_without_suppresslim(self, rng):
        t = random_table(rng, 500, extent=16.0, res=1.0, spread=4.0)
        g = multi_res_grid(t, UNIT, RuleConfig(), ["UAA", "ORG"])
        assert all(c.cell.level == UNIT.top for c in g.cells if c.verdict.outcome is Outcome.FAIL)

    def test_user_rule_forces_merge(self):
        recs = block(0, 0, 12, value=10.0) + block(1, 0, 12, value=1.0)
        g = multi_res_grid(recs, UNIT, RuleConfig(), ["UAA"], user_rule=lambda s: s.variables["UAA"].total <= 100)
        assert [c.cell.level for c in g.cells] == [4]

    def test_deterministic(self, rng):
        t = random_table(rng, 1000, extent=16.0, res=1.0)
        assert multi_res_grid(t, UNIT, RuleConfig(), ["UAA"]) == multi_res_grid(t, UNIT, RuleConfig(), ["UAA"])


@given(st.integers(0, 10**6), st.sampled_from([0.0, 0.05, 0.2]))
def test_partition_and_exact_totals(seed, sl):
    rng = np.random.default_rng(seed)
    t = random_table(rng, int(rng.integers(1, 600)), extent=16.0, res=1.0, spread=float(rng.uniform(1, 6)))
    g = multi_res_grid(t, UNIT, RuleConfig(suppresslim=sl), ["UAA", "ORG"])
    cells = [c.cell for c in g.cells]
    # disjoint: no cell is an ancestor of another
    seen = set(cells)
    for c in cells:
        assert all(parent_of(c, lv, UNIT) not in seen for lv in range(c.level + 1, UNIT.levels))
    # every record in exactly one cell
    hits = np.zeros(len(t), dtype=int)
    for c in cells:
        x0, y0, x1, y1 = cell_bounds(c, UNIT)
        hits += (t.x >= x0) & (t.x < x1) & (t.y >= y0) & (t.y < y1)
    assert (hits == 1).all()
    assert exact_sum(c.weighted_count for c in g.cells) == exact_sum(t.weight)
    for v in ("UAA", "ORG"):
        assert exact_sum(c.totals[v] for c in g.cells) == exact_sum(t.weight * t.values[v])


@pytest.mark.parametrize("sl", [0.0, 0.05, 0.1])
def test_matches_quadtree_oracle(sl):
    for seed in range(60):
        pts = toy_points(np.random.default_rng(seed))
        want = quadtree_grid(pts, UNIT.levels, ["UAA", "ORG"], suppresslim=sl)
        got = grid_as_dict(multi_res_grid(points_table(pts), UNIT, RuleConfig(suppresslim=sl), ["UAA", "ORG"]))
        assert got == want, f"seed {seed}"


class TestMatch:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.t = random_table(rng, 1500, extent=16.0, res=1.0, spread=3.0)
        self.g = multi_res_grid(self.t, UNIT, RuleConfig(), ["UAA"])

    def test_same_variable_is_identity(self):
        m = grid_to_match(self.g, self.t, "UAA", RuleConfig())
        assert [(c.cell, c.totals, c.verdict.outcome) for c in m.cells] == \
               [(c.cell, c.totals, c.verdict.outcome) for c in self.g.cells]

    def test_absent_variable_fails_everywhere(self):
        t = self.t.take(np.arange(len(self.t)))
        t.values["NEW"] = np.full(len(t), np.nan)
        m = grid_to_match(self.g, t, "NEW", RuleConfig())
        assert all(c.verdict.outcome is Outcome.FAIL for c in m.cells)
        assert {c.verdict.failed_rule.name for c in m.cells} == {"THRESHOLD"}

    def test_dense_second_variable_adds_no_suppression(self):
        t = self.t.take(np.arange(len(self.t)))
        t.values["DENSE"] = np.full(len(t), 2.0)
        m = grid_to_match(self.g, t, "DENSE", RuleConfig())
        fails = lambda grid: {c.cell for c in grid.cells if c.verdict.outcome is Outcome.FAIL}  # noqa: E731
        assert fails(m) <= fails(self.g)

    def test_geometry_kept_for_sparse_variable(self):
        t = self.t.take(np.arange(len(self.t)))
        t.values["ORG"] = np.where(np.arange(len(t)) % 9 == 0, 1.0, np.nan)
        m = grid_to_match(self.g, t, "ORG", RuleConfig())
        assert [c.cell for c in m.cells] == [c.cell for c in self.g.cells]

    def test_records_outside_existing_cells(self):
        far = [Record("z", 15.5, 15.5, 1.0, "", {"UAA": 1.0})]
        existing = multi_res_grid(block(0, 0, 12), UNIT, RuleConfig(), ["UAA"])
        with pytest.raises(SpecMismatch):
            grid_to_match(existing, far, "UAA", RuleConfig())
