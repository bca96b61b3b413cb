import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrgrid import GridSpec, RuleConfig, multi_res_grid, post_process, ratio_grid, round_to_base
from mrgrid.errors import VariableMissing
from mrgrid.ingest import Record
from helpers import random_table
from oracles import exact_sum

UNIT = GridSpec(0.0, 0.0, 0, (1, 2, 4, 8))


def recs_in(col, row, n, uaa, org):
    return [Record(f"{col}{row}{i}", col + 0.5, row + 0.5, 1.0, "", {"UAA": uaa, "ORG": org}) for i in range(n)]


class TestRounding:
    @pytest.mark.parametrize("v,want", [(877, 880), (5, 10), (0, 0), (4.999, 0), (15, 20), (-15, -20), (24, 20)])
    def test_values(self, v, want):
        assert round_to_base(v) == want

    def test_other_base(self):
        assert round_to_base(12, 5) == 10 and round_to_base(12.5, 5) == 15

    @given(st.floats(-1e9, 1e9, allow_nan=False), st.integers(1, 1000))
    def test_multiple_and_nearest(self, v, base):
        r = round_to_base(v, base)
        assert r % base == 0
        assert abs(r - v) <= base / 2 + 1e-6 * max(1, abs(v))


class TestPostProcess:
    def test_nothing_fails(self):
        g = post_process(multi_res_grid(recs_in(0, 0, 12, 7.0, 1.0), UNIT, RuleConfig(), ["UAA"]))
        c, = g.cells
        assert not c.suppressed and c.published_count == 10 and c.published == {"UAA": 80}

    def test_failing_cell_is_suppressed(self):
        recs = recs_in(0, 0, 12, 7.0, 1.0) + recs_in(7, 7, 3, 1.0, 0.0)
        cfg = RuleConfig(suppresslim=0.5)
        g = post_process(multi_res_grid(recs, UNIT, cfg, ["UAA"]))
        failed = [c for c in g.cells if c.suppressed]
        assert len(failed) == 1
        assert failed[0].published_count is None and failed[0].published == {"UAA": None}
        assert failed[0].weighted_count == 3  # kept internally for auditing

    def test_idempotent(self, rng):
        g = multi_res_grid(random_table(rng, 400, extent=8.0, res=1.0, spread=2.0), UNIT, RuleConfig(), ["UAA"])
        once = post_process(g)
        assert post_process(once) == once

    def test_suppression_accounting(self, rng):
        t = random_table(rng, 700, extent=8.0, res=1.0, spread=2.0)
        g = post_process(multi_res_grid(t, UNIT, RuleConfig(suppresslim=0.1), ["UAA", "ORG"]))
        for v in ("UAA", "ORG"):
            disclosed = exact_sum(c.totals[v] for c in g.cells if not c.suppressed)
            withheld = exact_sum(c.totals[v] for c in g.cells if c.suppressed)
            assert disclosed + withheld == exact_sum(t.weight * t.values[v])
        for c in g.cells:
            if not c.suppressed:
                assert c.published_count % 10 == 0 and all(p % 10 == 0 for p in c.published.values())


class TestRatio:
    def test_plain_ratio(self):
        g = multi_res_grid(recs_in(0, 0, 20, 10.0, 2.0), UNIT, RuleConfig(), ["ORG", "UAA"])
        rc, = ratio_grid(post_process(g), "ORG", "UAA")
        assert (rc.numerator, rc.denominator, rc.ratio) == (40, 200, 0.2)

    def test_identity(self):
        g = multi_res_grid(recs_in(0, 0, 20, 10.0, 10.0), UNIT, RuleConfig(), ["ORG", "UAA"])
        assert ratio_grid(g, "ORG", "UAA")[0].ratio == 1.0

    def test_zero_denominator_is_suppressed(self):
        g = multi_res_grid(recs_in(0, 0, 20, 0.0, 0.0), UNIT, RuleConfig(), ["ORG", "UAA"])
        rc, = ratio_grid(g, "ORG", "UAA")
        assert rc.suppressed and rc.ratio is None

    def test_suppressed_cell_gives_suppressed_ratio(self):
        recs = recs_in(0, 0, 20, 5.0, 1.0) + recs_in(7, 7, 2, 5.0, 1.0)
        g = post_process(multi_res_grid(recs, UNIT, RuleConfig(suppresslim=0.5), ["ORG", "UAA"]))
        out = {r.cell: r for r in ratio_grid(g, "ORG", "UAA")}
        for c in g.cells:
            assert out[c.cell].suppressed == c.suppressed

    def test_unknown_variable(self):
        g = multi_res_grid(recs_in(0, 0, 20, 5.0, 1.0), UNIT, RuleConfig(), ["UAA"])
        with pytest.raises(VariableMissing):
            ratio_grid(g, "ORG", "UAA")

    def test_rounding_keeps_subset_ratio_in_bounds(self):
        # ORG 15 -> 20 and UAA 24 -> 20: rounding is monotone, so the ratio tops out at 1
        recs = recs_in(0, 0, 12, 1.0, 1.0) + [Record("x", 0.5, 0.5, 1.0, "", {"UAA": 12.0, "ORG": 3.0})]
        rc, = ratio_grid(post_process(multi_res_grid(recs, UNIT, RuleConfig(), ["ORG", "UAA"])), "ORG", "UAA")
        assert (rc.numerator, rc.denominator, rc.ratio, rc.above_one) == (20, 20, 1.0, False)

    def test_inconsistent_input_is_flagged(self):
        g = post_process(multi_res_grid(recs_in(0, 0, 20, 5.0, 8.0), UNIT, RuleConfig(), ["ORG", "UAA"]))
        rc, = ratio_grid(g, "ORG", "UAA")
        assert rc.ratio == pytest.approx(1.6) and rc.above_one

    @given(st.integers(0, 10**6))
    def test_bounds(self, seed):
        rng = np.random.default_rng(seed)
        t = random_table(rng, int(rng.integers(10, 500)), extent=8.0, res=1.0, spread=2.0)
        g = post_process(multi_res_grid(t, UNIT, RuleConfig(), ["ORG", "UAA"]))
        for rc in ratio_grid(g, "ORG", "UAA"):
            if not rc.suppressed:
                assert 0 <= rc.ratio <= 1 or rc.above_one
                assert rc.above_one == (rc.ratio > 1)
