"""Instance generators shared by the test modules."""

import numpy as np

from mrgrid.ingest import RecordTable


def random_table(rng, n, extent=64_000.0, res=1000.0, clusters=5, spread=6000.0, integer_weights=True,
                 strata=3, variables=("UAA", "ORG"), regions=None):
    """Clustered records placed strictly inside base cells, with dyadic values.

    Integer weights and values on a 1/16 grid keep every float sum exact.
    """
    centres = rng.uniform(0, extent, (clusters, 2))
    pts = centres[rng.integers(0, clusters, n)] + rng.normal(0, spread, (n, 2))
    pts = np.clip(pts, 0, extent - 1)
    # snap to cell centres plus a dyadic offset so nothing sits on a line
    pts = np.floor(pts / res) * res + res / 2 + rng.integers(-7, 8, (n, 2)) * (res / 16)
    w = rng.integers(1, 4, n).astype(float) if integer_weights else np.full(n, 1.0)
    uaa = np.round(rng.lognormal(3, 1.3, n) * 16) / 16
    org = np.where(rng.random(n) < 0.3, np.floor(uaa * rng.uniform(0, 1, n) * 16) / 16, 0.0)
    vals = {}
    if "UAA" in variables:
        vals["UAA"] = uaa
    if "ORG" in variables:
        vals["ORG"] = org
    labels = tuple(f"S{i}" for i in range(strata))
    region = None
    if regions:
        region = np.array([f"N{int(x // (extent / regions))}" for x in pts[:, 0]], dtype=object)
    return RecordTable(np.array([f"r{i}" for i in range(n)], dtype=object), pts[:, 0], pts[:, 1], w,
                       rng.integers(0, strata, n), labels, vals, region)


def toy_points(rng, size=16):
    """Points on a ``size`` x ``size`` unit base grid, clustered, integer weights and values."""
    n = int(rng.integers(5, 300))
    k = int(rng.integers(1, 5))
    centres = rng.uniform(0, size, (k, 2))
    xy = centres[rng.integers(0, k, n)] + rng.normal(0, rng.uniform(0.5, 4), (n, 2))
    xy = np.clip(np.floor(xy), 0, size - 1) + 0.5
    w = rng.integers(1, 4, n).astype(float)
    heavy = rng.random(n) < 0.05
    uaa = np.where(heavy, rng.integers(200, 2000, n), rng.integers(0, 40, n)).astype(float)
    org = np.floor(uaa * rng.uniform(0, 1, n))
    return [(float(x), float(y), float(wi), {"UAA": float(a), "ORG": float(b)})
            for (x, y), wi, a, b in zip(xy, w, uaa, org)]


def points_table(points, variables=("UAA", "ORG")):
    n = len(points)
    return RecordTable(
        np.array([str(i) for i in range(n)], dtype=object),
        np.array([p[0] for p in points]), np.array([p[1] for p in points]), np.array([p[2] for p in points]),
        np.zeros(n, dtype=np.int64), ("",),
        {v: np.array([p[3].get(v, 0.0) for p in points]) for v in variables}, None)


def grid_as_dict(grid):
    """``{(level, col, row): (weighted_count, totals, verdict)}`` like the quadtree oracle."""
    return {(c.cell.level, c.cell.col, c.cell.row):
            (c.weighted_count, dict(c.totals), "FAIL" if c.verdict.outcome == 2 else "PASS")
            for c in grid.cells}


def load_population(df, directory, spec, adjust="JITTER", name="pop.csv"):
    """Write a generated population to CSV and read it back through ingest."""
    from mrgrid.ingest import IngestConfig, load_table
    from mrgrid.synth import COLUMNS, write_population

    path = directory / name
    write_population(df, path)
    loc = dict(geo_lct_col=COLUMNS["geo_lct"]) if COLUMNS["geo_lct"] in df else \
        dict(x_col=COLUMNS["x"], y_col=COLUMNS["y"])
    cfg = IngestConfig(variables=(COLUMNS["uaa"], COLUMNS["organic"]), id_col=COLUMNS["id"],
                       weight_col=COLUMNS["weight"], stratum_col=COLUMNS["stratum"], region_col=COLUMNS["region"],
                       adjust=adjust, **loc)
    table, _ = load_table(path, cfg, spec)
    return table
