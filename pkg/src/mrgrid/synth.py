"""Synthetic farm populations and a nearest-neighbour hot-deck.

These produce shareable fixtures in the CSV layout :mod:`mrgrid.ingest`
reads; they are not meant to mimic any particular census.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import BadParams, GroupTooSmall
from .ingest import format_geo_lct

COLUMNS = {
    "id": "REC_ID",
    "geo_lct": "GEO_LCT",
    "x": "X",
    "y": "Y",
    "stratum": "STRA_ID_CORE",
    "weight": "EXT_MODULE",
    "region": "NUTS3",
    "uaa": "UAA",
    "organic": "UAAXK0000_ORG",
}


@dataclass(frozen=True)
class PopulationParams:
    n_clusters: int = 20
    points_per_cluster: int = 250
    spread: float = 5000.0
    bbox: tuple[float, float, float, float] = (4_000_000.0, 3_000_000.0, 4_200_000.0, 3_200_000.0)
    uaa_mu: float = 3.5
    uaa_sigma: float = 1.2
    organic_share: float = 0.3
    n_strata: int = 4
    n_regions: int = 3
    sampling_fraction: float = 1.0
    value_quantum: float = 1 / 16
    seed: int = 0
    crs_id: int = 3035
    country: str | None = "XX"
    location: str = "geo_lct"
    reported_res: float = 1000.0

    def check(self) -> None:
        for name in ("n_clusters", "points_per_cluster", "n_strata", "n_regions"):
            if getattr(self, name) < 1:
                raise BadParams(f"{name} must be >= 1")
        if not 0 < self.sampling_fraction <= 1:
            raise BadParams("sampling_fraction must be in (0, 1]")
        x0, y0, x1, y1 = self.bbox
        if not (x1 > x0 and y1 > y0):
            raise BadParams("empty bounding box")
        if self.spread <= 0 or self.value_quantum <= 0 or self.reported_res <= 0:
            raise BadParams("spread, value_quantum and reported_res must be > 0")
        if self.location not in ("geo_lct", "xy"):
            raise BadParams("location must be 'geo_lct' or 'xy'")


def make_test_population(params: PopulationParams) -> pd.DataFrame:
    """Clustered points with log-normal areas and a stratified sample.

    Strata are area size classes crossed with regions (vertical stripes of
    the bounding box).  Each stratum keeps ``max(1, round(f * N_h))``
    records, each weighted ``N_h / n_h``; ``f = 1`` gives a census with
    unit weights.
    """
    params.check()
    rng = np.random.default_rng(params.seed)
    x0, y0, x1, y1 = params.bbox
    centres = np.column_stack([rng.uniform(x0, x1, params.n_clusters), rng.uniform(y0, y1, params.n_clusters)])
    n = params.n_clusters * params.points_per_cluster
    pts = np.repeat(centres, params.points_per_cluster, axis=0) + rng.normal(0, params.spread, (n, 2))
    # keep a margin so corner adjustment cannot push points across the box edge
    m = params.reported_res
    pts[:, 0] = np.clip(pts[:, 0], x0 + m, x1 - m)
    pts[:, 1] = np.clip(pts[:, 1], y0 + m, y1 - m)

    q = params.value_quantum
    uaa = np.maximum(np.round(rng.lognormal(params.uaa_mu, params.uaa_sigma, n) / q) * q, q)
    is_org = rng.random(n) < params.organic_share
    org = np.where(is_org, np.floor(uaa * rng.uniform(0.2, 1.0, n) / q) * q, 0.0)

    size_class = np.searchsorted(np.quantile(uaa, np.linspace(0, 1, params.n_strata + 1)[1:-1]), uaa, side="right")
    region = np.minimum(((pts[:, 0] - x0) / (x1 - x0) * params.n_regions).astype(int), params.n_regions - 1)
    stratum = np.array([f"S{r}{c}" for r, c in zip(region, size_class)])

    keep = np.zeros(n, dtype=bool)
    weight = np.zeros(n)
    for s in np.unique(stratum):
        members = np.flatnonzero(stratum == s)
        N_h = len(members)
        n_h = N_h if params.sampling_fraction == 1 else max(1, int(round(params.sampling_fraction * N_h)))
        chosen = members if n_h == N_h else np.sort(rng.choice(members, n_h, replace=False))
        keep[chosen] = True
        weight[chosen] = N_h / n_h

    idx = np.flatnonzero(keep)
    out = {COLUMNS["id"]: [f"H{i:07d}" for i in idx]}
    if params.location == "geo_lct":
        res = params.reported_res
        cx = np.floor(pts[idx, 0] / res) * res
        cy = np.floor(pts[idx, 1] / res) * res
        out[COLUMNS["geo_lct"]] = [format_geo_lct(a, b, res, params.crs_id, params.country) for a, b in zip(cx, cy)]
    else:
        out[COLUMNS["x"]] = np.round(pts[idx, 0], 2)
        out[COLUMNS["y"]] = np.round(pts[idx, 1], 2)
    out[COLUMNS["stratum"]] = stratum[idx]
    out[COLUMNS["weight"]] = weight[idx]
    out[COLUMNS["region"]] = [f"R{r}" for r in region[idx]]
    out[COLUMNS["uaa"]] = uaa[idx]
    out[COLUMNS["organic"]] = org[idx]
    return pd.DataFrame(out)


def write_population(df: pd.DataFrame, path: str | Path) -> None:
    df.to_csv(path, index=False, lineterminator="\n")


def hotdeck_synthesize(df: pd.DataFrame, group_cols: Sequence[str], value_cols: Sequence[str],
                       seed: int = 0, match_cols: Sequence[str] | None = None) -> pd.DataFrame:
    """Replace each record's values with those of its nearest neighbour in the group.

    Distance is Euclidean over ``match_cols`` (default ``value_cols``)
    standardised within the group; a record is never its own donor, equally
    close donors are drawn at random, and one donor may serve several
    recipients.
    """
    for c in list(group_cols) + list(value_cols) + list(match_cols or []):
        if c not in df.columns:
            raise BadParams(f"unknown column {c!r}")
    match_cols = list(match_cols or value_cols)
    rng = np.random.default_rng(seed)
    out = df.copy()
    vals = df[list(value_cols)].to_numpy()
    new_vals = vals.copy()
    for key, pos in sorted(df.groupby(list(group_cols), sort=True).indices.items(), key=lambda kv: str(kv[0])):
        if len(pos) < 2:
            raise GroupTooSmall(key)
        z = df.iloc[pos][match_cols].to_numpy(dtype=float)
        sd = z.std(axis=0)
        z = (z - z.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        for a in range(0, len(pos), 512):
            block = z[a:a + 512]
            d = ((block[:, None, :] - z[None, :, :]) ** 2).sum(axis=2)
            d[np.arange(len(block)), np.arange(a, a + len(block))] = np.inf
            for r, row in enumerate(d):
                best = np.flatnonzero(row == row.min())
                donor = best[int(rng.integers(len(best)))] if len(best) > 1 else best[0]
                new_vals[pos[a + r]] = vals[pos[donor]]
    out[list(value_cols)] = new_vals
    return out
