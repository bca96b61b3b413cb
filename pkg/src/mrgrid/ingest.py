"""Microdata loading, FSS-style location codes and border adjustment."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import BadRes, IngestError, Malformed, MissingColumn, TooManyBadRows, UnknownVariable
from .grid import GridSpec, fmt_number

log = logging.getLogger(__name__)


class Adjust(str, Enum):
    LL = "LL"
    LR = "LR"
    UL = "UL"
    UR = "UR"
    JITTER = "JITTER"
    NONE = "NONE"


# sign of the shift along (x, y) that moves a corner to the cell centre
_CORNER_SHIFT = {
    Adjust.LL: (1, 1),
    Adjust.LR: (-1, 1),
    Adjust.UL: (1, -1),
    Adjust.UR: (-1, -1),
}


@dataclass(frozen=True)
class Record:
    record_id: str
    x: float
    y: float
    weight: float = 1.0
    stratum_id: str = ""
    values: Mapping[str, float] = field(default_factory=dict)
    region_id: str | None = None

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"record {self.record_id}: non-finite coordinates")
        if not (self.weight >= 0 and math.isfinite(self.weight)):
            raise ValueError(f"record {self.record_id}: weight must be finite and >= 0")
        for k, v in self.values.items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"record {self.record_id}: value {k}={v} must be finite and >= 0")


@dataclass
class RecordTable:
    """Columnar form of a record list; what the engine works on.

    Missing variable values are NaN. ``stratum`` holds integer codes into
    ``stratum_labels``.
    """

    ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    stratum: np.ndarray
    stratum_labels: tuple[str, ...]
    values: dict[str, np.ndarray]
    region: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.x)

    @classmethod
    def from_records(cls, records: Sequence[Record], variables: Iterable[str] | None = None) -> "RecordTable":
        records = list(records)
        if variables is None:
            seen: dict[str, None] = {}
            for r in records:
                seen.update(dict.fromkeys(r.values))
            variables = list(seen)
        strata = np.array([r.stratum_id for r in records], dtype=object)
        labels, codes = _factorize(strata)
        regions = [r.region_id for r in records]
        return cls(
            ids=np.array([r.record_id for r in records], dtype=object),
            x=np.array([r.x for r in records], dtype=float),
            y=np.array([r.y for r in records], dtype=float),
            weight=np.array([r.weight for r in records], dtype=float),
            stratum=codes,
            stratum_labels=labels,
            values={v: np.array([r.values.get(v, np.nan) for r in records], dtype=float) for v in variables},
            region=None if all(g is None for g in regions) else np.array(regions, dtype=object),
        )

    def records(self) -> list[Record]:
        out = []
        for i in range(len(self)):
            vals = {k: float(a[i]) for k, a in self.values.items() if not np.isnan(a[i])}
            out.append(Record(str(self.ids[i]), float(self.x[i]), float(self.y[i]), float(self.weight[i]),
                              self.stratum_labels[self.stratum[i]], vals,
                              None if self.region is None else self.region[i]))
        return out

    def take(self, idx: np.ndarray) -> "RecordTable":
        return RecordTable(self.ids[idx], self.x[idx], self.y[idx], self.weight[idx], self.stratum[idx],
                           self.stratum_labels, {k: v[idx] for k, v in self.values.items()},
                           None if self.region is None else self.region[idx])

    def value(self, name: str) -> np.ndarray:
        """Values of ``name`` with missing entries read as zero."""
        try:
            v = self.values[name]
        except KeyError:
            raise UnknownVariable(name) from None
        return np.nan_to_num(v, nan=0.0)


def as_table(records, variables: Iterable[str] | None = None) -> RecordTable:
    if isinstance(records, RecordTable):
        return records
    return RecordTable.from_records(records, variables)


def _factorize(arr) -> tuple[tuple[str, ...], np.ndarray]:
    labels = sorted(set(arr))
    lookup = {s: i for i, s in enumerate(labels)}
    codes = np.fromiter((lookup[s] for s in arr), dtype=np.int64, count=len(arr))
    return tuple(labels), codes


# -- location codes ----------------------------------------------------------

_NUM = r"[+-]?\d+(?:\.\d+)?"
_STEPS = [
    ("CRS", re.compile(r"CRS(\d+)", re.I)),
    ("RES", re.compile(rf"RES({_NUM})M", re.I)),
    ("N", re.compile(rf"N({_NUM})", re.I)),
    ("E", re.compile(rf"E({_NUM})", re.I)),
]
_COUNTRY = re.compile(r"([A-Za-z]*)_")
_TOKEN = re.compile(r"[A-Za-z]+|[^A-Za-z]+")


def format_geo_lct(x: float, y: float, res: float, crs_id: int, country: str | None = None) -> str:
    """Inverse of :func:`parse_geo_lct`."""
    prefix = f"{country}_" if country else ""
    return f"{prefix}CRS{int(crs_id)}RES{fmt_number(res)}mN{fmt_number(y)}E{fmt_number(x)}"


def parse_geo_lct(code: str) -> tuple[float, float, float, int]:
    """Parse ``[<COUNTRY>_]CRS<id>RES<r>mN<northing>E<easting>``.

    Returns ``(x, y, res, crs_id)`` with x the easting. Letter markers are
    case-insensitive.
    """
    s = code.strip()
    pos = 0
    m = _COUNTRY.match(s)
    if m:
        pos = m.end()
    found = []
    for _name, pat in _STEPS:
        m = pat.match(s, pos)
        if m is None:
            tok = _TOKEN.match(s, pos)
            raise Malformed(code, pos, tok.group(0) if tok else "")
        found.append(m.group(1))
        pos = m.end()
    if pos != len(s):
        raise Malformed(code, pos, s[pos:])
    crs, res, north, east = found
    return float(east), float(north), float(res), int(crs)


def adjust_location(x: float, y: float, reported_res: float, mode: Adjust | str,
                    rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Move a reported corner location to the interior of its cell."""
    xs, ys = adjust_locations(np.array([x], dtype=float), np.array([y], dtype=float),
                              np.array([reported_res], dtype=float), Adjust(mode), rng)
    return float(xs[0]), float(ys[0])


def adjust_locations(x: np.ndarray, y: np.ndarray, res: np.ndarray, mode: Adjust,
                     rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    res = np.broadcast_to(np.asarray(res, dtype=float), np.shape(x))
    if not (res > 0).all():
        raise BadRes("reported resolution must be > 0")
    mode = Adjust(mode)
    half = res / 2.0
    if mode is Adjust.NONE:
        return x.copy(), y.copy()
    if mode is Adjust.JITTER:
        if rng is None:
            raise ValueError("JITTER adjustment needs a seeded generator")
        u = _open_offsets(rng, len(x))
        v = _open_offsets(rng, len(x))
        return x + u * half, y + v * half
    sx, sy = _CORNER_SHIFT[mode]
    return x + sx * half, y + sy * half


def _open_offsets(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform draws on (-1, 1) without 0."""
    u = rng.uniform(-1.0, 1.0, n)
    bad = (u == 0.0) | (u == -1.0)
    while bad.any():
        u[bad] = rng.uniform(-1.0, 1.0, int(bad.sum()))
        bad = (u == 0.0) | (u == -1.0)
    return u


# -- CSV loading ---------------------------------------------------------------

@dataclass(frozen=True)
class IngestConfig:
    """Which CSV columns carry what, and how to treat locations.

    Exactly one of ``(x_col, y_col)`` and ``geo_lct_col`` must be given.
    ``reported_res`` is the resolution the x/y columns were snapped to
    (defaults to the finest grid resolution); GEO_LCT codes carry their own.
    """

    variables: tuple[str, ...] = ()
    id_col: str | None = None
    x_col: str | None = None
    y_col: str | None = None
    geo_lct_col: str | None = None
    weight_col: str | None = None
    stratum_col: str | None = None
    region_col: str | None = None
    adjust: Adjust = Adjust.LL
    seed: int = 0
    reported_res: float | None = None
    max_bad_fraction: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        if not isinstance(self.adjust, Adjust):
            object.__setattr__(self, "adjust", Adjust(str(self.adjust).upper()))
        xy = self.x_col is not None or self.y_col is not None
        if xy == (self.geo_lct_col is not None):
            raise IngestError("configure exactly one location mode: x/y columns or a GEO_LCT column")
        if xy and (self.x_col is None or self.y_col is None):
            raise IngestError("both x and y columns are required")


@dataclass(frozen=True)
class RowFailure:
    line: int
    reason: str


@dataclass
class IngestReport:
    rows_read: int = 0
    dropped: int = 0
    default_weight: int = 0
    missing: dict[str, int] = field(default_factory=dict)
    failures: list[RowFailure] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "dropped": self.dropped,
            "default_weight": self.default_weight,
            "missing": dict(sorted(self.missing.items())),
            "failures": [{"line": f.line, "reason": f.reason} for f in self.failures[:50]],
        }


def load_table(path: str | Path, config: IngestConfig, spec: GridSpec) -> tuple[RecordTable, IngestReport]:
    """Read a CSV into a :class:`RecordTable`.

    Bad rows (unparseable location, negative or non-numeric values, negative
    weight, point left on a grid line) are dropped and reported; the call
    fails with :class:`TooManyBadRows` when more than
    ``max(1, max_bad_fraction * rows)`` rows are bad.
    """
    path = Path(path)
    df = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""], encoding="utf-8")
    needed = [c for c in (config.id_col, config.x_col, config.y_col, config.geo_lct_col,
                          config.weight_col, config.stratum_col, config.region_col) if c]
    needed += list(config.variables)
    for c in needed:
        if c not in df.columns:
            raise MissingColumn(c)

    n = len(df)
    report = IngestReport(rows_read=n)
    report.missing = {c: int(df[c].isna().sum()) for c in needed}
    bad = np.zeros(n, dtype=bool)
    reasons: dict[int, str] = {}

    def flag(mask: np.ndarray, reason: str) -> None:
        for i in np.flatnonzero(mask & ~bad):
            reasons[int(i)] = reason
        bad[mask] = True

    def numeric(col: str) -> np.ndarray:
        return pd.to_numeric(df[col], errors="coerce").to_numpy(dtype=float)

    if config.geo_lct_col:
        x = np.full(n, np.nan)
        y = np.full(n, np.nan)
        res = np.full(n, np.nan)
        for i, code in enumerate(df[config.geo_lct_col].to_numpy()):
            if not isinstance(code, str):
                continue
            try:
                x[i], y[i], res[i], crs = parse_geo_lct(code)
            except Malformed as e:
                reasons.setdefault(i, str(e))
                bad[i] = True
                continue
            if crs != spec.crs_id:
                reasons.setdefault(i, f"CRS {crs} does not match grid CRS {spec.crs_id}")
                bad[i] = True
        flag(~np.isfinite(x) | ~np.isfinite(y), "missing location")
    else:
        x = numeric(config.x_col)
        y = numeric(config.y_col)
        flag(~np.isfinite(x) | ~np.isfinite(y), "missing or non-numeric coordinates")
        res = np.full(n, float(config.reported_res or spec.res(0)))

    if config.weight_col:
        raw = df[config.weight_col]
        w = numeric(config.weight_col)
        missing_w = raw.isna().to_numpy()
        flag(~missing_w & ~np.isfinite(w), "non-numeric weight")
        flag(np.isfinite(w) & (w < 0), "negative weight")
        report.default_weight = int(missing_w.sum())
        w = np.where(missing_w, 1.0, w)
    else:
        w = np.ones(n)

    values = {}
    for v in config.variables:
        raw = df[v]
        a = numeric(v)
        flag(raw.notna().to_numpy() & ~np.isfinite(a), f"non-numeric value for {v}")
        flag(np.isfinite(a) & (a < 0), f"negative value for {v}")
        values[v] = a

    good = ~bad & np.isfinite(x) & np.isfinite(y)
    if good.any():
        rng = np.random.default_rng(config.seed)
        ax, ay = adjust_locations(x[good], y[good], res[good], config.adjust, rng)
        on_line = _on_any_line(ax, ay, spec)
        if on_line.any() and config.adjust is Adjust.JITTER:
            # jitter draws landing exactly on a finer grid line are redrawn
            for _ in range(100):
                jx, jy = adjust_locations(x[good][on_line], y[good][on_line], res[good][on_line], config.adjust, rng)
                ax[on_line], ay[on_line] = jx, jy
                on_line = _on_any_line(ax, ay, spec)
                if not on_line.any():
                    break
        x = x.copy()
        y = y.copy()
        x[good], y[good] = ax, ay
        gi = np.flatnonzero(good)
        stuck = np.zeros(n, dtype=bool)
        stuck[gi[on_line]] = True
        flag(stuck, "location on a grid line after adjustment")
        below = np.zeros(n, dtype=bool)
        below[gi] = (ax < spec.origin_x) | (ay < spec.origin_y)
        flag(below, "location below or left of the grid origin")

    failures = [RowFailure(i + 2, reasons.get(i, "unreadable")) for i in np.flatnonzero(bad)]
    report.failures = failures
    report.dropped = len(failures)
    if report.dropped > max(1.0, config.max_bad_fraction * n):
        raise TooManyBadRows(failures, n)
    for f in failures[:20]:
        log.warning("dropped line %d: %s", f.line, f.reason)

    keep = np.flatnonzero(~bad)
    ids = df[config.id_col].to_numpy(dtype=object)[keep] if config.id_col else \
        np.array([str(i + 1) for i in keep], dtype=object)
    if config.stratum_col:
        sraw = df[config.stratum_col].fillna("").to_numpy(dtype=object)[keep]
    else:
        sraw = np.array([""] * len(keep), dtype=object)
    labels, codes = _factorize(sraw)
    region = df[config.region_col].fillna("").to_numpy(dtype=object)[keep] if config.region_col else None
    table = RecordTable(
        ids=ids, x=x[keep], y=y[keep], weight=w[keep], stratum=codes, stratum_labels=labels,
        values={k: a[keep] for k, a in values.items()}, region=region,
    )
    return table, report


def _on_any_line(x: np.ndarray, y: np.ndarray, spec: GridSpec) -> np.ndarray:
    res = spec.res(0)
    fx = (x - spec.origin_x) / res
    fy = (y - spec.origin_y) / res
    return (np.floor(fx) == fx) | (np.floor(fy) == fy)


def load_records(path: str | Path, config: IngestConfig, spec: GridSpec) -> tuple[list[Record], IngestReport]:
    table, report = load_table(path, config, spec)
    return table.records(), report
