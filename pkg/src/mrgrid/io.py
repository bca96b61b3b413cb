"""Output writers (cells CSV, GeoJSON, ratio tables, run report) and the cells reader.

Everything is rendered to bytes first and then written with
:func:`write_all`, which either places every file or none of them.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import re
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .engine import MRCell, MRGrid
from .errors import OutputError, SpecMismatch
from .grid import CellId, GridSpec, cell_bounds, cell_polygon, fmt_number, parent_of
from .postprocess import RatioCell
from .rules import Outcome, Rule, RuleConfig, RuleVerdict

_LABEL = re.compile(r"^R([0-9.eE+-]+)_C(\d+)_R(\d+)$")


def _num(v: float) -> int | float:
    """JSON number matching :func:`fmt_number`'s CSV text."""
    f = float(v)
    return int(f) if f.is_integer() else f


def _field(v) -> str:
    return "" if v is None else str(v)


def cell_rows(grid: MRGrid) -> tuple[list[str], list[dict]]:
    """Header and rows of the cells table; suppressed values are ``None``."""
    header = ["cell_id", "res_m", "x_min", "y_min", "x_max", "y_max", "count_holdings",
              *grid.variables, "suppressed", "warning"]
    rows = []
    for c in sorted(grid.cells, key=lambda c: c.cell):
        x0, y0, x1, y1 = cell_bounds(c.cell, grid.spec)
        row = {"cell_id": c.cell.label(grid.spec), "res_m": _num(grid.spec.res(c.cell.level)),
               "x_min": _num(x0), "y_min": _num(y0), "x_max": _num(x1), "y_max": _num(y1),
               "count_holdings": c.published_count}
        for v in grid.variables:
            row[v] = c.published.get(v)
        row["suppressed"] = int(c.suppressed)
        row["warning"] = int(c.warning)
        rows.append(row)
    return header, rows


def _csv_bytes(header: Sequence[str], rows: Iterable[Mapping]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_field(fmt_number(r[h]) if isinstance(r[h], float) else r[h]) for h in header])
    return buf.getvalue().encode("utf-8")


def _geojson_bytes(spec: GridSpec, cells: Sequence[CellId], rows: Sequence[Mapping]) -> bytes:
    features = []
    for cell, props in zip(cells, rows):
        ring = [[_num(x), _num(y)] for x, y in cell_polygon(cell, spec)]
        ring.append(ring[0])
        features.append({"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [ring]},
                         "properties": dict(props)})
    doc = {"type": "FeatureCollection", "crs_epsg": spec.crs_id, "features": features}
    return (json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def _require_processed(grid: MRGrid) -> None:
    if not grid.processed:
        raise ValueError("post_process the grid before writing it")


def cells_csv(grid: MRGrid) -> bytes:
    _require_processed(grid)
    header, rows = cell_rows(grid)
    return _csv_bytes(header, rows)


def cells_geojson(grid: MRGrid) -> bytes:
    _require_processed(grid)
    _, rows = cell_rows(grid)
    return _geojson_bytes(grid.spec, sorted(c.cell for c in grid.cells), rows)


def ratio_rows(cells: Sequence[RatioCell], spec: GridSpec, numerator: str, denominator: str):
    header = ["cell_id", "res_m", "x_min", "y_min", "x_max", "y_max", numerator, denominator, "ratio",
              "suppressed", "above_one"]
    rows = []
    for rc in sorted(cells, key=lambda r: r.cell):
        x0, y0, x1, y1 = cell_bounds(rc.cell, spec)
        rows.append({"cell_id": rc.cell.label(spec), "res_m": _num(spec.res(rc.cell.level)),
                     "x_min": _num(x0), "y_min": _num(y0), "x_max": _num(x1), "y_max": _num(y1),
                     numerator: None if rc.suppressed else rc.numerator,
                     denominator: None if rc.suppressed else rc.denominator,
                     "ratio": rc.ratio, "suppressed": int(rc.suppressed), "above_one": int(rc.above_one)})
    return header, rows


def ratio_outputs(cells: Sequence[RatioCell], spec: GridSpec, numerator: str, denominator: str,
                  formats: Sequence[str]) -> dict[str, bytes]:
    header, rows = ratio_rows(cells, spec, numerator, denominator)
    out = {}
    if "csv" in formats:
        out["ratio.csv"] = _csv_bytes(header, rows)
    if "geojson" in formats:
        out["ratio.geojson"] = _geojson_bytes(spec, sorted(r.cell for r in cells), rows)
    return out


def grid_outputs(grid: MRGrid, formats: Sequence[str], stem: str = "cells") -> dict[str, bytes]:
    out = {}
    if "csv" in formats:
        out[f"{stem}.csv"] = cells_csv(grid)
    if "geojson" in formats:
        out[f"{stem}.geojson"] = cells_geojson(grid)
    return out


def json_bytes(doc: Mapping) -> bytes:
    return (json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n").encode("utf-8")


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def grid_summary(grid: MRGrid) -> dict:
    """Cell counts per resolution and what suppression withholds."""
    per_res = [{"res_m": grid.spec.res(lv), "cells": n} for lv, n in sorted(grid.level_counts().items())]
    supp = [c for c in grid.cells if c.suppressed]
    total_w = math.fsum(c.weighted_count for c in grid.cells)
    share = {"count_holdings": math.fsum(c.weighted_count for c in supp) / total_w if total_w > 0 else 0.0}
    for v in grid.variables:
        tv = math.fsum(c.totals[v] for c in grid.cells)
        share[v] = math.fsum(c.totals[v] for c in supp) / tv if tv > 0 else 0.0
    return {
        "cells": len(grid.cells),
        "cells_per_resolution": per_res,
        "suppressed_cells": len(supp),
        "warning_cells": sum(c.warning for c in grid.cells),
        "warning_cell_ids": [c.cell.label(grid.spec) for c in sorted(grid.cells, key=lambda c: c.cell) if c.warning],
        "suppressed_share": share,
    }


def write_all(outputs: Mapping[str | Path, bytes], directory: str | Path | None = None) -> list[Path]:
    """Write every file or none.

    Each payload goes to a temporary file in its target directory first;
    only when all of them are on disk are they renamed into place.
    """
    base = Path(directory) if directory is not None else None
    staged: list[tuple[Path, Path]] = []
    try:
        for name, data in outputs.items():
            target = base / name if base is not None else Path(name)
            target.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            staged.append((Path(tmp), target))
        for tmp, target in staged:
            os.replace(tmp, target)
    except OSError as e:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
        raise OutputError(f"cannot write outputs: {e}") from None
    return [t for _, t in staged]


def read_cells_csv(path: str | Path, spec: GridSpec) -> MRGrid:
    """Geometry of a previously written cells CSV, checked against ``spec``.

    The returned grid carries cells only (values zeroed); it is meant as
    the target of :func:`~mrgrid.engine.grid_to_match`.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot read grid file {path}: {e.strerror}") from None
    cells = []
    with fh:
        reader = csv.DictReader(fh)
        for col in ("cell_id", "res_m", "x_min", "y_min", "x_max", "y_max"):
            if col not in (reader.fieldnames or []):
                raise SpecMismatch(f"grid file lacks column {col!r}")
        for line, row in enumerate(reader, start=2):
            m = _LABEL.match(row["cell_id"])
            if not m:
                raise SpecMismatch(f"line {line}: bad cell id {row['cell_id']!r}")
            res = float(row["res_m"])
            if float(m.group(1)) != res:
                raise SpecMismatch(f"line {line}: cell id and res_m disagree")
            try:
                level = spec.level_of(res)
            except ValueError:
                raise SpecMismatch(f"line {line}: resolution {row['res_m']} is not in the grid ladder") from None
            cell = CellId(level, int(m.group(2)), int(m.group(3)))
            got = tuple(float(row[k]) for k in ("x_min", "y_min", "x_max", "y_max"))
            if got != cell_bounds(cell, spec):
                raise SpecMismatch(f"line {line}: bounds of {row['cell_id']} do not match the grid origin")
            cells.append(cell)
    seen = set(cells)
    if len(seen) != len(cells):
        raise SpecMismatch("grid file lists a cell twice")
    for c in cells:
        for lv in range(c.level + 1, spec.levels):
            if parent_of(c, lv, spec) in seen:
                raise SpecMismatch(f"cells {c.label(spec)} and its parent overlap")
    empty = RuleVerdict(Outcome.PASS, Rule.NONE, ())
    mr = tuple(MRCell(c, 0.0, 0, {}, empty) for c in sorted(cells))
    return MRGrid(mr, spec, RuleConfig(), (), {"source": str(path)})
