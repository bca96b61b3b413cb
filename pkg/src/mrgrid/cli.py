"""Command line driver: ``mrgrid {grid,ratio,realloc,synth,validate} --config FILE``.

Failures exit with a code per error category and a one-line JSON error on
stderr; no output file is written unless the whole run succeeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import RunConfig, load_config
from .engine import MRGrid, build_base_grid, grid_from_stats, grid_to_match, multi_res_grid
from .errors import ConfigError, MRGError, OutputError
from .ingest import RecordTable, load_table
from .io import file_digest, grid_outputs, grid_summary, json_bytes, ratio_outputs, read_cells_csv, write_all
from .postprocess import post_process, ratio_grid
from .realloc import cell_regions, grid_totals, realloc_hierarchical, realloc_neighbor
from .synth import hotdeck_synthesize, make_test_population
from .variance import read_strata_csv, stratum_table

log = logging.getLogger("mrgrid")

EXIT_CODES = {"config": 2, "ingest": 3, "engine": 4, "io": 5}


def _ingest(cfg: RunConfig, variables: Sequence[str]) -> tuple[RecordTable, dict]:
    cfg.require("ingest", "spec")
    if not cfg.input_path.is_file():
        raise OutputError(f"input file not found: {cfg.input_path}")
    ing = replace(cfg.ingest, variables=tuple(variables))
    table, report = load_table(cfg.input_path, ing, cfg.spec)
    log.info("read %d rows, kept %d", report.rows_read, len(table))
    info = {"input": str(cfg.input_path.name), "input_digest": file_digest(cfg.input_path),
            "records": len(table), "ingest": report.as_dict()}
    return table, info


def _strata(cfg: RunConfig, table: RecordTable):
    if not cfg.rules.reliability_enabled:
        return None
    overrides = None
    if cfg.strata_file is not None:
        if not cfg.strata_file.is_file():
            raise OutputError(f"strata file not found: {cfg.strata_file}")
        overrides = read_strata_csv(cfg.strata_file)
    return stratum_table(table, overrides)


def _input_totals(table: RecordTable, variables: Sequence[str]) -> dict[str, float]:
    out = {"count_holdings": math.fsum(table.weight)}
    for v in variables:
        out[v] = math.fsum(table.weight * table.value(v))
    return out


def _cell_totals(grid: MRGrid) -> dict[str, float]:
    out = {"count_holdings": math.fsum(c.weighted_count for c in grid.cells)}
    for v in grid.variables:
        out[v] = math.fsum(c.totals[v] for c in grid.cells)
    return out


def _provenance(cfg: RunConfig, info: dict) -> dict:
    return {"config": str(cfg.source.name) if cfg.source else None, "input_digest": info["input_digest"],
            "seed": cfg.seed}


def _finish(cfg: RunConfig, outputs: dict[str, bytes], report: dict, started: float) -> int:
    cfg.require("output_dir")
    # timings go to the log, not the report, so reruns give identical files
    report["version"] = __version__
    outputs = {**outputs, "report.json": json_bytes(report)}
    for p in write_all(outputs, cfg.output_dir):
        log.info("wrote %s", p)
    log.info("done in %.2f s", time.perf_counter() - started)
    return 0


def run_grid(cfg: RunConfig) -> int:
    started = time.perf_counter()
    table, info = _ingest(cfg, cfg.variables)
    grid = multi_res_grid(table, cfg.spec, cfg.rules, cfg.variables, strata=_strata(cfg, table),
                          provenance=_provenance(cfg, info))
    final = post_process(grid)
    report = {**info, "command": "grid", "input_totals": _input_totals(table, cfg.variables),
              "grid_totals": _cell_totals(final), **grid_summary(final)}
    return _finish(cfg, grid_outputs(final, cfg.formats), report, started)


def run_ratio(cfg: RunConfig) -> int:
    started = time.perf_counter()
    cfg.require("ratio")
    r = cfg.ratio
    pair = [r.numerator, r.denominator]
    variables = list(dict.fromkeys([*pair, *cfg.variables]))
    table, info = _ingest(cfg, variables)
    strata = _strata(cfg, table)
    if r.mode == "match":
        existing = read_cells_csv(r.grid_file, cfg.spec)
        grid = grid_to_match(existing, table, pair, cfg.rules, strata=strata, provenance=_provenance(cfg, info))
    else:
        grid = multi_res_grid(table, cfg.spec, cfg.rules, pair, strata=strata, provenance=_provenance(cfg, info))
    final = post_process(grid)
    cells = ratio_grid(final, r.numerator, r.denominator, r.decimals)
    disclosed = [c for c in cells if not c.suppressed]
    report = {**info, "command": "ratio", "mode": r.mode, **grid_summary(final),
              "ratio_cells": len(cells), "ratio_disclosed": len(disclosed),
              "ratio_above_one": sum(c.above_one for c in disclosed)}
    outputs = {**grid_outputs(final, cfg.formats), **ratio_outputs(cells, cfg.spec, r.numerator, r.denominator,
                                                                    cfg.formats)}
    return _finish(cfg, outputs, report, started)


def run_realloc(cfg: RunConfig) -> int:
    started = time.perf_counter()
    cfg.require("realloc")
    rc = cfg.realloc
    table, info = _ingest(cfg, cfg.variables)
    level = cfg.spec.level_of(rc.resolution) if rc.resolution is not None else 0
    # merged statistics carry no variance estimate
    rules = replace(cfg.rules, reliability_enabled=False)
    base = build_base_grid(table, cfg.spec, cfg.variables, level=level)
    before = grid_totals(base, cfg.variables)
    unresolved = []
    if rc.strategy == "neighbor":
        if table.region is None:
            raise ConfigError("the neighbor strategy needs a region column")
        regions = cell_regions(table, cfg.spec, level)
        moved, unresolved = realloc_neighbor(base, regions, rules, cfg.seed, rc.max_radius)
    else:
        moved = realloc_hierarchical(base, cfg.spec, rules, rc.stages)
    after = grid_totals(moved, cfg.variables)
    conserved = all(math.isclose(before[k], after[k], rel_tol=1e-12, abs_tol=1e-9) for k in before)
    if not conserved:
        raise MRGError(f"reallocation changed the grid totals: {before} -> {after}")
    grid = grid_from_stats(moved, cfg.spec, rules, cfg.variables, provenance=_provenance(cfg, info))
    final = post_process(grid)
    report = {**info, "command": "realloc", "strategy": rc.strategy, "resolution": cfg.spec.res(level),
              "totals_before": before, "totals_after": after, "conserved": conserved,
              "cells_before": len(base), "unresolved": [c.label(cfg.spec) for c in unresolved],
              **grid_summary(final)}
    return _finish(cfg, grid_outputs(final, cfg.formats), report, started)


def run_synth(cfg: RunConfig) -> int:
    cfg.require("synth")
    s = cfg.synth
    df = make_test_population(s.params)
    if s.group_columns:
        df = hotdeck_synthesize(df, s.group_columns, s.value_columns, seed=s.params.seed,
                                match_cols=s.match_columns or None)
    data = df.to_csv(index=False, lineterminator="\n").encode("utf-8")
    write_all({s.output: data})
    log.info("wrote %d records to %s", len(df), s.output)
    return 0


def run_validate(cfg: RunConfig) -> int:
    summary: dict = {"config": "ok"}
    if cfg.ingest is not None and cfg.spec is not None:
        table, info = _ingest(cfg, cfg.variables)
        summary.update(records=info["records"], ingest=info["ingest"])
        if cfg.rules.reliability_enabled:
            summary["strata"] = len(_strata(cfg, table))
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return 0


COMMANDS = {"grid": run_grid, "ratio": run_ratio, "realloc": run_realloc, "synth": run_synth,
            "validate": run_validate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mrgrid", description="Multi-resolution gridding of confidential microdata.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, type=Path, metavar="PATH")
    p.add_argument("--seed", type=int, default=None, help="overrides every seed in the config")
    p.add_argument("--quiet", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](cfg)
    except MRGError as e:
        category, kind, message = e.category, type(e).__name__, str(e)
    except OSError as e:
        category, kind, message = "io", type(e).__name__, str(e)
    sys.stderr.write(json.dumps({"error": category, "type": kind, "message": message}) + "\n")
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
