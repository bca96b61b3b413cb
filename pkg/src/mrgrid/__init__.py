"""Multi-resolution grids of confidential microdata."""

__version__ = "0.1.0"

from .grid import CellId, GridSpec, cell_of, cell_polygon, children_of, parent_of, validate_resolutions  # noqa: E402
from .ingest import IngestConfig, Record, RecordTable, load_records, load_table, parse_geo_lct  # noqa: E402
from .rules import CellStats, Outcome, Rule, RuleConfig, RuleVerdict, evaluate_cell  # noqa: E402
from .engine import MRCell, MRGrid, build_base_grid, grid_to_match, multi_res_grid  # noqa: E402
from .postprocess import post_process, ratio_grid, round_to_base  # noqa: E402

__all__ = [
    "CellId", "GridSpec", "cell_of", "cell_polygon", "children_of", "parent_of", "validate_resolutions",
    "IngestConfig", "Record", "RecordTable", "load_records", "load_table", "parse_geo_lct",
    "CellStats", "Outcome", "Rule", "RuleConfig", "RuleVerdict", "evaluate_cell",
    "MRCell", "MRGrid", "build_base_grid", "grid_to_match", "multi_res_grid",
    "post_process", "ratio_grid", "round_to_base",
]
