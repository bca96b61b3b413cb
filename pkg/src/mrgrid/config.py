"""Run configuration: a JSON file validated against a schema.

Relative paths inside the file are resolved against the file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from .errors import ConfigError, GridError, OutputError
from .grid import GridSpec
from .ingest import Adjust, IngestConfig
from .rules import Confrules, RuleConfig
from .synth import PopulationParams

_NUMBER = {"type": "number"}
_STR = {"type": "string", "minLength": 1}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "input": {
            "type": "object",
            "additionalProperties": False,
            "required": ["path", "columns"],
            "properties": {
                "path": _STR,
                "columns": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: _STR for k in ("id", "x", "y", "geo_lct", "weight", "stratum", "region")},
                    "oneOf": [{"required": ["x", "y"], "not": {"required": ["geo_lct"]}},
                              {"required": ["geo_lct"], "not": {"anyOf": [{"required": ["x"]}, {"required": ["y"]}]}}],
                },
                "loc_adjust": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "mode": {"enum": [a.value for a in Adjust] + [a.value.lower() for a in Adjust]},
                        "seed": {"type": "integer"},
                    },
                },
                "reported_res": {"type": "number", "exclusiveMinimum": 0},
                "max_bad_fraction": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["resolutions"],
            "properties": {
                "origin": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
                "crs": {"type": "integer"},
                "resolutions": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
            },
        },
        "rules": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mincount": {"type": "number", "minimum": 0},
                "dominance_weight_floor": {"type": "number", "minimum": 0},
                "dominance_share": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "cv_fail": {"type": "number", "exclusiveMinimum": 0},
                "cv_warn": {"type": "number", "exclusiveMinimum": 0},
                "reliability": {"type": "boolean"},
                "confrules": {"enum": [c.value for c in Confrules]},
                "suppresslim": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "rounding_base": {"type": "integer", "minimum": 1},
            },
        },
        "variables": {"type": "array", "items": _STR, "uniqueItems": True},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dir"],
            "properties": {
                "dir": _STR,
                "formats": {"type": "array", "items": {"enum": ["csv", "geojson"]}, "uniqueItems": True},
            },
        },
        "strata_file": _STR,
        "seed": {"type": "integer"},
        "ratio": {
            "type": "object",
            "additionalProperties": False,
            "required": ["numerator", "denominator"],
            "properties": {
                "numerator": _STR,
                "denominator": _STR,
                "decimals": {"type": "integer", "minimum": 0},
                "mode": {"enum": ["joint", "match"]},
                "grid_file": _STR,
            },
        },
        "realloc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "strategy": {"enum": ["blocks", "neighbor"]},
                "resolution": {"type": "number", "exclusiveMinimum": 0},
                "stages": {"type": "integer", "minimum": 1},
                "max_radius": {"type": "integer", "minimum": 1},
            },
        },
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "output": _STR,
                "params": {"type": "object"},
                "hotdeck": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["group_columns", "value_columns"],
                    "properties": {
                        "group_columns": {"type": "array", "items": _STR, "minItems": 1},
                        "value_columns": {"type": "array", "items": _STR, "minItems": 1},
                        "match_columns": {"type": "array", "items": _STR},
                    },
                },
            },
        },
    },
}


@dataclass(frozen=True)
class RatioConfig:
    numerator: str
    denominator: str
    decimals: int = 3
    mode: str = "joint"
    grid_file: Path | None = None


@dataclass(frozen=True)
class ReallocConfig:
    strategy: str = "blocks"
    resolution: float | None = None
    stages: int = 2
    max_radius: int = 3


@dataclass(frozen=True)
class SynthConfig:
    output: Path
    params: PopulationParams
    group_columns: tuple[str, ...] = ()
    value_columns: tuple[str, ...] = ()
    match_columns: tuple[str, ...] = ()


@dataclass(frozen=True)
class RunConfig:
    source: Path | None
    raw: dict
    seed: int = 0
    input_path: Path | None = None
    ingest: IngestConfig | None = None
    spec: GridSpec | None = None
    rules: RuleConfig = field(default_factory=RuleConfig)
    variables: tuple[str, ...] = ()
    output_dir: Path | None = None
    formats: tuple[str, ...] = ("csv", "geojson")
    strata_file: Path | None = None
    ratio: RatioConfig | None = None
    realloc: ReallocConfig | None = None
    synth: SynthConfig | None = None

    def require(self, *names: str) -> None:
        for n in names:
            if getattr(self, n) is None:
                raise ConfigError(f"the configuration has no {n.replace('_', ' ')} section")


def _path(base: Path, p: str | None) -> Path | None:
    if p is None:
        return None
    q = Path(p)
    return q if q.is_absolute() else base / q


def parse_config(raw: dict, base_dir: str | Path = ".", seed: int | None = None,
                 source: Path | None = None) -> RunConfig:
    """Validate a decoded config document and build the typed configuration.

    An explicit ``seed`` replaces every seed in the document.
    """
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {e.message}") from None
    base = Path(base_dir)
    overridden = seed is not None
    seed = int(raw.get("seed", 0) if seed is None else seed)
    variables = tuple(raw.get("variables", ()))

    spec = None
    if "grid" in raw:
        g = raw["grid"]
        try:
            spec = GridSpec(*map(float, g.get("origin", (0.0, 0.0))), int(g.get("crs", 3035)),
                            tuple(g["resolutions"]))
        except GridError as e:
            raise ConfigError(f"grid: {e}") from None

    r = raw.get("rules", {})
    try:
        rules = RuleConfig(
            mincount=r.get("mincount", 10),
            dominance_weight_floor=r.get("dominance_weight_floor", 2),
            dominance_share=r.get("dominance_share", 0.85),
            cv_fail=r.get("cv_fail", 0.35),
            cv_warn=r.get("cv_warn", 0.25),
            reliability_enabled=r.get("reliability", False),
            confrules=Confrules(r.get("confrules", "individual")),
            rounding_base=r.get("rounding_base", 10),
            suppresslim=r.get("suppresslim", 0.0),
        )
    except ValueError as e:
        raise ConfigError(f"rules: {e}") from None

    ingest = input_path = None
    if "input" in raw:
        i = raw["input"]
        cols = i["columns"]
        adj = i.get("loc_adjust", {})
        input_path = _path(base, i["path"])
        ingest = IngestConfig(
            variables=variables, id_col=cols.get("id"), x_col=cols.get("x"), y_col=cols.get("y"),
            geo_lct_col=cols.get("geo_lct"), weight_col=cols.get("weight"), stratum_col=cols.get("stratum"),
            region_col=cols.get("region"), adjust=Adjust(adj.get("mode", "LL").upper()),
            seed=seed if overridden else int(adj.get("seed", seed)), reported_res=i.get("reported_res"),
            max_bad_fraction=i.get("max_bad_fraction", 0.01),
        )

    out = raw.get("output", {})
    ratio = realloc = synth = None
    if "ratio" in raw:
        q = raw["ratio"]
        ratio = RatioConfig(q["numerator"], q["denominator"], q.get("decimals", 3), q.get("mode", "joint"),
                            _path(base, q.get("grid_file")))
        if ratio.mode == "match" and ratio.grid_file is None:
            raise ConfigError("ratio: match mode needs grid_file")
    if "realloc" in raw:
        q = raw["realloc"]
        realloc = ReallocConfig(q.get("strategy", "blocks"), q.get("resolution"), q.get("stages", 2),
                                q.get("max_radius", 3))
        if realloc.strategy == "neighbor" and (ingest is None or ingest.region_col is None):
            raise ConfigError("realloc: the neighbor strategy needs input.columns.region")
    if "synth" in raw:
        q = raw["synth"]
        params = dict(q.get("params", {}))
        if overridden or "seed" not in params:
            params["seed"] = seed
        if "bbox" in params:
            params["bbox"] = tuple(params["bbox"])
        try:
            pp = PopulationParams(**params)
        except TypeError as e:
            raise ConfigError(f"synth.params: {e}") from None
        hd = q.get("hotdeck", {})
        synth = SynthConfig(_path(base, q.get("output", "population.csv")), pp,
                            tuple(hd.get("group_columns", ())), tuple(hd.get("value_columns", ())),
                            tuple(hd.get("match_columns", ())))

    return RunConfig(
        source=source, raw=raw, seed=seed, input_path=input_path, ingest=ingest, spec=spec, rules=rules,
        variables=variables, output_dir=_path(base, out.get("dir")),
        formats=tuple(out.get("formats", ("csv", "geojson"))), strata_file=_path(base, raw.get("strata_file")),
        ratio=ratio, realloc=realloc, synth=synth,
    )


def load_config(path: str | Path, seed: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot read config {path}: {e.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return parse_config(raw, path.parent, seed, path)
