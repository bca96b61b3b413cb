"""Weighted domain totals and their sampling variance.

The estimator is the stratified simple-random-sampling-without-replacement
expansion estimator for a domain (a grid cell).  For stratum ``h`` with
``n_h`` sampled records and population size ``N_h``, let ``y_j`` be the
record value inside the cell and 0 for the stratum's records outside it::

    Var = sum_h  N_h^2 * (1 - n_h / N_h) * s2_h / n_h

with ``s2_h`` the sample variance of ``y`` over all ``n_h`` records.  Only
the in-cell sums ``sum y`` and ``sum y^2`` per stratum are needed, which is
what makes the grouped version cheap.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import UnknownStratum, UnknownVariable
from .ingest import as_table


@dataclass(frozen=True)
class StratumInfo:
    stratum_id: str
    n_h: int
    N_h: float

    @property
    def fpc(self) -> float:
        return max(1.0 - self.n_h / self.N_h, 0.0) if self.N_h > 0 else 0.0


@dataclass(frozen=True)
class CellEstimate:
    total: float
    variance: float
    record_count: int
    degenerate: bool = False

    @property
    def cv(self) -> float | None:
        return cv(self)


def cv(estimate: CellEstimate) -> float | None:
    """Relative standard error, or ``None`` for a zero total."""
    if estimate.total <= 0:
        return None
    return math.sqrt(max(estimate.variance, 0.0)) / estimate.total


def stratum_table(records, overrides: Mapping[str, float] | None = None) -> dict[str, StratumInfo]:
    """``n_h`` and ``N_h`` for every stratum of the whole dataset.

    ``N_h`` defaults to the sum of weights in the stratum; ``overrides``
    (e.g. from a strata CSV) replaces it per stratum.
    """

    t = as_table(records)
    n = np.bincount(t.stratum, minlength=len(t.stratum_labels))
    N = np.bincount(t.stratum, weights=t.weight, minlength=len(t.stratum_labels))
    overrides = overrides or {}
    out = {}
    for i, label in enumerate(t.stratum_labels):
        if n[i] == 0:
            continue
        out[label] = StratumInfo(label, int(n[i]), float(overrides.get(label, N[i])))
    return out


def read_strata_csv(path: str | Path) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["stratum_id"]: float(row["N_h"]) for row in csv.DictReader(fh)}


def _value(rec, variable: str | None) -> float:
    if variable is None:
        return 1.0
    return float(rec.values.get(variable, 0.0))


def _check_variable(records: Sequence, variable: str | None) -> None:
    if variable is not None and records and not any(variable in r.values for r in records):
        raise UnknownVariable(variable)


def domain_total(records: Sequence, variable: str | None) -> float:
    """``sum w_j x_j`` over the records of a cell; ``variable=None`` counts."""
    _check_variable(records, variable)
    return math.fsum(r.weight * _value(r, variable) for r in records)


def _stratum_values(records: Iterable, variable: str | None) -> dict[str, list[float]]:
    vals: dict[str, list[float]] = {}
    for r in records:
        vals.setdefault(r.stratum_id, []).append(_value(r, variable))
    return vals


def _stratum_term(info: StratumInfo, ys: Sequence[float]) -> float:
    """Contribution of one stratum: cell values, zero-extended to all ``n_h`` sampled units."""
    n = info.n_h
    if n < 2:
        return 0.0
    # centred sums; the one-pass form loses everything to cancellation on near-constant data
    m = math.fsum(ys) / n
    ss = math.fsum((y - m) ** 2 for y in ys) + (n - len(ys)) * m * m
    return info.N_h ** 2 * info.fpc * (ss / (n - 1)) / n


def domain_variance(records: Sequence, variable: str | None, strata: Mapping[str, StratumInfo]) -> float:
    _check_variable(records, variable)
    total = 0.0
    for sid, ys in sorted(_stratum_values(records, variable).items()):
        if sid not in strata:
            raise UnknownStratum(sid)
        total += _stratum_term(strata[sid], ys)
    return total


def estimate(records: Sequence, variable: str | None, strata: Mapping[str, StratumInfo]) -> CellEstimate:
    """Total, variance and lone-unit flag for one cell.

    A stratum with a single sampled record cannot estimate its own spread;
    if such a record sits in the cell and the stratum is not fully
    enumerated, the estimate is flagged ``degenerate``.
    """
    records = list(records)
    degenerate = False
    for sid in {r.stratum_id for r in records}:
        if sid not in strata:
            raise UnknownStratum(sid)
        info = strata[sid]
        if info.n_h < 2 and info.fpc > 0:
            degenerate = True
    return CellEstimate(domain_total(records, variable), domain_variance(records, variable, strata),
                        len(records), degenerate)


def grouped_estimates(groups: np.ndarray, n_groups: int, values: np.ndarray, weight: np.ndarray,
                      stratum: np.ndarray, n_h: np.ndarray, N_h: np.ndarray):
    """Vectorised :func:`estimate` for many cells at once.

    ``groups`` maps each record to a cell index in ``[0, n_groups)``;
    ``stratum`` holds codes indexing ``n_h`` / ``N_h``.  Returns
    ``(total, variance, degenerate)`` arrays of length ``n_groups``.
    """
    groups = np.asarray(groups, dtype=np.int64)
    total = np.bincount(groups, weights=weight * values, minlength=n_groups)
    n_strata = len(n_h)
    pair = groups * n_strata + stratum
    upair, inv = np.unique(pair, return_inverse=True)
    g = upair // n_strata
    h = upair % n_strata
    n = n_h[h].astype(float)
    N = N_h[h]
    k = np.bincount(inv, minlength=len(upair))
    # centred sums over the zero-extended stratum vector, as in the scalar path
    m = np.bincount(inv, weights=values) / n
    ss = np.bincount(inv, weights=(values - m[inv]) ** 2, minlength=len(upair)) + (n - k) * m * m
    fpc = np.where(N > 0, np.maximum(1.0 - n / np.where(N > 0, N, 1.0), 0.0), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(n >= 2, N * N * fpc * (ss / (n - 1)) / n, 0.0)
    variance = np.bincount(g, weights=term, minlength=n_groups)
    lone = (n < 2) & (fpc > 0)
    degenerate = np.bincount(g, weights=lone.astype(float), minlength=n_groups) > 0
    return total, variance, degenerate
