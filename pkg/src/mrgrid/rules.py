"""Confidentiality and reliability rules evaluated on per-cell statistics.

Rules run in a fixed order: threshold, dominance (per variable), reliability
(per variable, optional), then an optional user predicate.  The first
failing rule is what a verdict reports; reliability warnings accumulate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import UserRuleError
from .variance import CellEstimate, StratumInfo, estimate


class Outcome(IntEnum):
    PASS = 0
    PASS_WITH_WARNING = 1
    FAIL = 2


class Rule(IntEnum):
    NONE = 0
    THRESHOLD = 1
    DOMINANCE = 2
    RELIABILITY = 3
    USER = 4


class Confrules(str, Enum):
    INDIVIDUAL = "individual"
    FIRST = "first"


@dataclass(frozen=True)
class RuleConfig:
    mincount: float = 10.0
    dominance_weight_floor: float = 2.0
    dominance_share: float = 0.85
    cv_fail: float = 0.35
    cv_warn: float = 0.25
    reliability_enabled: bool = False
    confrules: Confrules = Confrules.INDIVIDUAL
    rounding_base: int = 10
    suppresslim: float = 0.0

    def __post_init__(self):
        if not isinstance(self.confrules, Confrules):
            object.__setattr__(self, "confrules", Confrules(str(self.confrules).lower()))
        if not 0 < self.dominance_share <= 1:
            raise ValueError("dominance_share must be in (0, 1]")
        if self.cv_warn > self.cv_fail:
            raise ValueError("cv_warn must not exceed cv_fail")
        if not 0 <= self.suppresslim < 1:
            raise ValueError("suppresslim must be in [0, 1)")
        if int(self.rounding_base) != self.rounding_base or self.rounding_base < 1:
            raise ValueError("rounding_base must be a positive integer")


def round_half_up(w: float) -> int:
    return math.floor(w + 0.5)


@dataclass(frozen=True)
class Contributor:
    weight: float
    value: float

    @property
    def rounded_weight(self) -> int:
        return round_half_up(self.weight)

    @property
    def contribution(self) -> float:
        return self.weight * self.value


@dataclass(frozen=True)
class VariableStats:
    total: float
    top1: Contributor | None = None
    top2: Contributor | None = None
    estimate: CellEstimate | None = None


@dataclass(frozen=True)
class CellStats:
    """Everything the rules look at for one cell.

    ``variables`` keeps the configured variable order; the first entry is
    the one ``Confrules.FIRST`` looks at.  ``count_estimate`` is the
    estimate of the weighted holding count, used by the reliability rule
    when no variable is gridded.
    """

    weighted_count: float
    record_count: int
    variables: Mapping[str, VariableStats] = field(default_factory=dict)
    count_estimate: CellEstimate | None = None

    @classmethod
    def from_records(cls, records: Sequence, variables: Sequence[str] = (),
                     strata: Mapping[str, StratumInfo] | None = None) -> "CellStats":
        records = list(records)
        per_var = {}
        for v in variables:
            pairs = [(r.weight, r.values.get(v, 0.0)) for r in records]
            total = math.fsum(w * x for w, x in pairs)
            top = top_two(pairs)
            est = estimate(records, v, strata) if strata is not None else None
            per_var[v] = VariableStats(total, *top, estimate=est)
        count_est = estimate(records, None, strata) if strata is not None else None
        return cls(math.fsum(r.weight for r in records), len(records), per_var, count_est)

    def combine(self, other: "CellStats") -> "CellStats":
        """Stats of the union of two disjoint record sets (estimates dropped)."""
        per_var = {}
        for v, a in self.variables.items():
            b = other.variables[v]
            pool = [c for c in (a.top1, a.top2, b.top1, b.top2) if c is not None]
            per_var[v] = VariableStats(a.total + b.total, *top_two([(c.weight, c.value) for c in pool]))
        return CellStats(self.weighted_count + other.weighted_count, self.record_count + other.record_count,
                         per_var)

    def value(self) -> float:
        """First variable's total, or the weighted count without variables."""
        for vs in self.variables.values():
            return vs.total
        return self.weighted_count


def top_two(pairs) -> tuple[Contributor | None, Contributor | None]:
    """Largest two contributors by value, then weight; zero values never count."""
    ranked = sorted((p for p in pairs if p[1] > 0), key=lambda p: (-p[1], -p[0]))
    out = [Contributor(float(w), float(x)) for w, x in ranked[:2]]
    out += [None] * (2 - len(out))
    return out[0], out[1]


@dataclass(frozen=True)
class RuleVerdict:
    outcome: Outcome
    failed_rule: Rule = Rule.NONE
    details: tuple[tuple[str, str, str], ...] = ()

    def __post_init__(self):
        if (self.failed_rule is Rule.NONE) != (self.outcome is not Outcome.FAIL):
            raise ValueError("failed_rule must be set exactly when the outcome is FAIL")

    @property
    def passed(self) -> bool:
        return self.outcome is not Outcome.FAIL

    @property
    def warning(self) -> bool:
        return self.outcome is Outcome.PASS_WITH_WARNING


UserRule = Callable[[CellStats], object]


def threshold_rule(stats: CellStats, config: RuleConfig) -> Outcome:
    return Outcome.FAIL if stats.weighted_count < config.mincount else Outcome.PASS


def dominance_rule(stats: VariableStats, config: RuleConfig) -> Outcome:
    if stats.total <= 0:
        return Outcome.PASS
    t1, t2 = stats.top1, stats.top2
    rw = (t1.rounded_weight if t1 else 0) + (t2.rounded_weight if t2 else 0)
    if rw > config.dominance_weight_floor:
        return Outcome.PASS
    top = (t1.contribution if t1 else 0.0) + (t2.contribution if t2 else 0.0)
    return Outcome.PASS if top <= config.dominance_share * stats.total else Outcome.FAIL


def reliability_rule(est: CellEstimate, config: RuleConfig) -> Outcome:
    if est.degenerate:
        return Outcome.FAIL
    c = est.cv
    if c is None:
        return Outcome.PASS
    if c >= config.cv_fail:
        return Outcome.FAIL
    if c > config.cv_warn:
        return Outcome.PASS_WITH_WARNING
    return Outcome.PASS


def _checked_variables(stats: CellStats, config: RuleConfig) -> list[str]:
    names = list(stats.variables)
    return names if config.confrules is Confrules.INDIVIDUAL else names[:1]


def user_outcome(user_rule: UserRule, stats: CellStats, cell=None) -> Outcome:
    try:
        res = user_rule(stats)
    except Exception as e:  # noqa: BLE001 - surfaced with the cell identity
        raise UserRuleError(cell, e) from e
    if isinstance(res, Outcome):
        return Outcome.FAIL if res is Outcome.FAIL else Outcome.PASS
    return Outcome.PASS if res else Outcome.FAIL


def evaluate_cell(stats: CellStats, config: RuleConfig, user_rule: UserRule | None = None,
                  cell=None) -> RuleVerdict:
    details = []
    failed = Rule.NONE
    warn = False

    out = threshold_rule(stats, config)
    details.append(("", "THRESHOLD", out.name))
    if out is Outcome.FAIL:
        failed = Rule.THRESHOLD

    checked = _checked_variables(stats, config)
    for v in checked:
        out = dominance_rule(stats.variables[v], config)
        details.append((v, "DOMINANCE", out.name))
        if out is Outcome.FAIL and failed is Rule.NONE:
            failed = Rule.DOMINANCE

    if config.reliability_enabled:
        targets = [(v, stats.variables[v].estimate) for v in checked] or [("", stats.count_estimate)]
        for v, est in targets:
            if est is None:
                raise ValueError("reliability is enabled but the cell has no variance estimate")
            out = reliability_rule(est, config)
            details.append((v, "RELIABILITY", out.name))
            if out is Outcome.FAIL and failed is Rule.NONE:
                failed = Rule.RELIABILITY
            warn |= out is Outcome.PASS_WITH_WARNING

    if user_rule is not None and failed is Rule.NONE:
        out = user_outcome(user_rule, stats, cell)
        details.append(("", "USER", out.name))
        if out is Outcome.FAIL:
            failed = Rule.USER

    if failed is not Rule.NONE:
        outcome = Outcome.FAIL
    else:
        outcome = Outcome.PASS_WITH_WARNING if warn else Outcome.PASS
    return RuleVerdict(outcome, failed, tuple(details))


# -- batch evaluation ------------------------------------------------------------

@dataclass
class BatchStats:
    """Column-wise :class:`CellStats` for ``n`` cells.

    ``top[v]`` is ``(w1, x1, w2, x2)`` with zeros where a contributor is
    absent; ``est[v]`` is ``(total, variance, degenerate)``; the key ``""``
    in ``est`` is the holding-count estimate.
    """

    weighted_count: np.ndarray
    record_count: np.ndarray
    totals: dict[str, np.ndarray]
    top: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    est: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None

    def __len__(self) -> int:
        return len(self.weighted_count)

    def cell(self, i: int) -> CellStats:
        per_var = {}
        for v, total in self.totals.items():
            w1, x1, w2, x2 = (a[i] for a in self.top[v])
            t1 = Contributor(float(w1), float(x1)) if x1 > 0 else None
            t2 = Contributor(float(w2), float(x2)) if x2 > 0 else None
            per_var[v] = VariableStats(float(total[i]), t1, t2, self._est(v, i))
        return CellStats(float(self.weighted_count[i]), int(self.record_count[i]), per_var, self._est("", i))

    def _est(self, v: str, i: int) -> CellEstimate | None:
        if self.est is None or v not in self.est:
            return None
        t, var, deg = self.est[v]
        return CellEstimate(float(t[i]), float(var[i]), int(self.record_count[i]), bool(deg[i]))


@dataclass
class BatchVerdicts:
    outcome: np.ndarray
    failed: np.ndarray
    threshold: np.ndarray
    dominance: dict[str, np.ndarray]
    reliability: dict[str, np.ndarray]
    user: np.ndarray | None = None

    def verdict(self, i: int) -> RuleVerdict:
        details = [("", "THRESHOLD", Outcome(int(self.threshold[i])).name)]
        details += [(v, "DOMINANCE", Outcome(int(a[i])).name) for v, a in self.dominance.items()]
        details += [(v, "RELIABILITY", Outcome(int(a[i])).name) for v, a in self.reliability.items()]
        if self.user is not None and self.user[i] >= 0:
            details.append(("", "USER", Outcome(int(self.user[i])).name))
        return RuleVerdict(Outcome(int(self.outcome[i])), Rule(int(self.failed[i])), tuple(details))


def evaluate_batch(stats: BatchStats, config: RuleConfig, user_rule: UserRule | None = None,
                   cells: Sequence | None = None) -> BatchVerdicts:
    """Vectorised :func:`evaluate_cell`; gives identical verdicts."""
    n = len(stats)
    P, W, F = int(Outcome.PASS), int(Outcome.PASS_WITH_WARNING), int(Outcome.FAIL)
    failed = np.zeros(n, dtype=np.int8)
    warn = np.zeros(n, dtype=bool)

    thr = np.where(stats.weighted_count < config.mincount, F, P).astype(np.int8)
    failed[thr == F] = Rule.THRESHOLD

    names = list(stats.totals)
    checked = names if config.confrules is Confrules.INDIVIDUAL else names[:1]
    dom = {}
    for v in checked:
        X = stats.totals[v]
        w1, x1, w2, x2 = stats.top[v]
        rw = np.where(x1 > 0, np.floor(w1 + 0.5), 0) + np.where(x2 > 0, np.floor(w2 + 0.5), 0)
        ok = (X <= 0) | (rw > config.dominance_weight_floor) | (w1 * x1 + w2 * x2 <= config.dominance_share * X)
        dom[v] = np.where(ok, P, F).astype(np.int8)
        failed[(failed == 0) & ~ok] = Rule.DOMINANCE

    rel = {}
    if config.reliability_enabled:
        if stats.est is None:
            raise ValueError("reliability is enabled but no variance estimates were computed")
        for v in (checked or [""]):
            total, var, deg = stats.est[v]
            with np.errstate(divide="ignore", invalid="ignore"):
                c = np.where(total > 0, np.sqrt(np.maximum(var, 0.0)) / np.where(total > 0, total, 1.0), 0.0)
            defined = total > 0
            out = np.full(n, P, dtype=np.int8)
            out[defined & (c > config.cv_warn)] = W
            out[defined & (c >= config.cv_fail)] = F
            out[deg] = F
            rel[v] = out
            failed[(failed == 0) & (out == F)] = Rule.RELIABILITY
            warn |= out == W

    user = None
    if user_rule is not None:
        user = np.full(n, -1, dtype=np.int8)
        for i in np.flatnonzero(failed == 0):
            res = user_outcome(user_rule, stats.cell(int(i)), None if cells is None else cells[i])
            user[i] = int(res)
            if res is Outcome.FAIL:
                failed[i] = Rule.USER

    outcome = np.where(failed > 0, F, np.where(warn, W, P)).astype(np.int8)
    return BatchVerdicts(outcome, failed, thr, dom, rel, user)
