"""Situation testing (ST) and counterfactual situation testing (CST).

For every complainant (a row of the protected group) both methods build a
control group of the k nearest protected rows around the complainant and a
test group of the k nearest non-protected rows. ST centres the test group on
the complainant's own attribute vector; CST centres it on the complainant's
counterfactual under ``protected <- 0``. The case is flagged when the share of
negative outcomes in the control group exceeds the one in the test group by
more than ``tau``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .data import AttributeSchema, DatasetTable
from .errors import DataError, ModelError
from .scm import ScmModel, counterfactual_dataset
from .similarity import CandidatePool, DistanceSpec, Neighborhood, knn

log = logging.getLogger(__name__)

METHODS = ("ST", "CST")


@dataclass(frozen=True)
class DecisionRule:
    weights: Mapping[str, float]
    cutoff: float
    strict: bool = True

    def describe(self) -> str:
        terms = " + ".join(f"{w:g}*{a}" for a, w in self.weights.items())
        return f"Y = 1 if {terms} {'>' if self.strict else '>='} {self.cutoff:g}"

    def scores(self, table: DatasetTable) -> np.ndarray:
        total = np.zeros(table.n)
        for attr, w in self.weights.items():
            try:
                s = table.attribute(attr)
            except Exception:
                raise DataError(f"decision rule uses missing attribute {attr!r}") from None
            if not s.numeric or s.encoded:
                raise DataError(f"decision rule attribute {attr!r} is not numeric")
            total = total + w * table.column(attr)
        return total


def apply_decision_rule(rule: DecisionRule, table: DatasetTable, outcome: str | None = None) -> DatasetTable:
    """Label every row with the threshold rule, replacing any existing outcome column."""
    name = outcome or table.outcome or "Y"
    scores = rule.scores(table)
    y = (scores > rule.cutoff) if rule.strict else (scores >= rule.cutoff)
    attr = AttributeSchema(name, "categorical", "outcome", note=f"derived: {rule.describe()}")
    return table.with_column(attr, y.astype(np.int64))


@dataclass(frozen=True)
class AuditConfig:
    method: str
    protected_column: str
    k: int
    tau: float = 0.0
    include_centers: bool = False
    negative_outcome: int = 0
    ci_level: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("k must be a positive integer")
        if not -1.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [-1, 1]")
        if self.ci_level is not None and not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")
        if self.method == "ST" and self.include_centers:
            warnings.warn("ST always excludes the search centres; include_centers ignored", stacklevel=2)
            object.__setattr__(self, "include_centers", False)


def compute_delta_p(control: Sequence[int], test: Sequence[int], negative_outcome: int = 0) -> tuple[float, float, float]:
    """Shares of ``negative_outcome`` in each group and their difference (control - test)."""
    control, test = np.asarray(control), np.asarray(test)
    if control.size == 0 or test.size == 0:
        raise ValueError("both groups must be non-empty")
    pc = float(np.count_nonzero(control == negative_outcome)) / control.size
    pt = float(np.count_nonzero(test == negative_outcome)) / test.size
    return pc, pt, pc - pt


def wald_interval(pc: float, nc: int, pt: float, nt: int, level: float = 0.95) -> tuple[float, float]:
    """Two-proportion Wald interval for ``pc - pt``."""
    if nc < 1 or nt < 1:
        raise ValueError("group sizes must be >= 1")
    z = float(norm.ppf(0.5 + level / 2))
    half = z * math.sqrt(pc * (1 - pc) / nc + pt * (1 - pt) / nt)
    dp = pc - pt
    return dp - half, dp + half


@dataclass(frozen=True)
class CaseResult:
    complainant_id: int
    comparator: Any  # ST: nearest non-protected row id; CST: counterfactual attribute values
    control: Neighborhood
    test: Neighborhood
    p_c: float
    p_t: float
    delta_p: float
    flagged: bool
    ci_low: float | None = None
    ci_high: float | None = None

    def to_dict(self) -> dict:
        return {
            "complainant_id": self.complainant_id,
            "comparator": self.comparator,
            "control": self.control.to_dict(),
            "test": self.test.to_dict(),
            "p_c": self.p_c,
            "p_t": self.p_t,
            "delta_p": self.delta_p,
            "flagged": self.flagged,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }


@dataclass(frozen=True)
class AuditReport:
    config: AuditConfig
    cases: tuple[CaseResult, ...]

    @property
    def method(self) -> str:
        return self.config.method

    @property
    def total(self) -> int:
        return len(self.cases)

    @property
    def flagged_ids(self) -> list[int]:
        return [c.complainant_id for c in self.cases if c.flagged]

    @property
    def flagged_count(self) -> int:
        return sum(c.flagged for c in self.cases)

    @property
    def flagged_fraction(self) -> float:
        return self.flagged_count / self.total if self.total else 0.0

    def summary_row(self) -> dict:
        return {
            "method": self.method,
            "protected": self.config.protected_column,
            "k": self.config.k,
            "tau": self.config.tau,
            "total": self.total,
            "flagged": self.flagged_count,
            "flagged_pct": round(100 * self.flagged_fraction, 4),
        }

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "method": cfg.method,
            "protected_column": cfg.protected_column,
            "k": cfg.k,
            "tau": cfg.tau,
            "include_centers": cfg.include_centers,
            "negative_outcome": cfg.negative_outcome,
            "ci_level": cfg.ci_level,
            "total_complainants": self.total,
            "flagged_count": self.flagged_count,
            "flagged_fraction": self.flagged_fraction,
            "cases": [c.to_dict() for c in self.cases],
        }


def _check_table(table: DatasetTable, config: AuditConfig) -> None:
    if table.outcome is None:
        raise DataError("table has no outcome column")
    attr = table.attribute(config.protected_column)
    if attr.role != "protected" or not attr.encoded:
        raise DataError(f"{config.protected_column!r} is not an encoded protected column")


def _outcome_lookup(table: DatasetTable):
    order = np.argsort(table.row_ids, kind="stable")
    sorted_ids = table.row_ids[order]
    y = table.column(table.outcome)[order]

    def lookup(ids: np.ndarray) -> np.ndarray:
        return y[np.searchsorted(sorted_ids, ids)]

    return lookup


def evaluate(
    table: DatasetTable,
    config: AuditConfig,
    ks: Sequence[int] | None = None,
    spec: DistanceSpec | None = None,
    model: ScmModel | None = None,
    workers: int = 1,
) -> dict[int, AuditReport]:
    """Run one method for several neighbourhood sizes at once.

    Neighbourhoods are searched once at the largest k; smaller k reuse their
    prefixes (the tie rule makes the k-neighbourhood a prefix of the k+1 one).
    """
    _check_table(table, config)
    ks = sorted(set(ks or [config.k]))
    spec = spec or DistanceSpec.from_table(table)
    col = config.protected_column
    is_prot = table.column(col) == 1
    comp_idx = np.flatnonzero(is_prot)
    comp_ids = table.row_ids[comp_idx]
    ctrl_pool = CandidatePool.from_table(spec, table, is_prot)
    test_pool = CandidatePool.from_table(spec, table, ~is_prot)
    if len(test_pool) == 0:
        raise DataError(f"no non-protected rows for {col!r}")
    factual = spec.matrix(table, comp_idx)

    if config.method == "CST":
        if model is None:
            raise ModelError("CST needs a fitted SCM")
        if col not in model.graph.roots:
            raise ModelError(f"protected column {col!r} is not a root of the SCM")
        cf = counterfactual_dataset(model, table, (col, 0.0), rows=comp_idx)
        centers = factual.copy()
        for j, name in enumerate(spec.names):
            if name in cf.values:
                centers[:, j] = cf.column(name)
    else:
        centers = factual

    lookup = _outcome_lookup(table)
    kmax = ks[-1]
    exclude_self = not config.include_centers

    def one(i: int) -> dict[int, CaseResult]:
        rid = int(comp_ids[i])
        ctrl = knn(spec, factual[i], ctrl_pool, kmax, exclude=[rid] if exclude_self else (),
                   center_label=rid, encoded=True)
        test = knn(spec, centers[i], test_pool, kmax, center_label=rid, encoded=True)
        if config.method == "CST":
            test = Neighborhood(_decode(spec, centers[i]), test.member_ids, test.distances, test.k)
        y_ctrl, y_test = lookup(ctrl.member_ids), lookup(test.member_ids)
        out = {}
        for k in ks:
            c, t = ctrl.prefix(k), test.prefix(k)
            pc, pt, dp = compute_delta_p(y_ctrl[:k], y_test[:k], config.negative_outcome)
            lo = hi = None
            if config.ci_level is not None:
                lo, hi = wald_interval(pc, c.size, pt, t.size, config.ci_level)
            comparator = int(t.member_ids[0]) if config.method == "ST" else dict(zip(spec.names, t.center))
            out[k] = CaseResult(rid, comparator, c, t, pc, pt, dp, dp > config.tau, lo, hi)
        return out

    def chunk(idx: np.ndarray) -> list[dict[int, CaseResult]]:
        return [one(int(i)) for i in idx]

    if workers > 1 and len(comp_idx) > 1:
        parts = np.array_split(np.arange(len(comp_idx)), workers * 4)
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = [r for part in ex.map(chunk, parts) for r in part]
    else:
        results = chunk(np.arange(len(comp_idx)))

    shortfalls = sum(r[kmax].control.shortfall > 0 or r[kmax].test.shortfall > 0 for r in results)
    if shortfalls:
        log.warning("%s/%s k=%d: %d case(s) used a pool smaller than k", config.method, col, kmax, shortfalls)

    reports = {}
    for k in ks:
        cfg = AuditConfig(config.method, col, k, config.tau, config.include_centers,
                          config.negative_outcome, config.ci_level)
        cases = sorted((r[k] for r in results), key=lambda c: c.complainant_id)
        reports[k] = AuditReport(cfg, tuple(cases))
    return reports


def _decode(spec: DistanceSpec, vec: np.ndarray) -> tuple:
    labels = dict(spec.categories)
    return tuple(
        labels[a.name][int(v)] if a.categorical else float(v) for a, v in zip(spec.attributes, vec)
    )


def run_st(table: DatasetTable, config: AuditConfig, spec: DistanceSpec | None = None, workers: int = 1) -> AuditReport:
    if config.method != "ST":
        raise ValueError("run_st needs method='ST'")
    return evaluate(table, config, [config.k], spec, None, workers)[config.k]


def run_cst(
    table: DatasetTable,
    config: AuditConfig,
    spec: DistanceSpec | None,
    model: ScmModel,
    workers: int = 1,
) -> AuditReport:
    if config.method != "CST":
        raise ValueError("run_cst needs method='CST'")
    return evaluate(table, config, [config.k], spec, model, workers)[config.k]


SUMMARY_FIELDS = ["method", "protected", "k", "tau", "total", "flagged", "flagged_pct"]


def write_summary(reports: Sequence[AuditReport], path: str | Path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.DictWriter(fh, SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.summary_row())


def write_report(report: AuditReport, path: str | Path, provenance: Mapping[str, Any] | None = None) -> None:
    doc = report.to_dict()
    if provenance:
        doc["provenance"] = dict(provenance)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_neighborhoods(
    table: DatasetTable,
    reports: Sequence[AuditReport],
    path: str | Path,
    header_comment: str | None = None,
) -> None:
    """Tidy dump of group members for box plots: one line per (complainant, group, member).

    The control group is written once (from the first report); each report adds
    its test group as ``tst-st`` or ``tst-cf``.
    """
    attrs = table.non_protected
    pos = {int(r): i for i, r in enumerate(table.row_ids)}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["complainant_id", "group", "member_id", "distance", *attrs, table.outcome])
        by_method = {r.method: {c.complainant_id: c for c in r.cases} for r in reports}
        ids = sorted({cid for cases in by_method.values() for cid in cases})
        for cid in ids:
            groups = []
            first = next(cases[cid] for cases in by_method.values() if cid in cases)
            groups.append(("ctr", first.control))
            for method, label in (("ST", "tst-st"), ("CST", "tst-cf")):
                if method in by_method and cid in by_method[method]:
                    groups.append((label, by_method[method][cid].test))
            for label, nb in groups:
                for mid, d in zip(nb.member_ids.tolist(), nb.distances.tolist()):
                    i = pos[mid]
                    w.writerow([cid, label, mid, repr(d), *(table.cell_text(a, i) for a in attrs),
                                table.cell_text(table.outcome, i)])
