"""Experiment plans, the run ledger, and result analysis.

A plan fixes what is measured, which factors vary and how many folds each
configuration is repeated over. :func:`expand_design` turns it into run
descriptors; results are appended to a JSONL ledger and analysed with
percent-change reports, exact non-parametric tests and summary tables.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .errors import (
    AllZeroDifferences,
    CorruptLedger,
    DecodeError,
    DuplicateRun,
    IoError,
    TooFewSamples,
    UnknownMetric,
    ValidationError,
)

LEDGER_SCHEMA = 1
METRIC_KEYS = ("map", "map50", "vr", "fr", "miou")
HIGHER_IS_BETTER = {"map": True, "map50": True, "miou": True, "vr": False, "fr": False}
METRIC_LABELS = {"map": "mAP", "map50": "mAP50", "vr": "VR", "fr": "FR", "miou": "mIoU"}
# JSON Schema (draft 2020-12) of one ledger line
LEDGER_RECORD_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "run_id", "factor_levels", "fold_index", "metrics", "timestamp"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": LEDGER_SCHEMA},
        "run_id": {"type": "string", "minLength": 1},
        "factor_levels": {"type": "object"},
        "fold_index": {"type": "integer", "minimum": 0},
        "metrics": {
            "type": "object",
            "propertyNames": {"enum": list(METRIC_KEYS)},
            "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1},
        },
        "timestamp": {"type": "string"},
    },
}
OBJECTIVE_KINDS = ("screening", "optimization", "cause_and_effect")
DESIGNS = ("full_factorial",)
ANALYSES = ("mean_comparison", "nonparametric_test")
EXACT_MAX_N = 20


def _check_metric(key: str) -> str:
    if key not in METRIC_KEYS:
        raise UnknownMetric(f"unknown metric {key!r}; expected one of {METRIC_KEYS}")
    return key


@dataclass(frozen=True)
class ExperimentPlan:
    varied_factors: Mapping
    measured_metrics: tuple = ("map", "map50", "vr", "fr")
    objective_kind: str = "optimization"
    fixed_factors: Mapping = field(default_factory=dict)
    design: str = "full_factorial"
    n_folds: int = 1
    analysis: str = "mean_comparison"

    def __post_init__(self) -> None:
        if not self.varied_factors:
            raise ValidationError("a plan needs at least one varied factor")
        for name, levels in self.varied_factors.items():
            if not list(levels):
                raise ValidationError(f"factor {name!r} has no levels")
        object.__setattr__(self, "varied_factors", {k: list(v) for k, v in self.varied_factors.items()})
        object.__setattr__(self, "measured_metrics", tuple(_check_metric(m) for m in self.measured_metrics))
        if self.objective_kind not in OBJECTIVE_KINDS:
            raise ValidationError(f"objective_kind must be one of {OBJECTIVE_KINDS}")
        if self.design not in DESIGNS:
            raise ValidationError(f"design must be one of {DESIGNS}")
        if self.analysis not in ANALYSES:
            raise ValidationError(f"analysis must be one of {ANALYSES}")
        if self.n_folds < 1:
            raise ValidationError(f"n_folds must be >= 1, got {self.n_folds}")

    def to_dict(self) -> dict:
        return {
            "objective_kind": self.objective_kind,
            "measured_metrics": list(self.measured_metrics),
            "fixed_factors": dict(self.fixed_factors),
            "varied_factors": dict(self.varied_factors),
            "design": self.design,
            "n_folds": self.n_folds,
            "analysis": self.analysis,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentPlan":
        try:
            return cls(
                varied_factors=d["varied_factors"],
                measured_metrics=tuple(d.get("measured_metrics", ("map", "map50", "vr", "fr"))),
                objective_kind=d.get("objective_kind", "optimization"),
                fixed_factors=d.get("fixed_factors", {}),
                design=d.get("design", "full_factorial"),
                n_folds=int(d.get("n_folds", 1)),
                analysis=d.get("analysis", "mean_comparison"),
            )
        except KeyError as exc:
            raise ValidationError(f"plan is missing {exc}") from exc

    @classmethod
    def load(cls, path: os.PathLike) -> "ExperimentPlan":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError as exc:
            raise IoError(f"{path}: no such file") from exc
        except json.JSONDecodeError as exc:
            raise DecodeError(f"{path}: invalid JSON ({exc.msg})") from exc


@dataclass(frozen=True)
class RunDescriptor:
    run_id: str
    factor_levels: Mapping
    fold_index: int


def expand_design(plan: ExperimentPlan) -> list:
    """Full factorial over the varied factors in declared order, folds
    innermost. Run ids are ``r000``, ``r001``, ... per configuration."""
    names = list(plan.varied_factors)
    runs = []
    for idx, combo in enumerate(itertools.product(*(plan.varied_factors[n] for n in names))):
        levels = dict(zip(names, combo))
        for fold in range(plan.n_folds):
            runs.append(RunDescriptor(f"r{idx:03d}", levels, fold))
    return runs


@dataclass(frozen=True)
class RunResult:
    run_id: str
    factor_levels: Mapping
    fold_index: int
    metrics: Mapping
    timestamp: str = ""

    def __post_init__(self) -> None:
        if not self.run_id:
            raise ValidationError("run_id must be non-empty")
        if self.fold_index < 0:
            raise ValidationError(f"fold_index must be >= 0, got {self.fold_index}")
        for key, value in self.metrics.items():
            _check_metric(key)
            if not (isinstance(value, (int, float)) and 0.0 <= value <= 1.0):
                raise ValidationError(f"metric {key} = {value!r} is not a number in [0,1]")
        if not self.timestamp:
            object.__setattr__(self, "timestamp", datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def to_dict(self) -> dict:
        return {
            "schema": LEDGER_SCHEMA,
            "run_id": self.run_id,
            "factor_levels": dict(self.factor_levels),
            "fold_index": self.fold_index,
            "metrics": dict(self.metrics),
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunResult":
        if d.get("schema") != LEDGER_SCHEMA:
            raise ValidationError(f"unsupported ledger schema {d.get('schema')!r}")
        return cls(d["run_id"], dict(d["factor_levels"]), int(d["fold_index"]), dict(d["metrics"]), d["timestamp"])


def read_ledger(ledger_path: os.PathLike) -> list:
    path = Path(ledger_path)
    if not path.exists():
        return []
    records = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    records.append(RunResult.from_dict(json.loads(line)))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise CorruptLedger(f"{path}: line {lineno}: {exc}") from exc
    except OSError as exc:
        if isinstance(exc, CorruptLedger):
            raise
        raise IoError(f"{path}: {exc}") from exc
    return records


def record_run(ledger_path: os.PathLike, result: RunResult, plan: Optional[ExperimentPlan] = None) -> None:
    """Append ``result`` unless its ``(run_id, fold_index)`` is already there."""
    if plan is not None:
        extra = set(result.metrics) - set(plan.measured_metrics)
        if extra:
            raise ValidationError(f"metrics {sorted(extra)} are not measured by the plan")
    for rec in read_ledger(ledger_path):
        if rec.run_id == result.run_id and rec.fold_index == result.fold_index:
            raise DuplicateRun(f"run {result.run_id!r} fold {result.fold_index} already recorded in {ledger_path}")
    try:
        with open(ledger_path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(result.to_dict(), sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"{ledger_path}: {exc}") from exc


# ---------------------------------------------------------------- improvement

def percent_change(baseline: float, variant: float) -> Optional[float]:
    if baseline == 0:
        return None
    return 100.0 * (variant - baseline) / baseline


def improvement_report(baseline_metrics: Mapping, variant_metrics: Mapping) -> dict:
    """Signed percent change per metric with its direction (↑ or ↓ better).

    A zero baseline yields ``percent=None`` and a note instead of an error.
    """
    if set(baseline_metrics) != set(variant_metrics):
        raise ValidationError(
            f"metric keys differ: baseline {sorted(baseline_metrics)} vs variant {sorted(variant_metrics)}"
        )
    report = {}
    for key in baseline_metrics:
        _check_metric(key)
        b, v = float(baseline_metrics[key]), float(variant_metrics[key])
        pct = percent_change(b, v)
        entry = {
            "baseline": b,
            "variant": v,
            "percent": pct,
            "direction": "↑" if HIGHER_IS_BETTER[key] else "↓",
        }
        if pct is None:
            entry["note"] = "undefined baseline"
        report[key] = entry
    return report


def format_percent(pct: Optional[float]) -> str:
    return "undefined" if pct is None else f"{pct:+.2f}"


# ---------------------------------------------------------------- statistics

def _ranks(values: Sequence[float]) -> list:
    """1-based ranks with ties sharing their average rank."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def wilcoxon_null(ranks: Sequence[float]) -> dict:
    """Exact null distribution of W+ for the given (possibly tied) ranks as
    ``{2*W+: count}`` over all ``2**n`` sign assignments."""
    dist = {0: 1}
    for r in ranks:
        r2 = int(round(2 * r))
        nxt: dict = {}
        for s, c in dist.items():
            nxt[s] = nxt.get(s, 0) + c
            nxt[s + r2] = nxt.get(s + r2, 0) + c
        dist = nxt
    return dist


def _tail_p(prob_ge: float, prob_le: float, alternative: str) -> float:
    if alternative == "greater":
        return prob_ge
    if alternative == "less":
        return prob_le
    return min(1.0, 2 * min(prob_ge, prob_le))


def _paired_differences(scores_a: Sequence[float], scores_b: Sequence[float], min_n: int) -> list:
    if len(scores_a) != len(scores_b):
        raise ValidationError(f"paired samples differ in length: {len(scores_a)} vs {len(scores_b)}")
    if len(scores_a) < min_n:
        raise TooFewSamples(f"need at least {min_n} pairs, got {len(scores_a)}")
    diffs = [float(a) - float(b) for a, b in zip(scores_a, scores_b)]
    nonzero = [d for d in diffs if d != 0]
    if not nonzero:
        raise AllZeroDifferences("all paired differences are zero")
    return nonzero


def wilcoxon_signed_rank(scores_a: Sequence[float], scores_b: Sequence[float], alternative: str = "two-sided") -> dict:
    """W+ statistic on ``a - b``; exact p-value for n <= 20 (after dropping
    zero differences), normal approximation with tie and continuity
    correction above that."""
    d = _paired_differences(scores_a, scores_b, 2)
    n = len(d)
    ranks = _ranks([abs(x) for x in d])
    w_plus = sum(r for r, x in zip(ranks, d) if x > 0)
    if n <= EXACT_MAX_N:
        dist = wilcoxon_null(ranks)
        total = 2 ** n
        w2 = int(round(2 * w_plus))
        ge = sum(c for s, c in dist.items() if s >= w2)
        le = sum(c for s, c in dist.items() if s <= w2)
        p = _tail_p(ge / total, le / total, alternative)
        method = "exact"
    else:
        mean = n * (n + 1) / 4
        ties = {}
        for r in ranks:
            ties[r] = ties.get(r, 0) + 1
        var = n * (n + 1) * (2 * n + 1) / 24 - sum(t ** 3 - t for t in ties.values()) / 48
        sd = math.sqrt(var)
        z_ge = (w_plus - mean - 0.5) / sd
        z_le = (w_plus - mean + 0.5) / sd
        ge = 0.5 * math.erfc(z_ge / math.sqrt(2))
        le = 0.5 * math.erfc(-z_le / math.sqrt(2))
        p = _tail_p(ge, le, alternative)
        method = "normal"
    return {"test": "wilcoxon", "statistic": w_plus, "p_value": min(1.0, p), "n": n, "method": method, "alternative": alternative}


def sign_test(scores_a: Sequence[float], scores_b: Sequence[float], alternative: str = "two-sided") -> dict:
    """Exact binomial sign test on the non-zero differences ``a - b``."""
    d = _paired_differences(scores_a, scores_b, 1)
    n = len(d)
    pos = sum(1 for x in d if x > 0)
    total = Fraction(1, 2 ** n)
    ge = float(sum(math.comb(n, k) for k in range(pos, n + 1)) * total)
    le = float(sum(math.comb(n, k) for k in range(0, pos + 1)) * total)
    return {"test": "sign", "statistic": pos, "p_value": _tail_p(ge, le, alternative), "n": n, "method": "exact", "alternative": alternative}


def compare_runs(scores_a: Sequence[float], scores_b: Sequence[float], test_kind: str = "wilcoxon", alternative: str = "two-sided") -> dict:
    if alternative not in ("two-sided", "greater", "less"):
        raise ValidationError(f"alternative must be two-sided, greater or less, got {alternative!r}")
    if test_kind == "wilcoxon":
        return wilcoxon_signed_rank(scores_a, scores_b, alternative)
    if test_kind == "sign":
        return sign_test(scores_a, scores_b, alternative)
    raise ValidationError(f"test_kind must be 'wilcoxon' or 'sign', got {test_kind!r}")


def fold_scores(records: Sequence[RunResult], metric: str, variant: str, column_factor: Optional[str] = None) -> dict:
    """``{fold_index: value}`` for one variant, as labelled by :func:`variant_label`."""
    out = {}
    for rec in records:
        if variant_label(rec, column_factor) == variant and metric in rec.metrics:
            out[rec.fold_index] = float(rec.metrics[metric])
    return out


# ---------------------------------------------------------------- tables

def variant_label(rec: RunResult, column_factor: Optional[str] = None, exclude: Sequence[str] = ()) -> str:
    if column_factor is not None:
        return str(rec.factor_levels.get(column_factor, rec.run_id))
    levels = [(k, v) for k, v in rec.factor_levels.items() if k not in exclude]
    if not levels:
        return rec.run_id
    if len(levels) == 1:
        return str(levels[0][1])
    return ", ".join(f"{k}={v}" for k, v in levels)


def format_value(v: float) -> str:
    s = f"{v:.4f}".rstrip("0")
    return s + "0" if s.endswith(".") else s


@dataclass
class Table:
    columns: list
    rows: list  # (row label, metric key)
    cells: dict  # (row label, column) -> mean
    counts: dict  # (row label, column) -> number of folds
    baseline: Optional[str] = None
    missing: list = field(default_factory=list)

    def best(self, row) -> set:
        metric = row[1]
        vals = {c: self.cells[(row[0], c)] for c in self.columns if (row[0], c) in self.cells}
        if not vals:
            return set()
        target = max(vals.values()) if HIGHER_IS_BETTER[metric] else min(vals.values())
        return {c for c, v in vals.items() if v == target}

    def improvement(self, row, column) -> Optional[float]:
        base = self.cells.get((row[0], self.baseline))
        val = self.cells.get((row[0], column))
        if base is None or val is None:
            return None
        return percent_change(base, val)

    def _improvement_columns(self) -> list:
        if self.baseline is None:
            return []
        return [c for c in self.columns if c != self.baseline]

    @property
    def aggregation(self) -> str:
        n = set(self.counts.values())
        if n == {1}:
            return "cells are single runs"
        return f"cells are means over folds (n={','.join(str(x) for x in sorted(n))})"

    def to_text(self) -> str:
        imp_cols = self._improvement_columns()
        header = ["Metric"] + list(self.columns) + [f"{c} Δ%" for c in imp_cols]
        body = []
        for row in self.rows:
            label, metric = row
            best = self.best(row)
            arrow = "↑" if HIGHER_IS_BETTER[metric] else "↓"
            line = [f"{label} {arrow}"]
            for c in self.columns:
                v = self.cells.get((label, c))
                if v is None:
                    line.append("n/a")
                else:
                    s = format_value(v)
                    line.append(f"**{s}**" if c in best else s)
            line += [format_percent(self.improvement(row, c)) if (label, c) in self.cells else "n/a" for c in imp_cols]
            body.append(line)
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        out = io.StringIO()
        for r in [header] + body:
            out.write("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() + "\n")
            if r is header:
                out.write("  ".join("-" * w for w in widths) + "\n")
        out.write(f"({self.aggregation}; bold marks the best value per row)\n")
        for m in self.missing:
            out.write(f"missing cell: {m}\n")
        return out.getvalue()

    def to_csv(self) -> str:
        imp_cols = self._improvement_columns()
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["metric"] + list(self.columns) + [f"{c} improvement_pct" for c in imp_cols])
        for row in self.rows:
            label = row[0]
            cells = [repr(self.cells[(label, c)]) if (label, c) in self.cells else "" for c in self.columns]
            imps = []
            for c in imp_cols:
                p = self.improvement(row, c)
                imps.append("" if p is None else f"{p:.6f}")
            w.writerow([label] + cells + imps)
        return out.getvalue()

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "rows": [
                {
                    "label": label,
                    "metric": metric,
                    "values": {c: self.cells.get((label, c)) for c in self.columns},
                    "best": sorted(self.best((label, metric))),
                    "improvement_pct": {c: self.improvement((label, metric), c) for c in self._improvement_columns()},
                }
                for label, metric in self.rows
            ],
            "baseline": self.baseline,
            "aggregation": self.aggregation,
            "missing": list(self.missing),
        }


def render_tables(
    ledger: Sequence[RunResult],
    plan: Optional[ExperimentPlan] = None,
    *,
    metrics: Optional[Sequence[str]] = None,
    column_factor: Optional[str] = None,
    row_factor: Optional[str] = None,
    baseline: Optional[str] = None,
) -> Table:
    """One row per metric (split by ``row_factor`` levels when given), one
    column per strategy variant, each cell the mean over folds."""
    records = list(ledger)
    if metrics is None:
        if plan is not None:
            metrics = list(plan.measured_metrics)
        else:
            metrics = [m for m in METRIC_KEYS if any(m in r.metrics for r in records)]
    metrics = [_check_metric(m) for m in metrics]
    exclude = [row_factor] if row_factor else []

    columns: list = []
    row_levels: list = []
    sums: dict = {}
    counts: dict = {}
    for rec in records:
        col = variant_label(rec, column_factor, exclude)
        if col not in columns:
            columns.append(col)
        level = str(rec.factor_levels.get(row_factor, "")) if row_factor else ""
        if level not in row_levels:
            row_levels.append(level)
        for m in metrics:
            if m in rec.metrics:
                label = METRIC_LABELS[m] + (f" [{level}]" if level else "")
                key = (label, col)
                sums[key] = sums.get(key, 0.0) + float(rec.metrics[m])
                counts[key] = counts.get(key, 0) + 1

    rows = []
    for m in metrics:
        for level in row_levels:
            rows.append((METRIC_LABELS[m] + (f" [{level}]" if level else ""), m))
    cells = {k: sums[k] / counts[k] for k in sums}
    missing = [f"{label} / {c}" for label, _ in rows for c in columns if (label, c) not in cells]
    if baseline is not None and baseline not in columns:
        raise ValidationError(f"baseline variant {baseline!r} not among {columns}")
    return Table(columns, rows, cells, counts, baseline, missing)
