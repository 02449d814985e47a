"""Augmentation-parameter search over a declared parameter space.

Two strategies share one trace format: an exhaustive grid and seeded random
sampling. Objectives are plain callables ``dict -> float`` where larger is
better; :func:`improvement_objective` turns metric reports into such values.
"""
from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import BudgetExceeded, UnknownMetric, ValidationError
from .prng import SplitMix64

DEFAULT_BUDGET = 10_000
BUDGET_ENV = "AUGFORGE_BUDGET"

HIGHER_IS_BETTER = ("map", "map50", "miou")
LOWER_IS_BETTER = ("vr", "fr")

Objective = Callable[[dict], float]


def default_budget() -> int:
    raw = os.environ.get(BUDGET_ENV)
    if raw is None:
        return DEFAULT_BUDGET
    try:
        value = int(raw)
    except ValueError:
        raise ValidationError(f"{BUDGET_ENV}={raw!r} is not an integer") from None
    if value < 1:
        raise ValidationError(f"{BUDGET_ENV} must be >= 1, got {value}")
    return value


@dataclass(frozen=True)
class Dim:
    name: str
    kind: str  # "continuous" | "discrete"
    lo: Optional[float] = None
    hi: Optional[float] = None
    values: Optional[tuple] = None
    log: bool = False

    def __post_init__(self) -> None:
        if self.kind == "continuous":
            if self.lo is None or self.hi is None or not (self.lo < self.hi):
                raise ValidationError(f"dim {self.name!r}: need lo < hi, got [{self.lo}, {self.hi}]")
            if self.log and self.lo <= 0:
                raise ValidationError(f"dim {self.name!r}: log scale needs lo > 0")
        elif self.kind == "discrete":
            if not self.values:
                raise ValidationError(f"dim {self.name!r}: discrete values must be non-empty")
            vals = tuple(self.values)
            keys = [json.dumps(v, sort_keys=True) for v in vals]
            if len(set(keys)) != len(keys):
                raise ValidationError(f"dim {self.name!r}: duplicate discrete values")
            object.__setattr__(self, "values", vals)
        else:
            raise ValidationError(f"dim {self.name!r}: unknown kind {self.kind!r}")

    def grid(self, points: int) -> list:
        if self.kind == "discrete":
            return list(self.values)
        if points == 1:
            return [float(self.lo)]
        if self.log:
            pts = np.geomspace(self.lo, self.hi, points)
            pts[0], pts[-1] = self.lo, self.hi
        else:
            pts = np.linspace(self.lo, self.hi, points)
        return [float(p) for p in pts]

    def sample(self, rng: SplitMix64) -> Any:
        u = rng.random()
        if self.kind == "discrete":
            return self.values[min(int(u * len(self.values)), len(self.values) - 1)]
        if self.log:
            v = math.exp(math.log(self.lo) + u * (math.log(self.hi) - math.log(self.lo)))
        else:
            v = self.lo + u * (self.hi - self.lo)
        return min(max(v, self.lo), self.hi)

    def contains(self, value: Any) -> bool:
        if self.kind == "discrete":
            return value in self.values
        return self.lo <= value <= self.hi

    def to_dict(self) -> dict:
        if self.kind == "discrete":
            return {"name": self.name, "kind": "discrete", "values": list(self.values)}
        d = {"name": self.name, "kind": "continuous", "lo": self.lo, "hi": self.hi}
        if self.log:
            d["log"] = True
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Dim":
        try:
            kind = d["kind"]
            if kind == "discrete":
                return cls(d["name"], "discrete", values=tuple(d["values"]))
            return cls(d["name"], kind, lo=float(d["lo"]), hi=float(d["hi"]), log=bool(d.get("log", False)))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed dim {dict(d)!r}: {exc}") from exc


@dataclass(frozen=True)
class ParamSpace:
    dims: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple(self.dims))
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate dim names in {names}")

    @property
    def names(self) -> list:
        return [d.name for d in self.dims]

    def is_discrete(self) -> bool:
        return all(d.kind == "discrete" for d in self.dims)

    def discrete_size(self) -> Optional[int]:
        """Number of distinct points, or None when any dim is continuous."""
        if not self.is_discrete():
            return None
        return math.prod(len(d.values) for d in self.dims)

    def grid_size(self, points_per_dim: int) -> int:
        return math.prod(len(d.values) if d.kind == "discrete" else points_per_dim for d in self.dims)

    def grid(self, points_per_dim: int) -> list:
        axes = [d.grid(points_per_dim) for d in self.dims]
        return [dict(zip(self.names, combo)) for combo in itertools.product(*axes)]

    def sample(self, rng: SplitMix64) -> dict:
        return {d.name: d.sample(rng) for d in self.dims}

    def contains(self, params: Mapping) -> bool:
        return all(d.name in params and d.contains(params[d.name]) for d in self.dims)

    def to_dict(self) -> dict:
        return {"dims": [d.to_dict() for d in self.dims]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParamSpace":
        if "dims" not in d:
            raise ValidationError("param space needs a 'dims' list")
        return cls(tuple(Dim.from_dict(x) for x in d["dims"]))

    @classmethod
    def load(cls, path: os.PathLike) -> "ParamSpace":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def param_key(params: Mapping) -> str:
    """Canonical text of a parameter vector (sorted keys, compact JSON)."""
    return json.dumps(dict(params), sort_keys=True, separators=(",", ":"))


@dataclass
class SearchTrace:
    params: list = field(default_factory=list)
    values: list = field(default_factory=list)

    @property
    def best_index(self) -> int:
        if not self.values:
            raise ValidationError("empty trace has no best entry")
        best = 0
        for i, v in enumerate(self.values):
            if v > self.values[best]:
                best = i
        return best

    @property
    def best_params(self) -> dict:
        return self.params[self.best_index]

    @property
    def best_value(self) -> float:
        return self.values[self.best_index]

    def __len__(self) -> int:
        return len(self.values)

    def to_dict(self) -> dict:
        return {
            "evaluations": [{"params": p, "objective": v} for p, v in zip(self.params, self.values)],
            "best_index": self.best_index,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SearchTrace":
        evs = d["evaluations"]
        return cls([dict(e["params"]) for e in evs], [float(e["objective"]) for e in evs])


def _evaluate(points: Sequence[dict], objective: Objective, jobs: int) -> SearchTrace:
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(objective, points))
    else:
        values = [objective(p) for p in points]
    values = [float(v) for v in values]
    if any(math.isnan(v) for v in values):
        raise ValidationError("objective returned NaN")
    return SearchTrace(list(points), values)


def grid_search(
    space: ParamSpace,
    points_per_dim: int,
    objective: Objective,
    budget: Optional[int] = None,
    jobs: int = 1,
) -> SearchTrace:
    """Evaluate every point of the Cartesian grid; ties go to the earliest."""
    if points_per_dim < 1:
        raise ValidationError(f"points_per_dim must be >= 1, got {points_per_dim}")
    cap = default_budget() if budget is None else budget
    size = space.grid_size(points_per_dim)
    if size > cap:
        raise BudgetExceeded(f"grid has {size} points, budget is {cap}")
    return _evaluate(space.grid(points_per_dim), objective, jobs)


def random_search(
    space: ParamSpace,
    n_samples: int,
    seed: int,
    objective: Objective,
    budget: Optional[int] = None,
    jobs: int = 1,
) -> SearchTrace:
    if n_samples < 1:
        raise ValidationError(f"n_samples must be >= 1, got {n_samples}")
    cap = default_budget() if budget is None else budget
    if n_samples > cap:
        raise BudgetExceeded(f"{n_samples} samples requested, budget is {cap}")
    rng = SplitMix64(seed)
    points = [space.sample(rng) for _ in range(n_samples)]
    return _evaluate(points, objective, jobs)


def improvement_objective(baseline_metrics: Mapping, candidate_metrics: Mapping, metric_key: str) -> float:
    """Signed improvement of ``candidate`` over ``baseline``; larger is better
    for every metric."""
    key = metric_key.lower()
    if key not in HIGHER_IS_BETTER + LOWER_IS_BETTER:
        raise UnknownMetric(f"unknown metric {metric_key!r}; expected one of {HIGHER_IS_BETTER + LOWER_IS_BETTER}")
    for name, report in (("baseline", baseline_metrics), ("candidate", candidate_metrics)):
        if report.get(key) is None:
            raise UnknownMetric(f"{name} report has no value for {key!r}")
    b, c = float(baseline_metrics[key]), float(candidate_metrics[key])
    return c - b if key in HIGHER_IS_BETTER else b - c
