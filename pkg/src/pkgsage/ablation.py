"""Exclusion plans and the retrain-per-exclusion ablation sweep."""

from __future__ import annotations

import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import Decimal
from itertools import combinations
from typing import Optional, Sequence

from .errors import (
    DegenerateSplit,
    InvalidConditionList,
    InvalidInput,
    PkgSageError,
    UndefinedDelta,
)
from .gnn import TrainConfig, train
from .graph import EMPTY_MASK, FacetMask, build_graphs
from .ingest import CohortDataset
from .schema import Schema, View, facets_of_view

log = logging.getLogger(__name__)

LEVELS = ("Baseline", "Facet", "View", "ClinicalPair", "AllClinical", "ConditionList")
METRICS = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class AblationConfig:
    name: str
    mask: FacetMask
    level: str

    def __post_init__(self):
        if self.level not in LEVELS:
            raise InvalidInput(f"unknown ablation level {self.level!r}")
        if self.level == "Baseline" and not self.mask.is_empty:
            raise InvalidInput("the baseline config must have an empty mask")


@dataclass(frozen=True)
class AblationPlan:
    configs: tuple

    def __post_init__(self):
        object.__setattr__(self, "configs", tuple(self.configs))
        names = [c.name for c in self.configs]
        if len(set(names)) != len(names):
            raise InvalidInput(f"config names must be unique: {names}")
        baselines = [c for c in self.configs if c.level == "Baseline"]
        if len(baselines) != 1 or self.configs[0].level != "Baseline":
            raise InvalidInput("a plan needs exactly one Baseline config, placed first")

    def __len__(self):
        return len(self.configs)

    def levels(self) -> dict:
        counts = {}
        for c in self.configs:
            counts[c.level] = counts.get(c.level, 0) + 1
        return counts

    def subset(self, names: Sequence[str]) -> "AblationPlan":
        """Baseline plus the named configs, in plan order."""
        wanted = set(names)
        return AblationPlan([c for c in self.configs
                             if c.level == "Baseline" or c.name in wanted])


def generate_plans(schema: Schema, condition_codes: Optional[dict] = None) -> AblationPlan:
    """Baseline, each facet alone, each view, each pair of clinical facets,
    all clinical facets, and (optionally) a list of specific clinical codes."""
    clinical = [f.name for f in facets_of_view(schema, View.CLINICAL)]
    if condition_codes is not None:
        bad = [k for k in condition_codes if k not in clinical]
        if bad:
            raise InvalidConditionList(f"condition list names non-clinical facets {bad}")

    configs = [AblationConfig("baseline", EMPTY_MASK, "Baseline")]
    for facet in schema.facets:
        configs.append(AblationConfig(f"no_{facet.name}", FacetMask({facet.name}), "Facet"))
    for view in View:
        names = [f.name for f in facets_of_view(schema, view)]
        if names:
            configs.append(AblationConfig(f"no_{view.value.lower()}_view",
                                          FacetMask(set(names)), "View"))
    for a, b in combinations(clinical, 2):
        configs.append(AblationConfig(f"no_{a}+{b}", FacetMask({a, b}), "ClinicalPair"))
    if clinical:
        configs.append(AblationConfig("no_clinical_all", FacetMask(set(clinical)), "AllClinical"))
    if condition_codes is not None:
        mask = FacetMask(frozenset(), {k: set(v) for k, v in condition_codes.items()})
        configs.append(AblationConfig("no_condition_list", mask, "ConditionList"))
    return AblationPlan(configs)


def _infer_level(mask: FacetMask, schema: Schema) -> str:
    clinical = {f.name for f in facets_of_view(schema, View.CLINICAL)}
    facets = set(mask.excluded_facets)
    if not facets:
        return "ConditionList" if not mask.is_empty else "Baseline"
    if len(facets) == 1:
        return "Facet"
    if facets == clinical:
        return "AllClinical"
    if len(facets) == 2 and facets <= clinical:
        return "ClinicalPair"
    return "View"


def plan_from_json(data: list, schema: Schema) -> AblationPlan:
    """Build a plan from `[{name, excluded_facets, excluded_codes[, level]}]`.
    A baseline is prepended when the list has none."""
    configs = []
    for entry in data:
        mask = FacetMask.from_dict(entry)
        mask.check(schema)
        level = entry.get("level") or _infer_level(mask, schema)
        configs.append(AblationConfig(entry["name"], mask, level))
    if not any(c.level == "Baseline" for c in configs):
        configs.insert(0, AblationConfig("baseline", EMPTY_MASK, "Baseline"))
    configs.sort(key=lambda c: c.level != "Baseline")
    return AblationPlan(configs)


def load_plan(path, schema: Schema) -> AblationPlan:
    with open(path, encoding="utf-8") as fh:
        return plan_from_json(json.load(fh), schema)


def load_conditions(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise InvalidConditionList("condition list must be a JSON object {facet: [codes]}")
    return {k: list(v) for k, v in data.items()}


def percentage_decrease(baseline: float, ablated: float) -> float:
    """Relative decline (baseline - ablated) / baseline * 100.

    Evaluated in decimal on the shortest repr of each input, so values that
    print exactly (e.g. 1.0 and 0.8176) give an exactly printable result.
    """
    if baseline == 0:
        raise UndefinedDelta("percentage decrease is undefined for a zero baseline")
    b, a = Decimal(repr(float(baseline))), Decimal(repr(float(ablated)))
    return float((b - a) / b * 100)


# -------------------------------------------------------------------- results

@dataclass(frozen=True)
class Stat:
    mean: Optional[float]
    std: Optional[float]

    @classmethod
    def of(cls, values: Sequence[float]) -> "Stat":
        values = [v for v in values if v is not None]
        if not values:
            return cls(None, None)
        mean = statistics.fmean(values)
        std = statistics.stdev(values) if len(values) > 1 else 0.0
        return cls(mean, std)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}


@dataclass(frozen=True)
class ConfigResult:
    name: str
    level: str
    mask: FacetMask
    accuracy: Stat
    precision: Stat
    recall: Stat
    f1: Stat
    pct_decrease_accuracy: Stat
    pct_decrease_f1: Stat
    n_seeds: int
    failed_seeds: tuple = ()
    per_seed: tuple = ()

    def to_dict(self) -> dict:
        out = {"name": self.name, "level": self.level, "mask": self.mask.to_dict(),
               "n_seeds": self.n_seeds, "failed_seeds": list(self.failed_seeds),
               "per_seed": [dict(c) for c in self.per_seed]}
        for key in METRICS + ("pct_decrease_accuracy", "pct_decrease_f1"):
            out[key] = getattr(self, key).to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ConfigResult":
        stats = {k: Stat(d[k]["mean"], d[k]["std"])
                 for k in METRICS + ("pct_decrease_accuracy", "pct_decrease_f1")}
        return cls(d["name"], d["level"], FacetMask.from_dict(d["mask"]), n_seeds=d["n_seeds"],
                   failed_seeds=tuple(d["failed_seeds"]),
                   per_seed=tuple(d["per_seed"]), **stats)


@dataclass(frozen=True)
class AblationResults:
    per_config: dict
    n_seeds: int
    seeds: tuple = ()
    train_config: dict = field(default_factory=dict)

    def baseline(self) -> ConfigResult:
        return next(r for r in self.per_config.values() if r.level == "Baseline")

    def to_dict(self) -> dict:
        return {
            "n_seeds": self.n_seeds,
            "seeds": list(self.seeds),
            "train_config": self.train_config,
            "configs": [r.to_dict() for r in self.per_config.values()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AblationResults":
        per_config = {}
        for c in d["configs"]:
            r = ConfigResult.from_dict(c)
            per_config[r.name] = r
        return cls(per_config, d["n_seeds"], tuple(d["seeds"]), d.get("train_config", {}))


# ---------------------------------------------------------------------- sweep

def _run_cell(args):
    pairs, schema, mask, config = args
    graphs = build_graphs(pairs, schema, mask)
    try:
        result = train(graphs, config)
    except DegenerateSplit as exc:
        return None, str(exc)
    if result.test_metrics is None:
        return None, "empty test split"
    return result.test_metrics, None


def _delta(base, value):
    try:
        return percentage_decrease(base, value)
    except UndefinedDelta:
        return None


def run_sweep(cohort: CohortDataset, schema: Schema, plan: AblationPlan,
              config: TrainConfig, seeds: Sequence[int], jobs: int = 1) -> AblationResults:
    """Rebuild graphs under each config's mask and retrain from scratch for
    every seed. A seed fixes the split and the initialization, so every
    config is compared with the baseline on the same test admissions."""
    seeds = list(seeds)
    if not seeds:
        raise InvalidInput("at least one seed is required")
    if not cohort.is_labeled:
        raise InvalidInput("run_sweep needs a labeled cohort")
    for c in plan.configs:
        c.mask.check(schema)
    pairs = cohort.labeled_pairs()
    cells = [(c, s) for c in plan.configs for s in seeds]
    tasks = [(pairs, schema, c.mask, replace(config, seed=s)) for c, s in cells]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell, tasks))
    else:
        outcomes = []
        for (c, s), task in zip(cells, tasks):
            outcomes.append(_run_cell(task))
            log.info("cell %s seed %s done", c.name, s)

    by_cell = {(c.name, s): out for (c, s), out in zip(cells, outcomes)}
    base_name = plan.configs[0].name
    per_config = {}
    for c in plan.configs:
        rows, failed = [], []
        for s in seeds:
            metrics, err = by_cell[(c.name, s)]
            if metrics is None:
                log.warning("cell %s seed %s failed: %s", c.name, s, err)
                failed.append(s)
                continue
            base, _ = by_cell[(base_name, s)]
            if c.level == "Baseline":
                d_acc, d_f1 = 0.0, 0.0
            elif base is None:
                d_acc = d_f1 = None
            else:
                d_acc = _delta(base.accuracy, metrics.accuracy)
                d_f1 = _delta(base.f1, metrics.f1)
            row = {"seed": s}
            row.update({m: getattr(metrics, m) for m in METRICS})
            row["pct_decrease_accuracy"] = d_acc
            row["pct_decrease_f1"] = d_f1
            rows.append(row)
        stats = {m: Stat.of([r[m] for r in rows]) for m in METRICS}
        per_config[c.name] = ConfigResult(
            c.name, c.level, c.mask,
            pct_decrease_accuracy=Stat.of([r["pct_decrease_accuracy"] for r in rows]),
            pct_decrease_f1=Stat.of([r["pct_decrease_f1"] for r in rows]),
            n_seeds=len(rows), failed_seeds=tuple(failed), per_seed=tuple(rows), **stats)
    return AblationResults(per_config, len(seeds), tuple(seeds), config.to_dict())
