"""Classification metrics, ablation ranking and report files."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInput, WriteError

CSV_HEADER = [
    "config", "level", "accuracy_mean", "accuracy_std", "f1_mean", "f1_std",
    "pct_dec_accuracy", "pct_dec_f1", "n_seeds", "failed_cells",
]


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "Metrics":
        total = tp + fp + tn + fn
        if total == 0:
            raise InvalidInput("confusion matrix is empty")
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(tp, fp, tn, fn, (tp + tn) / total, precision, recall, f1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Metrics":
        return cls(**data)


def compute_metrics(predictions: Sequence[float], labels: Sequence[int],
                    threshold: float = 0.5) -> Metrics:
    """Confusion counts with predictions binarized at `p >= threshold`."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if p.size == 0 or p.size != y.size:
        raise InvalidInput(f"need equal non-zero lengths, got {p.size} and {y.size}")
    if not np.isin(y, (0, 1)).all():
        raise InvalidInput("labels must be 0 or 1")
    pred = p >= threshold
    pos = y == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return Metrics.from_counts(tp, fp, tn, fn)


# ------------------------------------------------------------------- ranking

@dataclass(frozen=True)
class RankEntry:
    name: str
    pct_decrease_accuracy: Optional[float]
    pct_decrease_f1: Optional[float]


def _desc(x: Optional[float]) -> float:
    return float("inf") if x is None else -x


def rank_facets(results) -> list[RankEntry]:
    """Non-baseline configs ordered by accuracy decrease, then f1 decrease,
    then name. Configs with no successful cell sort last."""
    entries = [
        RankEntry(name, r.pct_decrease_accuracy.mean, r.pct_decrease_f1.mean)
        for name, r in results.per_config.items()
        if r.level != "Baseline"
    ]
    return sorted(entries, key=lambda e: (_desc(e.pct_decrease_accuracy),
                                          _desc(e.pct_decrease_f1), e.name))


# ------------------------------------------------------------------- writing

def _num(x) -> str:
    return "" if x is None else repr(float(x))


def _fmt(x, digits=4) -> str:
    return "n/a" if x is None else f"{x:.{digits}f}"


def results_csv(results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for name, r in results.per_config.items():
        writer.writerow([
            name, r.level, _num(r.accuracy.mean), _num(r.accuracy.std),
            _num(r.f1.mean), _num(r.f1.std), _num(r.pct_decrease_accuracy.mean),
            _num(r.pct_decrease_f1.mean), r.n_seeds, len(r.failed_seeds),
        ])
    return buf.getvalue()


def results_json(results) -> str:
    return json.dumps(results.to_dict(), indent=2, sort_keys=True) + "\n"


def results_markdown(results, ranking: Sequence[RankEntry]) -> str:
    lines = ["# Ablation results", ""]
    base = next((r for r in results.per_config.values() if r.level == "Baseline"), None)
    if base is not None:
        lines.append(
            f"Baseline `{base.name}`: accuracy {_fmt(base.accuracy.mean)} "
            f"± {_fmt(base.accuracy.std)}, F1 {_fmt(base.f1.mean)} ± {_fmt(base.f1.std)} "
            f"over {base.n_seeds} seed(s).")
        lines.append("")
    lines += [
        "| rank | config | level | accuracy | F1 | % decrease accuracy | % decrease F1 | failed |",
        "|---:|---|---|---:|---:|---:|---:|---:|",
    ]
    for i, entry in enumerate(ranking, start=1):
        r = results.per_config[entry.name]
        lines.append(
            f"| {i} | {entry.name} | {r.level} | {_fmt(r.accuracy.mean)} | {_fmt(r.f1.mean)} "
            f"| {_fmt(entry.pct_decrease_accuracy)} | {_fmt(entry.pct_decrease_f1)} "
            f"| {len(r.failed_seeds)} |")
    return "\n".join(lines) + "\n"


def write_report(results, ranking, path, format: str = "CSV") -> Path:
    fmt = format.upper()
    if fmt == "CSV":
        text = results_csv(results)
    elif fmt == "JSON":
        text = results_json(results)
    elif fmt in ("MARKDOWN", "MD"):
        text = results_markdown(results, ranking)
    else:
        raise InvalidInput(f"unknown report format {format!r}")
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise WriteError(f"cannot write {path}: {exc}") from exc
    return path


def read_results(path):
    from .ablation import AblationResults

    with open(path, encoding="utf-8") as fh:
        return AblationResults.from_dict(json.load(fh))
