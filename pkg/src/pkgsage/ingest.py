"""Cohort ingestion: parsing, 30-day readmission labels, missingness, note
enrichment, sampling and dataset summaries."""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import (
    DuplicateAdmission,
    InvalidWindow,
    ParseError,
    PkgSageError,
    SampleTooLarge,
)
from .schema import SOCIAL_FACETS, Arity, Facet, Schema

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "patient_id", "admission_id", "admit_time", "icu_stay",
    "age_group", "gender", "religion", "marital_status", "race",
    "employment", "household", "housing",
    "disease_codes", "medication_codes", "procedure_codes", "note_text",
]
CATEGORY_FIELDS = CSV_COLUMNS[4:12]
CODE_FIELDS = CSV_COLUMNS[12:15]
REQUIRED_FIELDS = CSV_COLUMNS[:4]


def normalize_codes(codes: Iterable[str]) -> tuple[str, ...]:
    """Uppercase, trim and de-duplicate codes, keeping first-seen order."""
    seen = {}
    for code in codes:
        code = str(code).strip().upper()
        if code and code not in seen:
            seen[code] = None
    return tuple(seen)


@dataclass(frozen=True)
class AdmissionRecord:
    patient_id: str
    admission_id: str
    admit_time: int
    icu_stay: bool
    age_group: Optional[str] = None
    gender: Optional[str] = None
    religion: Optional[str] = None
    marital_status: Optional[str] = None
    race: Optional[str] = None
    employment: Optional[str] = None
    household: Optional[str] = None
    housing: Optional[str] = None
    disease_codes: tuple[str, ...] = ()
    medication_codes: tuple[str, ...] = ()
    procedure_codes: tuple[str, ...] = ()
    note_text: Optional[str] = None
    # values for facets registered beyond the default schema
    extras: dict = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self):
        for name in CODE_FIELDS:
            object.__setattr__(self, name, normalize_codes(getattr(self, name)))

    @property
    def key(self) -> tuple[str, str]:
        return (self.patient_id, self.admission_id)


def facet_value(record: AdmissionRecord, facet: Facet):
    """Value of `facet` on `record`: a category (or None) for single-valued
    facets, a tuple of codes for multi-valued ones."""
    if facet.arity is Arity.MULTI:
        attr = f"{facet.name}_codes"
        if hasattr(record, attr):
            return getattr(record, attr)
        raw = record.extras.get(facet.name)
        if raw is None:
            return ()
        if isinstance(raw, str):
            raw = raw.split("|")
        return normalize_codes(raw)
    if facet.name in CATEGORY_FIELDS:
        return getattr(record, facet.name)
    value = record.extras.get(facet.name)
    return value if value not in ("", None) else None


def is_missing(record: AdmissionRecord, facet: Facet) -> bool:
    value = facet_value(record, facet)
    return len(value) == 0 if facet.arity is Arity.MULTI else value is None


@dataclass(frozen=True)
class CohortDataset:
    records: tuple[AdmissionRecord, ...]
    labels: dict = field(default_factory=dict)
    index_admissions: frozenset = frozenset()
    n_excluded_patients: int = 0

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "index_admissions", frozenset(self.index_admissions))
        stray = set(self.labels) - self.index_admissions
        if stray:
            raise PkgSageError(f"labels for non-index admissions: {sorted(stray)[:5]}")

    @property
    def is_labeled(self) -> bool:
        return bool(self.index_admissions)

    def index_records(self) -> list[AdmissionRecord]:
        """Index admissions in record order."""
        return [r for r in self.records if r.admission_id in self.index_admissions]

    def labeled_pairs(self) -> list[tuple[AdmissionRecord, int]]:
        return [(r, self.labels[r.admission_id]) for r in self.index_records()]


# --------------------------------------------------------------------- parsing

def _category(value) -> Optional[str]:
    if value is None:
        return None
    value = str(value).strip()
    return value or None


def _parse_int(value, name, line):
    try:
        return int(str(value).strip())
    except (TypeError, ValueError):
        raise ParseError(f"{name} must be an integer, got {value!r}", line) from None


def _parse_icu(value, line) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip()
    if text not in ("0", "1"):
        raise ParseError(f"icu_stay must be 0 or 1, got {value!r}", line)
    return text == "1"


def _record_from_fields(row: dict, line: int, split_codes: bool) -> AdmissionRecord:
    for name in REQUIRED_FIELDS:
        if row.get(name) is None or str(row[name]).strip() == "":
            raise ParseError(f"missing required field {name!r}", line)
    kwargs = {
        "patient_id": str(row["patient_id"]).strip(),
        "admission_id": str(row["admission_id"]).strip(),
        "admit_time": _parse_int(row["admit_time"], "admit_time", line),
        "icu_stay": _parse_icu(row["icu_stay"], line),
    }
    for name in CATEGORY_FIELDS:
        kwargs[name] = _category(row.get(name))
    for name in CODE_FIELDS:
        raw = row.get(name)
        if raw is None:
            codes = ()
        elif split_codes:
            codes = str(raw).split("|") if str(raw).strip() else ()
        elif isinstance(raw, list):
            codes = raw
        else:
            raise ParseError(f"{name} must be an array", line)
        kwargs[name] = codes
    note = row.get("note_text")
    kwargs["note_text"] = note if note not in (None, "") else None
    extras = {k: v for k, v in row.items() if k not in CSV_COLUMNS and k is not None}
    kwargs["extras"] = {k: v for k, v in extras.items() if v not in ("", None)}
    return AdmissionRecord(**kwargs)


def _check_unique(records):
    seen = set()
    for rec in records:
        if rec.key in seen:
            raise DuplicateAdmission(f"duplicate admission {rec.key}")
        seen.add(rec.key)


def parse_cohort(path, format: str = "CSV") -> CohortDataset:
    """Read an unlabeled cohort from a CSV or JSONL file."""
    fmt = format.upper()
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        if fmt == "CSV":
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ParseError("empty file, header required", 1)
            missing = [c for c in REQUIRED_FIELDS if c not in reader.fieldnames]
            if missing:
                raise ParseError(f"header lacks columns {missing}", 1)
            for row in reader:
                if None in row:
                    raise ParseError("row has more cells than the header", reader.line_num)
                records.append(_record_from_fields(row, reader.line_num, True))
        elif fmt == "JSONL":
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
                if not isinstance(obj, dict):
                    raise ParseError("record must be a JSON object", lineno)
                records.append(_record_from_fields(obj, lineno, False))
        else:
            raise PkgSageError(f"unknown cohort format {format!r}")
    _check_unique(records)
    return CohortDataset(tuple(records))


def guess_format(path) -> str:
    return "JSONL" if str(path).lower().endswith((".jsonl", ".ndjson")) else "CSV"


def record_to_dict(rec: AdmissionRecord) -> dict:
    out = {
        "patient_id": rec.patient_id,
        "admission_id": rec.admission_id,
        "admit_time": rec.admit_time,
        "icu_stay": int(rec.icu_stay),
    }
    for name in CATEGORY_FIELDS:
        out[name] = getattr(rec, name)
    for name in CODE_FIELDS:
        out[name] = list(getattr(rec, name))
    out["note_text"] = rec.note_text
    return out


def write_cohort(cohort, path, format: str = "CSV") -> None:
    """Write records (a CohortDataset or an iterable of records) in the
    ingest file format."""
    records = cohort.records if isinstance(cohort, CohortDataset) else list(cohort)
    fmt = format.upper()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if fmt == "CSV":
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for rec in records:
                d = record_to_dict(rec)
                row = []
                for col in CSV_COLUMNS:
                    v = d[col]
                    if isinstance(v, list):
                        v = "|".join(v)
                    row.append("" if v is None else v)
                writer.writerow(row)
        elif fmt == "JSONL":
            for rec in records:
                fh.write(json.dumps(record_to_dict(rec)) + "\n")
        else:
            raise PkgSageError(f"unknown cohort format {format!r}")


# -------------------------------------------------------------------- labeling

def label_readmissions(records, window_days: int = 30) -> CohortDataset:
    """Pick each patient's first ICU admission as the index admission and
    label it 1 iff another admission follows within `window_days` (inclusive).
    """
    if window_days < 0:
        raise InvalidWindow(f"window_days must be >= 0, got {window_days}")
    records = tuple(records.records if isinstance(records, CohortDataset) else records)
    _check_unique(records)
    by_patient = defaultdict(list)
    for rec in records:
        by_patient[rec.patient_id].append(rec)

    labels = {}
    excluded = 0
    for pid, adms in by_patient.items():
        icu = [r for r in adms if r.icu_stay]
        if not icu:
            excluded += 1
            continue
        index = min(icu, key=lambda r: (r.admit_time, r.admission_id))
        if index.admission_id in labels:
            raise DuplicateAdmission(
                f"admission_id {index.admission_id!r} is the index admission of two patients")
        readmitted = any(
            0 < r.admit_time - index.admit_time <= window_days
            for r in adms if r is not index
        )
        labels[index.admission_id] = int(readmitted)
    if excluded:
        log.info("excluded %d patients without an ICU stay", excluded)
    return CohortDataset(records, labels, frozenset(labels), excluded)


# ----------------------------------------------------------------- missingness

@dataclass(frozen=True)
class MissingnessReport:
    per_facet: dict
    n_records: int

    def to_dict(self) -> dict:
        return {"n_records": self.n_records, "per_facet": dict(self.per_facet)}


def assess_missingness(cohort: CohortDataset, schema: Schema) -> MissingnessReport:
    index = cohort.index_records()
    n = len(index)
    per_facet = {}
    for facet in schema.facets:
        missing = sum(1 for r in index if is_missing(r, facet))
        per_facet[facet.name] = float(Fraction(missing, n)) if n else 0.0
    return MissingnessReport(per_facet, n)


# ------------------------------------------------------------------ enrichment

@dataclass(frozen=True)
class ConceptDictionary:
    """Keyword → (social facet, category) lookup standing in for a clinical
    concept annotator."""

    entries: dict

    def __post_init__(self):
        clean = {}
        for keyword, target in self.entries.items():
            facet, value = target
            if keyword != keyword.lower() or not keyword.strip():
                raise PkgSageError(f"dictionary keyword must be lowercase: {keyword!r}")
            if facet not in SOCIAL_FACETS:
                raise PkgSageError(f"dictionary targets non-social facet {facet!r}")
            clean[keyword] = (facet, value)
        object.__setattr__(self, "entries", clean)

    @classmethod
    def from_json(cls, data: dict) -> "ConceptDictionary":
        return cls({k: (v["facet"], v["value"]) for k, v in data.items()})

    @classmethod
    def load(cls, path) -> "ConceptDictionary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return {k: {"facet": f, "value": v} for k, (f, v) in self.entries.items()}


def extract_concept(text: str, dictionary: ConceptDictionary, facet: str):
    """Longest keyword for `facet` occurring in `text`; ties go to the
    earliest position, then to the lexicographically smaller keyword."""
    lowered = text.lower()
    best = None
    for keyword, (target, value) in dictionary.entries.items():
        if target != facet:
            continue
        pos = lowered.find(keyword)
        if pos < 0:
            continue
        rank = (-len(keyword), pos, keyword)
        if best is None or rank < best[0]:
            best = (rank, value)
    return None if best is None else best[1]


def enrich_social(cohort: CohortDataset, dictionary: ConceptDictionary) -> CohortDataset:
    """Fill absent social facets from note text; never overwrites a value."""
    out = []
    for rec in cohort.records:
        if not rec.note_text:
            out.append(rec)
            continue
        updates = {}
        for facet in SOCIAL_FACETS:
            if getattr(rec, facet) is None:
                value = extract_concept(rec.note_text, dictionary, facet)
                if value is not None:
                    updates[facet] = value
        out.append(replace(rec, **updates) if updates else rec)
    return replace(cohort, records=tuple(out))


# -------------------------------------------------------------------- sampling

def sample_cohort(cohort: CohortDataset, n: int, seed: int) -> CohortDataset:
    """Uniformly sample `n` index admissions without replacement, keeping
    every admission of the sampled patients."""
    index = cohort.index_records()
    if n > len(index) or n < 0:
        raise SampleTooLarge(f"cannot sample {n} of {len(index)} index admissions")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(index), size=n, replace=False)
    keep_ids = {index[i].admission_id for i in chosen}
    keep_patients = {index[i].patient_id for i in chosen}
    records = tuple(r for r in cohort.records if r.patient_id in keep_patients)
    labels = {k: v for k, v in cohort.labels.items() if k in keep_ids}
    return CohortDataset(records, labels, frozenset(keep_ids), cohort.n_excluded_patients)


# --------------------------------------------------------------------- summary

@dataclass(frozen=True)
class DatasetSummary:
    n_patients: int
    n_index_admissions: int
    positive_rate: float
    vocab_sizes: dict
    age_distribution: dict

    def fraction_in(self, groups: Iterable[str]) -> float:
        """Share of index admissions whose age group is in `groups`."""
        return sum(self.age_distribution.get(g, 0.0) for g in groups)

    def to_dict(self) -> dict:
        return {
            "n_patients": self.n_patients,
            "n_index_admissions": self.n_index_admissions,
            "positive_rate": self.positive_rate,
            "vocab_sizes": dict(self.vocab_sizes),
            "age_distribution": dict(self.age_distribution),
        }


def summarize(cohort: CohortDataset, schema: Schema) -> DatasetSummary:
    index = cohort.index_records()
    n = len(index)
    positives = sum(cohort.labels[r.admission_id] for r in index)
    vocab = {}
    for facet in schema.facets:
        values = set()
        for r in index:
            v = facet_value(r, facet)
            if facet.arity is Arity.MULTI:
                values.update(v)
            elif v is not None:
                values.add(v)
        vocab[facet.name] = len(values)
    ages = defaultdict(int)
    for r in index:
        ages[r.age_group if r.age_group is not None else "missing"] += 1
    age_distribution = {k: float(Fraction(c, n)) for k, c in sorted(ages.items())}
    return DatasetSummary(
        n_patients=len({r.patient_id for r in cohort.records}),
        n_index_admissions=n,
        positive_rate=float(Fraction(positives, n)) if n else 0.0,
        vocab_sizes=vocab,
        age_distribution=age_distribution,
    )
