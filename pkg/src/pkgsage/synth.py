"""Synthetic cohorts drawn from a logistic model with a planted signal, and
the exact Bayes-optimal accuracy for that model."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Optional

import numpy as np

from .errors import InvalidInput, OracleTooLarge
from .ingest import CODE_FIELDS, AdmissionRecord, CohortDataset, label_readmissions
from .schema import CLINICAL_FACETS, SOCIAL_FACETS

MAX_COMBINATIONS = 10**6


@dataclass
class SyntheticConfig:
    """`facet_vocab` maps a single-valued facet to its category list, and a
    clinical facet to ``{"pool": [codes], "length": [lo, hi]}``.
    `signal_weights` maps facet → {value or code: logit weight}."""

    n_patients: int
    seed: int = 0
    facet_vocab: dict = field(default_factory=dict)
    signal_weights: dict = field(default_factory=dict)
    bias: float = 0.0
    missingness: dict = field(default_factory=dict)
    readmit_gap_days: tuple = (1, 30)
    negative_followup_rate: float = 0.5
    negative_gap_days: tuple = (31, 365)
    note_mentions: dict = field(default_factory=dict)
    note_rate: float = 0.0

    def __post_init__(self):
        if self.n_patients < 0:
            raise InvalidInput("n_patients must be >= 0")
        for facet, spec in self.facet_vocab.items():
            if isinstance(spec, dict):
                lo, hi = spec["length"]
                if not spec["pool"] or not 0 <= lo <= hi <= len(spec["pool"]):
                    raise InvalidInput(f"bad code pool/length for {facet!r}")
            elif not spec:
                raise InvalidInput(f"empty vocabulary for {facet!r}")
        for facet, rate in self.missingness.items():
            if not 0.0 <= rate <= 1.0:
                raise InvalidInput(f"missingness for {facet!r} must lie in [0, 1]")
        lo, hi = self.readmit_gap_days
        if not 1 <= lo <= hi <= 30:
            raise InvalidInput("readmit_gap_days must lie within [1, 30]")
        lo, hi = self.negative_gap_days
        if not 30 < lo <= hi:
            raise InvalidInput("negative_gap_days must start after day 30")
        self.readmit_gap_days = tuple(self.readmit_gap_days)
        self.negative_gap_days = tuple(self.negative_gap_days)

    def is_multi(self, facet: str) -> bool:
        return isinstance(self.facet_vocab[facet], dict)

    def weight(self, facet: str, value: str) -> float:
        return float(self.signal_weights.get(facet, {}).get(value, 0.0))

    def to_dict(self) -> dict:
        return {
            "n_patients": self.n_patients, "seed": self.seed,
            "facet_vocab": self.facet_vocab, "signal_weights": self.signal_weights,
            "bias": self.bias, "missingness": self.missingness,
            "readmit_gap_days": list(self.readmit_gap_days),
            "negative_followup_rate": self.negative_followup_rate,
            "negative_gap_days": list(self.negative_gap_days),
            "note_mentions": self.note_mentions, "note_rate": self.note_rate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInput(f"unknown synthetic config keys {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "SyntheticConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _draw_patient(cfg: SyntheticConfig, i: int):
    rng = np.random.default_rng([cfg.seed, i])
    values = {}
    logit = cfg.bias
    for facet, spec in cfg.facet_vocab.items():
        if isinstance(spec, dict):
            lo, hi = spec["length"]
            k = int(rng.integers(lo, hi + 1))
            chosen = sorted(str(c) for c in rng.choice(spec["pool"], size=k, replace=False))
            values[facet] = chosen
            logit += sum(cfg.weight(facet, c) for c in chosen)
        else:
            v = spec[int(rng.integers(len(spec)))]
            values[facet] = v
            logit += cfg.weight(facet, v)
    label = int(rng.random() < _sigmoid(logit))

    # hide values only after the outcome was drawn from them
    hidden = {}
    for facet in cfg.facet_vocab:
        if rng.random() < cfg.missingness.get(facet, 0.0):
            hidden[facet] = values[facet]
            values[facet] = [] if cfg.is_multi(facet) else None

    mentions = []
    for facet, value in hidden.items():
        if isinstance(value, list):
            continue
        phrase = cfg.note_mentions.get(facet, {}).get(value)
        if phrase and rng.random() < cfg.note_rate:
            mentions.append(phrase)

    admit = int(rng.integers(0, 3650))
    if label:
        gap = int(rng.integers(cfg.readmit_gap_days[0], cfg.readmit_gap_days[1] + 1))
    elif rng.random() < cfg.negative_followup_rate:
        gap = int(rng.integers(cfg.negative_gap_days[0], cfg.negative_gap_days[1] + 1))
    else:
        gap = None
    return values, label, mentions, admit, gap


def generate_cohort(cfg: SyntheticConfig) -> CohortDataset:
    """One ICU index admission per patient plus, for readmitted patients, a
    follow-up admission inside the window; labeled via label_readmissions."""
    records = []
    for i in range(cfg.n_patients):
        values, _, mentions, admit, gap = _draw_patient(cfg, i)
        pid = f"P{i:06d}"
        fields, extras = {}, {}
        for facet, v in values.items():
            if facet in CLINICAL_FACETS:
                fields[f"{facet}_codes"] = tuple(v)
            elif facet in AdmissionRecord.__dataclass_fields__:
                fields[facet] = v
            elif v not in (None, []):
                extras[facet] = "|".join(v) if isinstance(v, list) else v
        note = ". ".join(mentions) + "." if mentions else None
        records.append(AdmissionRecord(pid, f"A{i:06d}-1", admit, True, note_text=note,
                                       extras=extras, **fields))
        if gap is not None:
            demo = {k: v for k, v in fields.items()
                    if k not in CODE_FIELDS and k not in SOCIAL_FACETS}
            records.append(AdmissionRecord(pid, f"A{i:06d}-2", admit + gap, False, **demo))
    return label_readmissions(records)


def planted_labels(cfg: SyntheticConfig) -> list[int]:
    """Outcome drawn for each patient, before any file round trip."""
    return [_draw_patient(cfg, i)[1] for i in range(cfg.n_patients)]


# --------------------------------------------------------------------- oracle

def _facet_outcomes(cfg: SyntheticConfig, facet: str) -> dict:
    """Distribution of (observed value, logit contribution) for one facet,
    with exact rational probabilities. Keys are hashable observations."""
    spec = cfg.facet_vocab[facet]
    out = {}
    if isinstance(spec, dict):
        pool = [str(c) for c in spec["pool"]]
        lo, hi = spec["length"]
        for k in range(lo, hi + 1):
            p_len = Fraction(1, hi - lo + 1)
            subsets = list(combinations(sorted(pool), k))
            for sub in subsets:
                w = sum(cfg.weight(facet, c) for c in sub)
                out[sub] = (w, p_len / len(subsets))
    else:
        for v in spec:
            w = cfg.weight(facet, v)
            prev = out.get(v, (w, Fraction(0)))
            out[v] = (w, prev[1] + Fraction(1, len(spec)))
    return out


def _convolve(a: dict, b: dict) -> dict:
    out = defaultdict(float)
    for x, p in a.items():
        for y, q in b.items():
            out[x + y] += p * q
    return dict(out)


def _signal_facets(cfg: SyntheticConfig) -> list[str]:
    return [f for f in cfg.facet_vocab
            if any(w != 0 for w in cfg.signal_weights.get(f, {}).values())]


def combination_count(cfg: SyntheticConfig) -> int:
    total = 1
    for f in _signal_facets(cfg):
        spec = cfg.facet_vocab[f]
        if isinstance(spec, dict):
            lo, hi = spec["length"]
            total *= sum(math.comb(len(spec["pool"]), k) for k in range(lo, hi + 1))
        else:
            total *= len(set(spec))
    return total


def bayes_accuracy(cfg: SyntheticConfig, account_missingness: bool = True) -> float:
    """Expected accuracy of the optimal classifier under the generative model.

    The classifier sees what survives missingness: a hidden single-valued
    facet is absent and a hidden clinical facet looks like an empty code
    list. Facets whose weights are all zero never move the posterior and are
    left out of the enumeration.
    """
    facets = _signal_facets(cfg)
    count = combination_count(cfg)
    if count > MAX_COMBINATIONS:
        raise OracleTooLarge(f"{count} attribute combinations exceed {MAX_COMBINATIONS}")
    visible, hidden_p, hidden = [], [], []
    for f in facets:
        outcomes = _facet_outcomes(cfg, f)
        m = Fraction(cfg.missingness.get(f, 0.0)) if account_missingness else Fraction(0)
        vis, hid = defaultdict(Fraction), defaultdict(Fraction)
        for obs, (w, p) in outcomes.items():
            hid[w] += m * p
            if cfg.is_multi(f) and len(obs) == 0:
                hid[w] += (1 - m) * p
            else:
                vis[w] += (1 - m) * p
        h_total = sum(hid.values(), Fraction(0))
        visible.append({w: float(p) for w, p in vis.items() if p})
        hidden_p.append(float(h_total))
        hidden.append({w: float(p / h_total) for w, p in hid.items() if p} if h_total else {})

    acc = 0.0
    n = len(facets)
    for mask in range(1 << n):
        weight = 1.0
        known = {0.0: 1.0}
        unknown = {0.0: 1.0}
        for j in range(n):
            if mask >> j & 1:
                if hidden_p[j] == 0:
                    break
                weight *= hidden_p[j]
                unknown = _convolve(unknown, hidden[j])
            else:
                if not visible[j]:
                    break
                known = _convolve(known, visible[j])
        else:
            for s, q in known.items():
                e = sum(pu * _sigmoid(cfg.bias + s + u) for u, pu in unknown.items())
                acc += weight * q * max(e, 1.0 - e)
    return acc


def group_positive_rates(cohort: CohortDataset, facet: str) -> dict:
    """Observed readmission rate per category of a single-valued facet."""
    counts = defaultdict(lambda: [0, 0])
    for rec, label in cohort.labeled_pairs():
        v = getattr(rec, facet, None) if facet in AdmissionRecord.__dataclass_fields__ \
            else rec.extras.get(facet)
        counts[v][0] += label
        counts[v][1] += 1
    return {k: (pos / n, n) for k, (pos, n) in counts.items()}
