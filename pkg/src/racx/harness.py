"""Human evaluation harness: question sheets, ratings, group agreement.

Aggregation rules the rating scale does not pin down by itself are fixed
here and surfaced in the docs: an item's group verdict is the majority
rating with ties resolved conservatively (toward irrelevant), and the
Jaccard comparison binarizes at informative-or-better.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Dataset, _read_jsonl, _require
from .errors import (BuildError, ConfigurationError, ContractError,
                     CorruptionError, DuplicateRatingError, ParseError,
                     ValidationError)
from .explain import (METHOD_ATTN, METHOD_KD, FeatureExtractor, Snippet,
                      StudentModel, extract_snippets_attn, extract_snippets_kd)
from .metrics import micro_jaccard
from .model import RacModel
from .rng import derive_rng

RATING_LEVELS = ("highly_informative", "informative", "irrelevant")
GROUPS = ("A", "B")
CONSISTENCY_FLOOR = 0.40

# tie rule: among equally common ratings the least favorable one wins
_FAVOR = {"irrelevant": 0, "informative": 1, "highly_informative": 2}


# ----------------------------------------------------------------- sheets

@dataclass(frozen=True)
class SheetItem:
    item_id: str
    note_id: str
    note_text: str
    code: str
    title: str
    method: str
    snippet: Snippet

    def to_dict(self, blinded: bool = False) -> dict:
        out = {
            "item_id": self.item_id,
            "note_id": self.note_id,
            "note_text": self.note_text,
            "code": self.code,
            "title": self.title,
            "snippet": self.snippet.to_dict(),
        }
        if not blinded:
            out["method"] = self.method
        return out


@dataclass
class QuestionSheet:
    sheet_id: str
    items: list[SheetItem]
    config_digest: str

    def __post_init__(self):
        seen = set()
        for item in self.items:
            if item.item_id in seen:
                raise ValidationError(f"duplicate item id '{item.item_id}'")
            seen.add(item.item_id)

    def item_ids(self) -> set[str]:
        return {item.item_id for item in self.items}

    def methods(self) -> list[str]:
        ordered = []
        for item in self.items:
            if item.method not in ordered:
                ordered.append(item.method)
        return sorted(ordered)

    def to_dict(self, blinded: bool = False) -> dict:
        return {
            "sheet_id": self.sheet_id,
            "config_digest": self.config_digest,
            "items": [item.to_dict(blinded) for item in self.items],
        }

    def to_json(self, blinded: bool = False) -> str:
        return json.dumps(self.to_dict(blinded), sort_keys=True)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "QuestionSheet":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CorruptionError(f"sheet file is not valid JSON: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise CorruptionError("sheet file must hold a JSON object")
        for key in ("sheet_id", "config_digest", "items"):
            if key not in data:
                raise CorruptionError(f"sheet file is missing '{key}'")
        items = []
        for raw in data["items"]:
            try:
                snip = raw["snippet"]
                items.append(SheetItem(
                    item_id=raw["item_id"], note_id=raw["note_id"],
                    note_text=raw["note_text"], code=raw["code"],
                    title=raw["title"], method=raw["method"],
                    snippet=Snippet(raw["note_id"], raw["code"], raw["method"],
                                    snip["start"], snip["end"], snip["text"],
                                    snip["score"])))
            except (KeyError, TypeError) as exc:
                raise CorruptionError(f"malformed sheet item: {exc}") from exc
        return cls(data["sheet_id"], items, data["config_digest"])


def _even_allocation(n_items: int, methods: Sequence[str]) -> dict[str, int]:
    base, extra = divmod(n_items, len(methods))
    return {m: base + (1 if i < extra else 0) for i, m in enumerate(methods)}


def build_question_sheet(dataset: Dataset, model: RacModel, n_items: int,
                         methods: Sequence[str] = (METHOD_ATTN, METHOD_KD),
                         students: Sequence[StudentModel] | None = None,
                         extractor: FeatureExtractor | None = None,
                         threshold: float = 0.5, window: int = 12,
                         seed: int = 0, sheet_id: str | None = None
                         ) -> QuestionSheet:
    """Sample confident (note, code) pairs and attach one top snippet each.

    Items are split evenly across the requested methods (method order gets
    the remainder) and their serving order is a seeded shuffle.
    """
    if n_items < 1:
        raise ConfigurationError(f"n_items must be at least 1, got {n_items}")
    if not methods:
        raise ConfigurationError("at least one explanation method is required")
    for m in methods:
        if m not in (METHOD_ATTN, METHOD_KD):
            raise ConfigurationError(f"unknown explanation method '{m}'")
    if len(set(methods)) != len(methods):
        raise ConfigurationError("duplicate entries in methods")
    if METHOD_KD in methods and (students is None or extractor is None):
        raise ContractError("kd items need distilled students and their extractor")
    if not dataset:
        raise ContractError("cannot build a sheet from an empty dataset")

    code_vocab = model.code_vocab
    confident = []
    for note in dataset:
        pred = model.forward(note)
        for idx, entry in enumerate(code_vocab.entries):
            if pred.probabilities[idx] >= threshold:
                confident.append((note, pred, entry))

    allocation = _even_allocation(n_items, methods)
    chosen: list[tuple] = []
    for method in methods:
        candidates = []
        for note, pred, entry in confident:
            # default top_n, so the stored snippet is exactly the first
            # one a serving endpoint would return for the same pair (kd
            # aggregation depends on how many contributions are summed)
            if method == METHOD_ATTN:
                snips = extract_snippets_attn(pred, note, entry.code, code_vocab,
                                              window=window).snippets
            else:
                snips = extract_snippets_kd(students, extractor, note,
                                            entry.code).snippets
            if snips:
                candidates.append((note, entry, snips[0]))
        need = allocation[method]
        if len(candidates) < need:
            raise BuildError(
                f"method '{method}' needs {need} items but only "
                f"{len(candidates)} confident predictions are available")
        rng = derive_rng(seed, "sheet", method)
        picks = sorted(rng.choice(len(candidates), size=need, replace=False))
        chosen.extend((method, *candidates[i]) for i in picks)

    order = derive_rng(seed, "sheet", "order").permutation(len(chosen))
    config = json.dumps({
        "methods": list(methods), "n_items": n_items, "seed": seed,
        "threshold": threshold, "window": window,
        "codes": code_vocab.digest(),
        "notes": sorted(n.id for n in dataset),
    }, sort_keys=True)
    digest = hashlib.sha256(config.encode("utf-8")).hexdigest()
    if sheet_id is None:
        sheet_id = f"sheet-{digest[:8]}"

    items = []
    for pos, src in enumerate(order):
        method, note, entry, snippet = chosen[src]
        items.append(SheetItem(
            item_id=f"i{pos:03d}", note_id=note.id, note_text=note.text,
            code=entry.code, title=entry.title, method=method, snippet=snippet))
    return QuestionSheet(sheet_id, items, digest)


# ---------------------------------------------------------------- ratings

@dataclass(frozen=True)
class RatingRecord:
    sheet_id: str
    item_id: str
    annotator_id: str
    group: str
    rating: str
    timestamp: str = ""
    replaces: bool = False

    def __post_init__(self):
        if self.rating not in RATING_LEVELS:
            raise ValidationError(
                f"rating must be one of {', '.join(RATING_LEVELS)}; "
                f"got '{self.rating}'")
        if self.group not in GROUPS:
            raise ValidationError(f"group must be A or B, got '{self.group}'")
        for name in ("sheet_id", "item_id", "annotator_id"):
            if not getattr(self, name):
                raise ValidationError(f"{name} must not be empty")

    def to_dict(self) -> dict:
        return {
            "sheet_id": self.sheet_id, "item_id": self.item_id,
            "annotator_id": self.annotator_id, "group": self.group,
            "rating": self.rating, "timestamp": self.timestamp,
            "replaces": self.replaces,
        }


def _record_from(obj: dict, lineno: int) -> RatingRecord:
    kwargs = {}
    for name in ("sheet_id", "item_id", "annotator_id", "group", "rating"):
        kwargs[name] = _require(obj, name, str, lineno)
    kwargs["timestamp"] = obj.get("timestamp", "")
    kwargs["replaces"] = bool(obj.get("replaces", False))
    try:
        return RatingRecord(**kwargs)
    except ValidationError as exc:
        raise ParseError(str(exc), line=lineno) from exc


class RatingStore:
    """Append-only JSONL store; one writer at a time, reads see whole lines."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def records(self, sheet_id: str | None = None) -> list[RatingRecord]:
        if not self.path.exists():
            return []
        out = [_record_from(obj, lineno) for lineno, obj in _read_jsonl(self.path)]
        if sheet_id is not None:
            out = [r for r in out if r.sheet_id == sheet_id]
        return out

    def append(self, record: RatingRecord, overwrite: bool = False) -> RatingRecord:
        with self._lock:
            key = (record.sheet_id, record.item_id, record.annotator_id)
            existing = {(r.sheet_id, r.item_id, r.annotator_id) for r in self.records()}
            duplicate = key in existing
            if duplicate and not overwrite:
                raise DuplicateRatingError(
                    f"annotator '{record.annotator_id}' already rated item "
                    f"'{record.item_id}'; resubmit with overwrite to replace")
            stamp = record.timestamp or datetime.now(timezone.utc).isoformat(
                timespec="seconds")
            final = replace(record, timestamp=stamp, replaces=duplicate)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(final.to_dict(), sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            return final


def effective_ratings(records: Iterable[RatingRecord]
                      ) -> dict[tuple[str, str], RatingRecord]:
    """Collapse the append log: the last record per (item, annotator) wins."""
    out: dict[tuple[str, str], RatingRecord] = {}
    for record in records:
        out[(record.item_id, record.annotator_id)] = record
    return out


def majority_label(labels: Sequence[str]) -> str:
    if not labels:
        raise ContractError("majority of an empty label set is undefined")
    counts: dict[str, int] = {}
    for label in labels:
        if label not in RATING_LEVELS:
            raise ValidationError(f"unknown rating '{label}'")
        counts[label] = counts.get(label, 0) + 1
    top = max(counts.values())
    tied = [label for label, c in counts.items() if c == top]
    return min(tied, key=lambda l: _FAVOR[l])


@dataclass
class GroupDistribution:
    group: str
    item_labels: dict[str, str]
    counts: dict[str, int]
    proportions: dict[str, float]


def group_distribution(records: Iterable[RatingRecord], group: str
                       ) -> GroupDistribution:
    group_records = [r for r in records if r.group == group]
    if not group_records:
        raise ContractError(f"no ratings recorded for group '{group}'")
    per_item: dict[str, list[str]] = {}
    for record in effective_ratings(group_records).values():
        per_item.setdefault(record.item_id, []).append(record.rating)
    item_labels = {item: majority_label(sorted(votes))
                   for item, votes in per_item.items()}
    counts = {level: 0 for level in RATING_LEVELS}
    for label in item_labels.values():
        counts[label] += 1
    n = len(item_labels)
    proportions = {level: counts[level] / n for level in RATING_LEVELS}
    return GroupDistribution(group, item_labels, counts, proportions)


# ------------------------------------------------------------- consistency

def _jaccard(a: set, b: set) -> float:
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


@dataclass
class ConsistencyReport:
    group_a: str
    group_b: str
    set_a: list[str]
    set_b: list[str]
    jaccard: float
    per_method: dict[str, float]
    histograms: dict[str, dict[str, int]]
    below_threshold: bool

    def to_json(self) -> str:
        return json.dumps({
            "groups": [self.group_a, self.group_b],
            "informative_or_better": {self.group_a: self.set_a,
                                      self.group_b: self.set_b},
            "jaccard": self.jaccard,
            "per_method": self.per_method,
            "histograms": self.histograms,
            "below_threshold": self.below_threshold,
            "threshold": CONSISTENCY_FLOOR,
        }, sort_keys=True)


def inter_group_consistency(records: Iterable[RatingRecord],
                            sheet: QuestionSheet,
                            group_a: str = "A", group_b: str = "B"
                            ) -> ConsistencyReport:
    records = list(records)
    known = sheet.item_ids()
    for record in records:
        if record.item_id not in known:
            raise ContractError(
                f"rating references unknown item '{record.item_id}'")
    dist_a = group_distribution(records, group_a)
    dist_b = group_distribution(records, group_b)
    covered_a = set(dist_a.item_labels)
    covered_b = set(dist_b.item_labels)
    if not covered_a & covered_b:
        raise ContractError("the two groups rated disjoint item sets")

    def informative(dist: GroupDistribution) -> set[str]:
        return {item for item, label in dist.item_labels.items()
                if label != "irrelevant"}

    set_a, set_b = informative(dist_a), informative(dist_b)
    overall = _jaccard(set_a, set_b)
    per_method = {}
    for method in sheet.methods():
        ids = {item.item_id for item in sheet.items if item.method == method}
        per_method[method] = _jaccard(set_a & ids, set_b & ids)
    return ConsistencyReport(
        group_a=group_a, group_b=group_b,
        set_a=sorted(set_a), set_b=sorted(set_b), jaccard=overall,
        per_method=per_method,
        histograms={group_a: dist_a.counts, group_b: dist_b.counts},
        below_threshold=overall < CONSISTENCY_FLOOR)


# ---------------------------------------------------------- human baseline

@dataclass(frozen=True)
class CoderAnnotation:
    note_id: str
    coder_id: str
    codes: frozenset[str]

    def to_dict(self) -> dict:
        return {"note_id": self.note_id, "coder_id": self.coder_id,
                "codes": sorted(self.codes)}


def load_coder_annotations(path: str | Path,
                           code_vocab=None) -> list[CoderAnnotation]:
    out = []
    for lineno, obj in _read_jsonl(path):
        note_id = _require(obj, "note_id", str, lineno)
        coder_id = _require(obj, "coder_id", str, lineno)
        codes = _require(obj, "codes", list, lineno)
        for code in codes:
            if not isinstance(code, str):
                raise ParseError("codes must be strings", line=lineno)
            if code_vocab is not None and code not in code_vocab:
                raise ValidationError(f"line {lineno}: unknown code '{code}'")
        out.append(CoderAnnotation(note_id, coder_id, frozenset(codes)))
    return out


def save_coder_annotations(annotations: Iterable[CoderAnnotation],
                           path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for ann in annotations:
            fh.write(json.dumps(ann.to_dict(), sort_keys=True) + "\n")


UNDEFINED = "undefined"


@dataclass
class BaselineReport:
    human_micro_jaccard: float
    system_micro_jaccard: float
    ratio: float | None
    n_annotations: int
    n_notes: int

    def to_json(self) -> str:
        ratio = self.ratio if self.ratio is not None else UNDEFINED
        return json.dumps({
            "human_micro_jaccard": self.human_micro_jaccard,
            "system_micro_jaccard": self.system_micro_jaccard,
            "ratio": ratio,
            "n_annotations": self.n_annotations,
            "n_notes": self.n_notes,
        }, sort_keys=True)


def human_baseline_compare(annotations: Sequence[CoderAnnotation],
                           reference: Mapping[str, frozenset | set],
                           predicted: Mapping[str, frozenset | set]
                           ) -> BaselineReport:
    """Micro-Jaccard of pooled coder annotations and of the system, both
    against the same reference, plus their ratio."""
    if not annotations:
        raise ContractError("no coder annotations supplied")
    missing_ref = sorted({a.note_id for a in annotations} - set(reference))
    if missing_ref:
        raise ContractError(
            f"notes missing from the reference: {', '.join(missing_ref)}")
    missing_pred = sorted({a.note_id for a in annotations} - set(predicted))
    if missing_pred:
        raise ContractError(
            f"notes missing from the predictions: {', '.join(missing_pred)}")

    human_pairs = [(set(a.codes), set(reference[a.note_id])) for a in annotations]
    human_mj = micro_jaccard([p for p, _ in human_pairs],
                             [g for _, g in human_pairs])
    note_ids = sorted({a.note_id for a in annotations})
    system_mj = micro_jaccard([set(predicted[n]) for n in note_ids],
                              [set(reference[n]) for n in note_ids])
    ratio = None if human_mj == 0 else system_mj / human_mj
    return BaselineReport(human_mj, system_mj, ratio,
                          len(annotations), len(note_ids))
