"""Set-prediction metrics: micro/macro F1, micro-Jaccard, precision@k."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError


def predict_codes(probabilities: np.ndarray, codes: Sequence[str],
                  threshold: float) -> set[str]:
    """Threshold rule with an argmax fallback so every note gets at least one code."""
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError(f"threshold must lie in (0, 1), got {threshold}")
    if len(probabilities) != len(codes):
        raise ContractError(
            f"{len(probabilities)} probabilities for {len(codes)} codes")
    chosen = {codes[i] for i in range(len(codes)) if probabilities[i] >= threshold}
    if not chosen:
        chosen = {codes[int(np.argmax(probabilities))]}
    return chosen


def _check_aligned(predicted: Sequence[set], gold: Sequence[set]) -> None:
    if len(predicted) == 0:
        raise ContractError("empty evaluation set")
    if len(predicted) != len(gold):
        raise ContractError(
            f"{len(predicted)} predictions for {len(gold)} gold sets")


def confusion_counts(predicted: Sequence[set], gold: Sequence[set]
                     ) -> dict[str, tuple[int, int, int]]:
    """Per-code (tp, fp, fn) over all notes, for codes in gold or predicted."""
    _check_aligned(predicted, gold)
    counts: dict[str, list[int]] = {}
    for p, g in zip(predicted, gold):
        for code in p | g:
            c = counts.setdefault(code, [0, 0, 0])
            if code in p and code in g:
                c[0] += 1
            elif code in p:
                c[1] += 1
            else:
                c[2] += 1
    return {code: tuple(c) for code, c in sorted(counts.items())}


def micro_precision_recall_f1(predicted: Sequence[set], gold: Sequence[set]
                              ) -> tuple[float, float, float]:
    counts = confusion_counts(predicted, gold)
    tp = sum(c[0] for c in counts.values())
    fp = sum(c[1] for c in counts.values())
    fn = sum(c[2] for c in counts.values())
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def micro_f1(predicted: Sequence[set], gold: Sequence[set]) -> float:
    return micro_precision_recall_f1(predicted, gold)[2]


def _f1_from(tp: int, fp: int, fn: int) -> float:
    return 2 * tp / (2 * tp + fp + fn) if tp else 0.0


def macro_f1(predicted: Sequence[set], gold: Sequence[set]) -> float:
    """Unweighted mean of per-code F1 over codes seen in gold or predictions.

    A code with no true positives but some confusion contributes 0; codes
    absent from both sides are skipped entirely rather than credited.
    """
    counts = confusion_counts(predicted, gold)
    if not counts:
        # every note had empty prediction and empty gold: vacuous perfection
        return 1.0
    return float(np.mean([_f1_from(*c) for c in counts.values()]))


def micro_jaccard(predicted: Sequence[set], gold: Sequence[set]) -> float:
    _check_aligned(predicted, gold)
    inter = sum(len(p & g) for p, g in zip(predicted, gold))
    union = sum(len(p | g) for p, g in zip(predicted, gold))
    return inter / union if union else 1.0


def precision_at_k(probabilities: Sequence[np.ndarray], gold: Sequence[set],
                   codes: Sequence[str], k: int) -> float:
    _check_aligned(probabilities, gold)
    if k < 1:
        raise ConfigurationError(f"k must be at least 1, got {k}")
    if k > len(codes):
        raise ConfigurationError(f"k={k} exceeds the {len(codes)}-code space")
    total = 0.0
    for probs, g in zip(probabilities, gold):
        if len(probs) != len(codes):
            raise ContractError(
                f"{len(probs)} probabilities for {len(codes)} codes")
        top = sorted(range(len(codes)), key=lambda i: (-probs[i], i))[:k]
        total += sum(1 for i in top if codes[i] in g) / k
    return total / len(probabilities)


@dataclass
class MetricsReport:
    micro_p: float
    micro_r: float
    micro_f1: float
    macro_f1: float
    micro_jaccard: float
    precision_at_k: dict[int, float] = field(default_factory=dict)
    per_code: dict[str, tuple[int, int, int]] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "micro_p": self.micro_p,
            "micro_r": self.micro_r,
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "micro_jaccard": self.micro_jaccard,
            "precision_at_k": {str(k): v for k, v in sorted(self.precision_at_k.items())},
        }, sort_keys=True)

    def per_code_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["code", "tp", "fp", "fn", "f1"])
        for code, (tp, fp, fn) in sorted(self.per_code.items()):
            writer.writerow([code, tp, fp, fn, f"{_f1_from(tp, fp, fn):.6f}"])
        return buf.getvalue()


def compute_report(predicted: Sequence[set], gold: Sequence[set],
                   probabilities: Sequence[np.ndarray] | None = None,
                   codes: Sequence[str] | None = None,
                   ks: Sequence[int] = ()) -> MetricsReport:
    p, r, f1 = micro_precision_recall_f1(predicted, gold)
    at_k: dict[int, float] = {}
    if probabilities is not None and codes is not None:
        for k in ks:
            at_k[int(k)] = precision_at_k(probabilities, gold, codes, k)
    return MetricsReport(p, r, f1, macro_f1(predicted, gold),
                         micro_jaccard(predicted, gold), at_k,
                         confusion_counts(predicted, gold))


def default_ks(label_count: int) -> tuple[int, ...]:
    ks = tuple(k for k in (5, 8) if k <= label_count)
    return ks if ks else (label_count,)
