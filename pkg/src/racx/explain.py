"""Evidence extraction: attention snippets, distilled linear students, fidelity.

Attention snippets rank token peaks and report the peak's sentence clipped to
a token window. Students regress the teacher's per-code logits on tf-idf
n-gram vectors; their positive feature contributions map back to sentences.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import CodeVocabulary, Dataset, Note, segment_sentences, tokenize
from .errors import (ConfigurationError, ContractError, CorruptionError,
                     ParseError, ValidationError)
from .model import CodePrediction, RacModel
from .rng import derive_rng

METHOD_ATTN = "attn"
METHOD_KD = "kd"


@dataclass(frozen=True)
class Snippet:
    note_id: str
    code: str
    method: str
    start: int
    end: int
    text: str
    score: float

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end,
                "text": self.text, "score": self.score}


@dataclass
class ExplanationSet:
    note_id: str
    code: str
    method: str
    snippets: list[Snippet]

    def to_json(self) -> str:
        return json.dumps({
            "note_id": self.note_id, "code": self.code, "method": self.method,
            "snippets": [s.to_dict() for s in self.snippets]}, sort_keys=True)


def _sentence_of(note: Note, char_pos: int) -> tuple[int, int]:
    for s, e in note.sentences:
        if s <= char_pos < e:
            return s, e
    raise ContractError(f"character {char_pos} falls outside every sentence")


def extract_snippets_attn(prediction: CodePrediction, note: Note, code: str,
                          code_vocab: CodeVocabulary, window: int = 12,
                          top_n: int = 3) -> ExplanationSet:
    if top_n < 1:
        raise ConfigurationError(f"top_n must be at least 1, got {top_n}")
    if window < 0:
        raise ConfigurationError(f"window must not be negative, got {window}")
    if code not in code_vocab:
        raise ValidationError(f"unknown code '{code}'")
    row = prediction.attention[code_vocab.index[code]]
    spans = prediction.token_spans
    if len(row) != len(spans):
        raise ContractError(
            f"attention row covers {len(row)} tokens, spans cover {len(spans)}")

    # one candidate per token: its sentence clipped to +-window tokens
    candidates = []
    for t in range(len(spans)):
        sent_start, sent_end = _sentence_of(note, spans[t][0])
        lo = spans[max(0, t - window)][0]
        hi = spans[min(len(spans) - 1, t + window)][1]
        start, end = max(sent_start, lo), min(sent_end, hi)
        score = sum(row[i] for i in range(len(spans))
                    if start <= spans[i][0] and spans[i][1] <= end)
        candidates.append((float(score), start, end))

    # highest score wins a region; ties go to the earlier start
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    chosen: list[tuple[float, int, int]] = []
    for score, start, end in candidates:
        if any(start < e and s < end for _, s, e in chosen):
            continue
        chosen.append((score, start, end))
        if len(chosen) == top_n:
            break
    snippets = [Snippet(note.id, code, METHOD_ATTN, s, e, note.text[s:e], score)
                for score, s, e in chosen]
    return ExplanationSet(note.id, code, METHOD_ATTN, snippets)


# ------------------------------------------------------------------ features

def _note_ngrams(note_text: str) -> list[tuple[str, int]]:
    """(feature, first char offset) pairs; bigrams never cross sentences."""
    tokens = tokenize(note_text)
    bounds = segment_sentences(note_text)

    def sentence_index(pos: int) -> int:
        for k, (s, e) in enumerate(bounds):
            if s <= pos < e:
                return k
        return -1

    grams: list[tuple[str, int]] = []
    for i, tok in enumerate(tokens):
        grams.append((tok.text, tok.start))
        if i + 1 < len(tokens):
            nxt = tokens[i + 1]
            if sentence_index(tok.start) == sentence_index(nxt.start):
                grams.append((f"{tok.text} {nxt.text}", tok.start))
    return grams


class FeatureExtractor:
    """Unigram+bigram tf-idf vectorizer with a deterministic feature order."""

    def __init__(self, features: Sequence[str], idf: Sequence[float],
                 max_features: int):
        if len(features) != len(idf):
            raise ContractError(
                f"{len(features)} features but {len(idf)} idf weights")
        if any(w < 0 for w in idf):
            raise ValidationError("idf weights must not be negative")
        self.features = list(features)
        self.idf = np.asarray(idf, dtype=np.float64)
        self.max_features = max_features
        self.index = {f: i for i, f in enumerate(self.features)}

    def __len__(self) -> int:
        return len(self.features)

    def vector(self, text: str) -> dict[int, float]:
        """Sparse L2-normalized tf-idf vector keyed by feature index."""
        counts: dict[int, int] = {}
        for gram, _ in _note_ngrams(text):
            idx = self.index.get(gram)
            if idx is not None:
                counts[idx] = counts.get(idx, 0) + 1
        if not counts:
            return {}
        weighted = {i: c * self.idf[i] for i, c in counts.items()}
        norm = math.sqrt(sum(v * v for v in weighted.values()))
        return {i: v / norm for i, v in weighted.items()}

    def digest(self) -> str:
        h = hashlib.sha256()
        for f, w in zip(self.features, self.idf):
            h.update(f"{f}\t{w!r}\n".encode("utf-8"))
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        payload = {"max_features": self.max_features,
                   "features": self.features,
                   "idf": [float(w) for w in self.idf]}
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureExtractor":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(payload["features"], payload["idf"], payload["max_features"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorruptionError(f"unreadable feature extractor file: {exc}") from exc


def build_feature_extractor(dataset: Dataset, max_features: int = 20000
                            ) -> FeatureExtractor:
    if not dataset:
        raise ContractError("feature extraction requires a non-empty dataset")
    if max_features < 1:
        raise ConfigurationError("max_features must be at least 1")
    df: dict[str, int] = {}
    for note in dataset:
        for gram in {g for g, _ in _note_ngrams(note.text)}:
            df[gram] = df.get(gram, 0) + 1
    ranked = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))[:max_features]
    n = len(dataset)
    features = [gram for gram, _ in ranked]
    idf = [math.log((1 + n) / (1 + cnt)) + 1.0 for _, cnt in ranked]
    return FeatureExtractor(features, idf, max_features)


# ------------------------------------------------------------------ students

@dataclass
class StudentModel:
    code: str
    weights: np.ndarray
    bias: float
    loss: float = 0.0
    diverged: bool = False


@dataclass(frozen=True)
class KdConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.5
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must not be negative")


def teacher_logits(teacher: RacModel, dataset: Dataset) -> np.ndarray:
    return np.stack([teacher.forward(note).logits for note in dataset])


def feature_matrix(extractor: FeatureExtractor, dataset: Dataset) -> np.ndarray:
    x = np.zeros((len(dataset), len(extractor)))
    for i, note in enumerate(dataset):
        for j, v in extractor.vector(note.text).items():
            x[i, j] = v
    return x


def _fit_block(x: np.ndarray, z: np.ndarray, config: KdConfig
               ) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[0]
    w = np.zeros((x.shape[1], z.shape[1]))
    b = np.zeros(z.shape[1])
    for epoch in range(config.epochs):
        order = derive_rng(config.seed, "kd", epoch).permutation(n)
        for start in range(0, n, config.batch_size):
            rows = order[start:start + config.batch_size]
            xb, zb = x[rows], z[rows]
            err = xb @ w + b - zb
            grad_w = (2.0 / len(rows)) * xb.T @ err + 2.0 * config.weight_decay * w
            grad_b = (2.0 / len(rows)) * err.sum(axis=0)
            w = w - config.learning_rate * grad_w
            b = b - config.learning_rate * grad_b
    return w, b


def distill(teacher: RacModel, dataset: Dataset, extractor: FeatureExtractor,
            config: KdConfig = KdConfig(), jobs: int = 1) -> list[StudentModel]:
    """Fit one linear student per code against the teacher's logits.

    The per-code least-squares problems share no terms, so they are solved as
    one vectorized descent over a stacked weight matrix; this is numerically
    identical to training each student separately with the same batch order.
    jobs > 1 partitions the code dimension across worker threads (the matmuls
    release the interpreter lock); results are independent of the partition
    up to float rounding in the underlying BLAS.
    """
    if not dataset:
        raise ContractError("distillation requires a non-empty dataset")
    if jobs < 1:
        raise ConfigurationError(f"jobs must be at least 1, got {jobs}")
    x = feature_matrix(extractor, dataset)
    z = teacher_logits(teacher, dataset)
    n_features = x.shape[1]
    n_codes = z.shape[1]
    if jobs == 1 or n_codes == 1:
        w, b = _fit_block(x, z, config)
    else:
        chunks = np.array_split(np.arange(n_codes), min(jobs, n_codes))
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(lambda c: _fit_block(x, z[:, c], config), chunks))
        w = np.hstack([p[0] for p in parts])
        b = np.concatenate([p[1] for p in parts])

    students = []
    residual = x @ w + b - z
    for l, entry in enumerate(teacher.code_vocab.entries):
        col_w, col_b = w[:, l], float(b[l])
        bad = not (np.all(np.isfinite(col_w)) and np.isfinite(col_b))
        if bad:
            col_w, col_b = np.zeros(n_features), 0.0
            loss = float("inf")
        else:
            loss = float(np.mean(residual[:, l] ** 2))
        students.append(StudentModel(entry.code, col_w, col_b, loss, bad))
    return students


def student_logit(student: StudentModel, vector: Mapping[int, float]) -> float:
    return student.bias + sum(student.weights[i] * v for i, v in vector.items())


def student_predict(students: Sequence[StudentModel], extractor: FeatureExtractor,
                    note: Note) -> np.ndarray:
    vec = extractor.vector(note.text)
    logits = np.array([student_logit(s, vec) for s in students])
    return 1.0 / (1.0 + np.exp(-np.clip(logits, -500, 500)))


def extract_snippets_kd(students: Sequence[StudentModel], extractor: FeatureExtractor,
                        note: Note, code: str, top_n: int = 3) -> ExplanationSet:
    if top_n < 1:
        raise ConfigurationError(f"top_n must be at least 1, got {top_n}")
    by_code = {s.code: s for s in students}
    student = by_code.get(code)
    if student is None:
        raise ContractError(f"no student model for code '{code}'")
    vec = extractor.vector(note.text)
    first_pos: dict[int, int] = {}
    for gram, pos in _note_ngrams(note.text):
        idx = extractor.index.get(gram)
        if idx is not None and idx not in first_pos:
            first_pos[idx] = pos
    contributions = []
    for idx, value in vec.items():
        c = student.weights[idx] * value
        if c > 0 and idx in first_pos:
            contributions.append((float(c), first_pos[idx], idx))
    contributions.sort(key=lambda t: (-t[0], t[1], t[2]))

    per_sentence: dict[tuple[int, int], float] = {}
    for c, pos, _ in contributions[:top_n]:
        sent = _sentence_of(note, pos)
        per_sentence[sent] = per_sentence.get(sent, 0.0) + c
    ordered = sorted(per_sentence.items(), key=lambda kv: (-kv[1], kv[0][0]))
    snippets = [Snippet(note.id, code, METHOD_KD, s, e, note.text[s:e], score)
                for (s, e), score in ordered]
    return ExplanationSet(note.id, code, METHOD_KD, snippets)


# ------------------------------------------------------------------ fidelity

UNDEFINED = "undefined"


@dataclass
class FidelityReport:
    per_code: dict[str, dict]
    macro_correlation: float | None
    macro_agreement: float | None
    eligible_codes: list[str]
    min_positives: int

    def to_json(self) -> str:
        per_code = {}
        for code, cell in sorted(self.per_code.items()):
            out = dict(cell)
            if out["correlation"] is None:
                out["correlation"] = UNDEFINED
            per_code[code] = out
        macro = self.macro_correlation if self.macro_correlation is not None else UNDEFINED
        return json.dumps({
            "per_code": per_code,
            "macro_correlation": macro,
            "macro_agreement": self.macro_agreement,
            "eligible_codes": self.eligible_codes,
            "min_positives": self.min_positives,
        }, sort_keys=True)


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return None
    return float(da @ db / denom)


def fidelity(teacher: RacModel, students: Sequence[StudentModel],
             extractor: FeatureExtractor, dataset: Dataset,
             threshold: float = 0.5, min_positives: int = 5) -> FidelityReport:
    if not dataset:
        raise ContractError("fidelity requires a non-empty dataset")
    codes = [e.code for e in teacher.code_vocab.entries]
    if [s.code for s in students] != codes:
        raise ContractError("student codes do not align with the teacher's space")
    t_logits = teacher_logits(teacher, dataset)
    s_logits = np.zeros_like(t_logits)
    for i, note in enumerate(dataset):
        vec = extractor.vector(note.text)
        s_logits[i] = [student_logit(s, vec) for s in students]
    logit_tau = math.log(threshold / (1.0 - threshold))
    per_code: dict[str, dict] = {}
    eligible = []
    for l, code in enumerate(codes):
        corr = _pearson(t_logits[:, l], s_logits[:, l])
        t_dec = t_logits[:, l] >= logit_tau
        s_dec = s_logits[:, l] >= logit_tau
        agreement = float(np.mean(t_dec == s_dec))
        positives = int(t_dec.sum())
        per_code[code] = {"correlation": corr, "agreement": agreement,
                          "teacher_positives": positives}
        if positives >= min_positives:
            eligible.append(code)
    defined = [per_code[c]["correlation"] for c in eligible
               if per_code[c]["correlation"] is not None]
    macro_corr = float(np.mean(defined)) if defined else None
    macro_agree = (float(np.mean([per_code[c]["agreement"] for c in eligible]))
                   if eligible else None)
    return FidelityReport(per_code, macro_corr, macro_agree, eligible, min_positives)


# ---------------------------------------------------------------- persistence

def save_students(students: Sequence[StudentModel], extractor_digest: str,
                  path: str | Path, prune_ratio: float = 0.01) -> None:
    """Write the students JSONL; weights below prune_ratio * max|w| are dropped."""
    if not 0.0 <= prune_ratio < 1.0:
        raise ConfigurationError("prune_ratio must lie in [0, 1)")
    lines = [json.dumps({"feature_extractor_digest": extractor_digest,
                         "students": len(students)}, sort_keys=True)]
    for s in students:
        cutoff = prune_ratio * float(np.max(np.abs(s.weights))) if len(s.weights) else 0.0
        kept = [[int(i), float(s.weights[i])] for i in np.nonzero(s.weights)[0]
                if abs(s.weights[i]) >= cutoff and s.weights[i] != 0.0]
        lines.append(json.dumps({
            "code": s.code, "bias": float(s.bias), "weights": kept,
            "loss": s.loss if math.isfinite(s.loss) else UNDEFINED,
            "diverged": s.diverged}, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# Students are only usable next to the extractor that defines their feature
# space, so the two are stored as one directory.
STUDENTS_FILE = "students.jsonl"
EXTRACTOR_FILE = "extractor.json"


def save_student_bundle(students: Sequence[StudentModel],
                        extractor: FeatureExtractor, directory: str | Path,
                        prune_ratio: float = 0.01) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    extractor.save(directory / EXTRACTOR_FILE)
    save_students(students, extractor.digest(), directory / STUDENTS_FILE,
                  prune_ratio=prune_ratio)


def load_student_bundle(directory: str | Path
                        ) -> tuple[list[StudentModel], FeatureExtractor]:
    directory = Path(directory)
    for name in (STUDENTS_FILE, EXTRACTOR_FILE):
        if not (directory / name).exists():
            raise ValidationError(f"student directory is missing {name}")
    extractor = FeatureExtractor.load(directory / EXTRACTOR_FILE)
    students, _ = load_students(directory / STUDENTS_FILE, len(extractor),
                                expected_digest=extractor.digest())
    return students, extractor


def load_students(path: str | Path, feature_count: int,
                  expected_digest: str | None = None
                  ) -> tuple[list[StudentModel], str]:
    raw = Path(path).read_text(encoding="utf-8").splitlines()
    if not raw:
        raise ParseError("students file is empty", 1)
    try:
        header = json.loads(raw[0])
        digest = header["feature_extractor_digest"]
    except (json.JSONDecodeError, TypeError, KeyError) as exc:
        raise ParseError(f"bad students header: {exc}", 1) from exc
    if expected_digest is not None and digest != expected_digest:
        raise ValidationError(
            "students were fit against a different feature extractor "
            f"({digest[:12]}... vs {expected_digest[:12]}...)")
    students = []
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            weights = np.zeros(feature_count)
            for i, v in obj["weights"]:
                if not 0 <= int(i) < feature_count:
                    raise ValidationError(
                        f"feature index {i} outside the {feature_count}-feature space")
                weights[int(i)] = float(v)
            loss = obj.get("loss", 0.0)
            loss = float("inf") if loss == UNDEFINED else float(loss)
            students.append(StudentModel(obj["code"], weights, float(obj["bias"]),
                                         loss, bool(obj.get("diverged", False))))
        except (json.JSONDecodeError, TypeError, KeyError, ValueError) as exc:
            raise ParseError(f"bad student record: {exc}", lineno) from exc
    return students, digest
