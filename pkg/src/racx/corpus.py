"""Notes, code vocabularies, tokenization and dataset files.

File formats (UTF-8 JSONL, one object per line):
  dataset:    {"id": str, "text": str, "codes": [str]}
  code vocab: {"code": str, "title": str, "kind": "diagnosis"|"procedure"}
  triggers:   {"note_id": str, "code": str, "start": int, "end": int}

Character offsets throughout the package are Unicode code-point positions
into the original note text.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import ConfigurationError, ParseError, ValidationError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

CODE_KINDS = ("diagnosis", "procedure")

_TOKEN_RE = re.compile(r"[A-Za-z0-9]+")
_SENTENCE_SEPARATORS = frozenset(".!?\n")


class Token(NamedTuple):
    text: str
    start: int
    end: int


def tokenize(text: str) -> list[Token]:
    """Lowercased alphanumeric word tokens, each with its source span."""
    return [Token(m.group(0).lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def segment_sentences(text: str) -> list[tuple[int, int]]:
    """Split on . ! ? and newline; segments are trimmed of edge whitespace."""
    ranges: list[tuple[int, int]] = []

    def close(start: int, end: int) -> None:
        while start < end and text[start].isspace():
            start += 1
        while end > start and text[end - 1].isspace():
            end -= 1
        if start < end:
            ranges.append((start, end))

    run_start: int | None = None
    for i, ch in enumerate(text):
        if ch in _SENTENCE_SEPARATORS:
            if run_start is not None:
                close(run_start, i)
                run_start = None
        elif run_start is None:
            run_start = i
    if run_start is not None:
        close(run_start, len(text))
    return ranges


@dataclass(frozen=True)
class CodeEntry:
    code: str
    title: str
    kind: str


class CodeVocabulary:
    """Fixed, ordered universe of codes; order defines the label dimension."""

    def __init__(self, entries: Iterable[CodeEntry]):
        self.entries: list[CodeEntry] = list(entries)
        self.index: dict[str, int] = {}
        for pos, entry in enumerate(self.entries):
            if not entry.code:
                raise ValidationError("empty code identifier")
            if entry.code in self.index:
                raise ValidationError(f"duplicate code '{entry.code}'")
            if entry.kind not in CODE_KINDS:
                raise ValidationError(f"code '{entry.code}': unknown kind '{entry.kind}'")
            if not entry.title or not tokenize(entry.title):
                raise ValidationError(f"code '{entry.code}': title has no encodable tokens")
            self.index[entry.code] = pos

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, code: str) -> bool:
        return code in self.index

    def titles(self) -> list[str]:
        return [e.title for e in self.entries]

    def digest(self) -> str:
        h = hashlib.sha256()
        for e in self.entries:
            h.update(f"{e.code}\t{e.title}\t{e.kind}\n".encode("utf-8"))
        return h.hexdigest()


class Note:
    """One clinical document with its gold code set and derived sentence ranges."""

    def __init__(self, note_id: str, text: str, gold_codes: Iterable[str]):
        self.id = note_id
        self.text = text
        self.gold_codes = frozenset(gold_codes)
        self.sentences = segment_sentences(text)

    def __repr__(self) -> str:
        return f"Note(id={self.id!r}, codes={sorted(self.gold_codes)})"

    def __eq__(self, other) -> bool:
        return (isinstance(other, Note) and self.id == other.id
                and self.text == other.text and self.gold_codes == other.gold_codes)


Dataset = list[Note]


class TokenVocabulary:
    """Dense token ids with reserved pad=0 and unknown=1."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens: list[str] = list(tokens)
        if self.tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            self.tokens = [PAD_TOKEN, UNK_TOKEN] + self.tokens
        self.index: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValidationError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def digest(self) -> str:
        h = hashlib.sha256()
        for t in self.tokens:
            h.update(t.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()


def build_vocab(dataset: Dataset, code_vocab: CodeVocabulary, min_freq: int = 1) -> TokenVocabulary:
    """Corpus tokens at or above min_freq, plus every code-title token.

    Order is deterministic: corpus frequency descending, then lexicographic.
    """
    if min_freq < 1:
        raise ConfigurationError(f"min_freq must be >= 1, got {min_freq}")
    if not dataset:
        raise ConfigurationError("cannot build a vocabulary from an empty dataset")
    freq: Counter[str] = Counter()
    for note in dataset:
        freq.update(tok.text for tok in tokenize(note.text))
    title_tokens = {tok.text for title in code_vocab.titles() for tok in tokenize(title)}
    keep = {t for t, c in freq.items() if c >= min_freq} | title_tokens
    ordered = sorted(keep, key=lambda t: (-freq.get(t, 0), t))
    return TokenVocabulary(ordered)


# ---------------------------------------------------------------------------
# file I/O


def _read_jsonl(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", line=lineno)
            yield lineno, obj


def _require(obj: dict, field: str, kind: type, lineno: int):
    if field not in obj:
        raise ParseError(f"missing field '{field}'", line=lineno)
    value = obj[field]
    if not isinstance(value, kind):
        raise ParseError(f"field '{field}' must be {kind.__name__}", line=lineno)
    return value


def load_code_vocab(path: str | Path) -> CodeVocabulary:
    entries = []
    for lineno, obj in _read_jsonl(path):
        entries.append(CodeEntry(
            code=_require(obj, "code", str, lineno),
            title=_require(obj, "title", str, lineno),
            kind=_require(obj, "kind", str, lineno),
        ))
    return CodeVocabulary(entries)


def save_code_vocab(vocab: CodeVocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in vocab.entries:
            fh.write(json.dumps({"code": e.code, "title": e.title, "kind": e.kind},
                                ensure_ascii=False) + "\n")


def save_token_vocab(vocab: TokenVocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"tokens": vocab.tokens}, fh, ensure_ascii=False)
        fh.write("\n")


def load_token_vocab(path: str | Path) -> TokenVocabulary:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"token vocabulary is not valid JSON: {exc.msg}") from exc
    if not isinstance(data, dict) or "tokens" not in data:
        raise ParseError("token vocabulary must be an object with a 'tokens' list")
    tokens = data["tokens"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise ParseError("field 'tokens' must be a list of strings")
    return TokenVocabulary(tokens)


def load_dataset(path: str | Path, code_vocab: CodeVocabulary) -> Dataset:
    notes: Dataset = []
    unknown: set[str] = set()
    for lineno, obj in _read_jsonl(path):
        note_id = _require(obj, "id", str, lineno)
        text = _require(obj, "text", str, lineno)
        codes = _require(obj, "codes", list, lineno)
        if not all(isinstance(c, str) for c in codes):
            raise ParseError("field 'codes' must be a list of strings", line=lineno)
        unknown.update(c for c in codes if c not in code_vocab)
        notes.append(Note(note_id, text, codes))
    if unknown:
        raise ValidationError("gold codes not in vocabulary: " + ", ".join(sorted(unknown)))
    return notes


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for note in dataset:
            fh.write(json.dumps({"id": note.id, "text": note.text,
                                 "codes": sorted(note.gold_codes)}, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class TriggerSpan:
    """Ground-truth evidence span: where a code's trigger phrase was planted."""
    note_id: str
    code: str
    start: int
    end: int


def load_triggers(path: str | Path) -> list[TriggerSpan]:
    spans = []
    for lineno, obj in _read_jsonl(path):
        spans.append(TriggerSpan(
            note_id=_require(obj, "note_id", str, lineno),
            code=_require(obj, "code", str, lineno),
            start=_require(obj, "start", int, lineno),
            end=_require(obj, "end", int, lineno),
        ))
    return spans


def save_triggers(spans: Iterable[TriggerSpan], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in spans:
            fh.write(json.dumps({"note_id": s.note_id, "code": s.code,
                                 "start": s.start, "end": s.end}) + "\n")
