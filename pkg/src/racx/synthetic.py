"""Synthetic note corpus with planted evidence phrases.

Stands in for restricted clinical data: every gold code of a note is
witnessed by exactly one of its trigger phrases planted in a sentence, and
the planted character spans are returned as explanation ground truth.
Code popularity follows a zipf law so the label distribution is long-tailed.

Trigger phrases are built from a syllable alphabet disjoint from the
background vocabulary, so a trigger can never occur by accident.  All three
phrases of a code share a head word, and the code title is that head word,
mirroring how real code titles share vocabulary with their evidence text.
Background sentences come from a small fixed pool per corpus, so they repeat
across notes and carry no label signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import CodeEntry, CodeVocabulary, Dataset, Note, TriggerSpan
from .errors import GenerationError, ValidationError
from .rng import derive_rng

_BG_CONSONANTS = "bcdfglmnprstv"
_TRIG_CONSONANTS = "xzqwjkh"
_VOWELS = "aeiou"

_TITLE_ADJECTIVES = ["acute", "chronic", "essential", "benign", "recurrent",
                     "secondary", "unspecified", "mild", "severe", "acquired"]
_TITLE_NOUNS = ["hypertension", "asthma", "dermatitis", "anemia", "migraine",
                "neuropathy", "gastritis", "arthritis", "insomnia", "sepsis"]
_TITLE_SITES = ["of forearm", "of lower limb", "of abdomen", "of sinus",
                "of shoulder", "of scalp", "of ankle", "of thorax"]


def _syllables(consonants: str) -> list[str]:
    return [c + v for c in consonants for v in _VOWELS]


def _word(counter: int, syllables: list[str], min_syllables: int = 2) -> str:
    n = len(syllables)
    parts = [syllables[counter % n]]
    counter //= n
    while counter or len(parts) < min_syllables:
        parts.append(syllables[counter % n])
        counter //= n
    return "".join(parts)


def background_words(count: int) -> list[str]:
    sylls = _syllables(_BG_CONSONANTS)
    return [_word(i, sylls) for i in range(count)]


def _trigger_phrases(n_codes: int) -> list[tuple[str, str, str]]:
    # all three phrases of a code open with the same head word; the head is
    # unique per code and doubles as the code title
    sylls = _syllables(_TRIG_CONSONANTS)
    phrases = []
    counter = 0
    for _ in range(n_codes):
        head = _word(counter, sylls)
        code_phrases = tuple(f"{head} {_word(counter + 1 + j, sylls)}" for j in range(3))
        counter += 4
        phrases.append(code_phrases)
    return phrases


def _code_identifier(i: int) -> str:
    return f"{100 + i}.{i % 10}"


def _code_title(i: int) -> str:
    adj = _TITLE_ADJECTIVES[i % len(_TITLE_ADJECTIVES)]
    noun = _TITLE_NOUNS[(i // len(_TITLE_ADJECTIVES)) % len(_TITLE_NOUNS)]
    base = f"{adj} {noun}"
    tier = i // (len(_TITLE_ADJECTIVES) * len(_TITLE_NOUNS))
    if tier:
        base += " " + _TITLE_SITES[(tier - 1) % len(_TITLE_SITES)]
    return base


@dataclass(frozen=True)
class SyntheticSpec:
    n_codes: int
    n_notes: int
    triggers: dict[str, tuple[str, str, str]]
    background_vocab_size: int = 30
    background_pool_size: int = 16
    codes_per_note_min: int = 1
    codes_per_note_max: int = 2
    zipf_exponent: float = 1.2
    seed: int = 0
    titles: dict[str, str] = field(default_factory=dict)
    kinds: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_codes < 1 or self.n_notes < 1:
            raise ValidationError("n_codes and n_notes must be positive")
        if self.background_pool_size < 1:
            raise ValidationError("background_pool_size must be positive")
        if self.zipf_exponent <= 0:
            raise ValidationError("zipf exponent must be > 0")
        if not (1 <= self.codes_per_note_min <= self.codes_per_note_max):
            raise ValidationError("codes_per_note bounds must satisfy 1 <= min <= max")
        if len(self.triggers) != self.n_codes:
            raise ValidationError("need trigger phrases for every code")
        seen: set[str] = set()
        for code, phrases in self.triggers.items():
            if len(set(phrases)) != 3:
                raise ValidationError(f"code '{code}' needs 3 distinct trigger phrases")
            for p in phrases:
                if p in seen:
                    raise ValidationError(f"trigger phrase '{p}' reused across codes")
                seen.add(p)


def default_spec(n_codes: int, n_notes: int, seed: int = 0, **overrides) -> SyntheticSpec:
    """Spec with generated codes and trigger phrases.

    Each code's title is the shared head word of its trigger phrases, so
    titles and evidence text overlap the way real code titles overlap
    clinical wording.  That lexical bridge is what lets the title-derived
    label queries find their evidence.
    """
    codes = [_code_identifier(i) for i in range(n_codes)]
    phrases = _trigger_phrases(n_codes)
    return SyntheticSpec(
        n_codes=n_codes,
        n_notes=n_notes,
        triggers={c: p for c, p in zip(codes, phrases)},
        titles={c: p[0].split()[0] for c, p in zip(codes, phrases)},
        kinds={c: ("procedure" if i % 4 == 3 else "diagnosis") for i, c in enumerate(codes)},
        seed=seed,
        **overrides,
    )


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=np.float64)
    w = ranks ** (-exponent)
    return w / w.sum()


def generate_synthetic_corpus(spec: SyntheticSpec) -> tuple[Dataset, CodeVocabulary, list[TriggerSpan]]:
    """Deterministic corpus: (notes, code vocabulary, planted trigger spans)."""
    codes = list(spec.triggers.keys())
    background = background_words(spec.background_vocab_size)
    trigger_words = {w for phrases in spec.triggers.values() for p in phrases for w in p.split()}
    collision = trigger_words & set(background)
    if collision:
        raise GenerationError(
            "trigger words collide with background vocabulary: " + ", ".join(sorted(collision)))

    entries = [CodeEntry(code=c,
                         title=spec.titles.get(c, _code_title(i)),
                         kind=spec.kinds.get(c, "diagnosis"))
               for i, c in enumerate(codes)]
    vocab = CodeVocabulary(entries)

    weights = zipf_weights(spec.n_codes, spec.zipf_exponent)

    # fixed pool of short background sentences; repeating them across notes
    # keeps them free of label signal
    pool_rng = derive_rng(spec.seed, "background-pool")
    pool: list[list[str]] = []
    for _ in range(spec.background_pool_size):
        count = int(pool_rng.integers(3, 5))
        pool.append([background[int(j)] for j in pool_rng.integers(0, len(background), count)])

    notes: Dataset = []
    spans: list[TriggerSpan] = []
    for idx in range(spec.n_notes):
        rng = derive_rng(spec.seed, idx)
        k = int(rng.integers(spec.codes_per_note_min, spec.codes_per_note_max + 1))
        k = min(k, spec.n_codes)
        gold_positions: list[int] = []
        while len(gold_positions) < k:
            draw = int(rng.choice(spec.n_codes, p=weights))
            if draw not in gold_positions:
                gold_positions.append(draw)
        gold_codes = [codes[p] for p in gold_positions]

        # sentence = (words, planted code or None); the trigger phrase is
        # never sentence-initial so capitalization cannot touch it
        sentences: list[tuple[list[str], str | None]] = []
        for code in gold_codes:
            phrase = spec.triggers[code][int(rng.integers(3))]
            lead = [background[int(j)] for j in rng.integers(0, len(background), int(rng.integers(1, 3)))]
            tail = [background[int(j)] for j in rng.integers(0, len(background), int(rng.integers(1, 3)))]
            sentences.append((lead + [phrase] + tail, code))
        sentences.append((list(pool[int(rng.integers(spec.background_pool_size))]), None))
        order = rng.permutation(len(sentences))

        note_id = f"note-{idx:05d}"
        parts: list[str] = []
        offset = 0
        for si in order:
            words, planted = sentences[int(si)]
            sentence = " ".join(words)
            sentence = sentence[0].upper() + sentence[1:]
            if planted is not None:
                phrase = next(w for w in words if " " in w)
                local = sentence.lower().index(phrase)
                spans.append(TriggerSpan(note_id=note_id, code=planted,
                                         start=offset + local, end=offset + local + len(phrase)))
            parts.append(sentence + ".")
            offset += len(sentence) + 2  # ". " joiner
        text = " ".join(parts)
        notes.append(Note(note_id, text, gold_codes))
    return notes, vocab, spans
