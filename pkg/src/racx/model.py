"""RAC network: convolved embeddings, transformer encoder, code-title guided attention.

The permutation property is structural: positional counters restart at every
sentence boundary, the convolution never crosses a boundary, and self-attention
carries no positional bias. Reordering whole sentences therefore permutes the
encoded rows without changing any of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .corpus import CodeVocabulary, Note, TokenVocabulary, tokenize
from .errors import ConfigurationError, ContractError, DimensionError, InputError
from .rng import make_rng
from .tensor import Tape, Tensor


@dataclass(frozen=True)
class ModelConfig:
    label_count: int
    embed_dim: int = 64
    conv_width: int = 5
    encoder_layers: int = 2
    attention_heads: int = 4
    ffn_dim: int = 128
    max_tokens: int = 512
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.label_count < 1:
            raise ConfigurationError("label_count must be at least 1")
        if self.embed_dim < 1 or self.embed_dim % self.attention_heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} must be a positive multiple of "
                f"attention_heads {self.attention_heads}")
        if self.conv_width < 1 or self.conv_width % 2 == 0:
            raise ConfigurationError(f"conv_width must be odd, got {self.conv_width}")
        if self.encoder_layers < 1:
            raise ConfigurationError("encoder_layers must be at least 1")
        if self.ffn_dim < 1:
            raise ConfigurationError("ffn_dim must be at least 1")
        if self.max_tokens < 1:
            raise ConfigurationError("max_tokens must be at least 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(
                f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    def to_dict(self) -> dict:
        return {
            "label_count": self.label_count,
            "embed_dim": self.embed_dim,
            "conv_width": self.conv_width,
            "encoder_layers": self.encoder_layers,
            "attention_heads": self.attention_heads,
            "ffn_dim": self.ffn_dim,
            "max_tokens": self.max_tokens,
            "dropout_rate": self.dropout_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown model config fields: {', '.join(unknown)}")
        try:
            return cls(**dict(data))
        except TypeError as exc:
            raise ConfigurationError(f"incomplete model config: {exc}") from exc


def parameter_shapes(config: ModelConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
    """Complete tensor catalogue; order defines checkpoint payload order."""
    d, f, w, l = config.embed_dim, config.ffn_dim, config.conv_width, config.label_count
    shapes: dict[str, tuple[int, ...]] = {
        "token_embedding": (vocab_size, d),
        "conv.kernel": (w, d, d),
        "conv.bias": (d,),
    }
    for i in range(config.encoder_layers):
        p = f"enc{i}."
        shapes[p + "attn.wq"] = (d, d)
        shapes[p + "attn.wk"] = (d, d)
        shapes[p + "attn.wv"] = (d, d)
        shapes[p + "attn.wo"] = (d, d)
        shapes[p + "ln1.gain"] = (d,)
        shapes[p + "ln1.bias"] = (d,)
        shapes[p + "ffn.w1"] = (d, f)
        shapes[p + "ffn.b1"] = (f,)
        shapes[p + "ffn.w2"] = (f, d)
        shapes[p + "ffn.b2"] = (d,)
        shapes[p + "ln2.gain"] = (d,)
        shapes[p + "ln2.bias"] = (d,)
    shapes["title_proj"] = (d, d)
    shapes["label_attn.key"] = (d, d)
    shapes["label_attn.value"] = (d, d)
    shapes["code_out.vectors"] = (l, d)
    shapes["code_out.bias"] = (l,)
    return shapes


def parameter_count(config: ModelConfig, vocab_size: int) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(config, vocab_size).values())


def title_indicator(code_vocab: CodeVocabulary, token_vocab: TokenVocabulary) -> np.ndarray:
    """L×V matrix M with M[l] averaging the title-token embedding rows of code l."""
    m = np.zeros((len(code_vocab), len(token_vocab)))
    for l, entry in enumerate(code_vocab.entries):
        ids = [token_vocab.id_of(t.text) for t in tokenize(entry.title)]
        for tid in ids:
            m[l, tid] += 1.0 / len(ids)
    return m


def init_parameters(config: ModelConfig, token_vocab: TokenVocabulary,
                    code_vocab: CodeVocabulary) -> dict[str, np.ndarray]:
    if len(code_vocab) != config.label_count:
        raise ConfigurationError(
            f"label_count {config.label_count} does not match "
            f"code vocabulary size {len(code_vocab)}")
    rng = make_rng(config.seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config, len(token_vocab)).items():
        if name.endswith((".bias", ".b1", ".b2")):
            params[name] = np.zeros(shape)
        elif name.endswith(".gain"):
            params[name] = np.ones(shape)
        elif name == "code_out.vectors":
            params[name] = np.zeros(shape)  # overwritten with q below
        else:
            params[name] = rng.normal(0.0, 0.02, size=shape)
    # per-code scoring vectors start at the title queries and detach afterwards
    m = title_indicator(code_vocab, token_vocab)
    params["code_out.vectors"] = m @ params["token_embedding"] @ params["title_proj"]
    return params


class EncodedNote(NamedTuple):
    ids: np.ndarray
    token_spans: list[tuple[int, int]]
    sentence_lengths: list[int]


def encode_note(note: Note, token_vocab: TokenVocabulary, config: ModelConfig) -> EncodedNote:
    tokens = tokenize(note.text)
    if not tokens:
        raise InputError(f"note {note.id!r} is empty after tokenization")
    blocks: list[list[int]] = []
    for s, e in note.sentences:
        idx = [i for i, t in enumerate(tokens) if s <= t.start and t.end <= e]
        if idx:
            blocks.append(idx)
    kept: list[int] = []
    lengths: list[int] = []
    for block in blocks:
        if not kept and len(block) > config.max_tokens:
            block = block[:config.max_tokens]
        elif len(kept) + len(block) > config.max_tokens:
            break
        kept.extend(block)
        lengths.append(len(block))
    ids = np.array([token_vocab.id_of(tokens[i].text) for i in kept], dtype=np.int64)
    spans = [(tokens[i].start, tokens[i].end) for i in kept]
    return EncodedNote(ids, spans, lengths)


def sinusoidal_table(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim)[None, :]
    angles = pos / np.power(10000.0, (2.0 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angles), np.cos(angles))


def positional_rows(sentence_lengths: Sequence[int], dim: int) -> np.ndarray:
    """Stacked sinusoidal rows whose position counter restarts at each sentence."""
    table = sinusoidal_table(max(sentence_lengths), dim)
    return np.concatenate([table[:n] for n in sentence_lengths], axis=0)


def embed_and_convolve(ids: np.ndarray, sentence_lengths: Sequence[int],
                       params: Mapping[str, Tensor], config: ModelConfig,
                       tape: Tape | None = None) -> Tensor:
    if int(sum(sentence_lengths)) != len(ids):
        raise DimensionError(
            f"sentence lengths sum to {int(sum(sentence_lengths))} "
            f"but there are {len(ids)} token ids")
    if len(ids) > config.max_tokens:
        raise InputError(f"{len(ids)} tokens exceed max_tokens {config.max_tokens}")
    emb = T.embedding_lookup(params["token_embedding"], ids, tape)
    pe = Tensor(positional_rows(sentence_lengths, config.embed_dim))
    x = T.add(emb, pe, tape)
    blocks, row = [], 0
    for n in sentence_lengths:
        xs = T.slice_rows(x, row, row + n, tape)
        cs = T.conv1d(xs, params["conv.kernel"], params["conv.bias"], tape)
        blocks.append(T.gelu(cs, tape))
        row += n
    return blocks[0] if len(blocks) == 1 else T.concat_rows(blocks, tape)


def _dropout(x: Tensor, rate: float, rng: np.random.Generator,
             tape: Tape | None) -> Tensor:
    if rate <= 0.0:
        return x
    mask = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return T.mul(x, Tensor(mask), tape)


def _self_attention(x: Tensor, params: Mapping[str, Tensor], prefix: str,
                    config: ModelConfig, tape: Tape | None) -> Tensor:
    d, h = config.embed_dim, config.attention_heads
    dh = d // h
    q = T.matmul(x, params[prefix + "attn.wq"], tape)
    k = T.matmul(x, params[prefix + "attn.wk"], tape)
    v = T.matmul(x, params[prefix + "attn.wv"], tape)
    scale = Tensor(np.array(1.0 / np.sqrt(dh)))
    heads = []
    for i in range(h):
        qh = T.slice_columns(q, i * dh, (i + 1) * dh, tape)
        kh = T.slice_columns(k, i * dh, (i + 1) * dh, tape)
        vh = T.slice_columns(v, i * dh, (i + 1) * dh, tape)
        logits = T.mul(T.matmul(qh, T.transpose(kh, tape), tape), scale, tape)
        weights = T.softmax(logits, -1, tape)
        heads.append(T.matmul(weights, vh, tape))
    ctx = heads[0] if h == 1 else T.concat_columns(heads, tape)
    return T.matmul(ctx, params[prefix + "attn.wo"], tape)


def encoder_forward(features: Tensor, params: Mapping[str, Tensor],
                    config: ModelConfig, tape: Tape | None = None,
                    train: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
    if train and rng is None:
        raise ContractError("training-mode encoder requires a dropout rng")
    x = features
    for i in range(config.encoder_layers):
        p = f"enc{i}."
        attn = _self_attention(x, params, p, config, tape)
        if train:
            attn = _dropout(attn, config.dropout_rate, rng, tape)
        x = T.layer_norm(T.add(x, attn, tape),
                         params[p + "ln1.gain"], params[p + "ln1.bias"], tape=tape)
        hidden = T.gelu(T.add(T.matmul(x, params[p + "ffn.w1"], tape),
                              params[p + "ffn.b1"], tape), tape)
        out = T.add(T.matmul(hidden, params[p + "ffn.w2"], tape),
                    params[p + "ffn.b2"], tape)
        if train:
            out = _dropout(out, config.dropout_rate, rng, tape)
        x = T.layer_norm(T.add(x, out, tape),
                         params[p + "ln2.gain"], params[p + "ln2.bias"], tape=tape)
    return x


def code_title_queries(indicator: np.ndarray, params: Mapping[str, Tensor],
                       tape: Tape | None = None) -> Tensor:
    means = T.matmul(Tensor(indicator), params["token_embedding"], tape)
    return T.matmul(means, params["title_proj"], tape)


def label_attention(encoded: Tensor, queries: Tensor, params: Mapping[str, Tensor],
                    tape: Tape | None = None) -> tuple[Tensor, Tensor]:
    if encoded.shape[0] == 0:
        raise ContractError("label attention over an empty note")
    keys = T.matmul(encoded, params["label_attn.key"], tape)
    values = T.matmul(encoded, params["label_attn.value"], tape)
    scale = Tensor(np.array(1.0 / np.sqrt(queries.shape[1])))
    logits = T.mul(T.matmul(queries, T.transpose(keys, tape), tape), scale, tape)
    attention = T.softmax(logits, -1, tape)
    contexts = T.matmul(attention, values, tape)
    return attention, contexts


def score_codes(contexts: Tensor, params: Mapping[str, Tensor],
                tape: Tape | None = None) -> tuple[Tensor, Tensor]:
    """Returns (probabilities, logits); logits feed distillation and the loss."""
    per_code = T.reduce_sum(T.mul(contexts, params["code_out.vectors"], tape), 1, tape)
    logits = T.add(per_code, params["code_out.bias"], tape)
    return T.sigmoid(logits, tape), logits


@dataclass
class CodePrediction:
    probabilities: np.ndarray
    logits: np.ndarray
    attention: np.ndarray
    token_spans: list[tuple[int, int]]


@dataclass
class RacModel:
    """Bundles parameters with the vocabularies they were trained against."""

    params: dict[str, np.ndarray]
    config: ModelConfig
    token_vocab: TokenVocabulary
    code_vocab: CodeVocabulary
    _indicator: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        expected = parameter_shapes(self.config, len(self.token_vocab))
        missing = sorted(set(expected) - set(self.params))
        if missing:
            raise ConfigurationError(f"missing parameter tensors: {', '.join(missing)}")
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != shape:
                raise DimensionError(
                    f"parameter {name!r} has shape {tuple(self.params[name].shape)}, "
                    f"expected {shape}")
        self._indicator = title_indicator(self.code_vocab, self.token_vocab)

    @classmethod
    def initialize(cls, config: ModelConfig, token_vocab: TokenVocabulary,
                   code_vocab: CodeVocabulary) -> "RacModel":
        return cls(init_parameters(config, token_vocab, code_vocab),
                   config, token_vocab, code_vocab)

    def graph(self, encoded: EncodedNote, leaves: Mapping[str, Tensor],
              tape: Tape | None, train: bool = False,
              rng: np.random.Generator | None = None
              ) -> tuple[Tensor, Tensor, Tensor]:
        """Differentiable forward; returns (probabilities, logits, attention)."""
        feats = embed_and_convolve(encoded.ids, encoded.sentence_lengths,
                                   leaves, self.config, tape)
        enc = encoder_forward(feats, leaves, self.config, tape, train, rng)
        queries = code_title_queries(self._indicator, leaves, tape)
        attention, contexts = label_attention(enc, queries, leaves, tape)
        probs, logits = score_codes(contexts, leaves, tape)
        return probs, logits, attention

    def forward(self, note: Note, mode: str = "eval",
                rng: np.random.Generator | None = None) -> CodePrediction:
        if mode not in ("train", "eval"):
            raise ContractError(f"forward mode must be train or eval, got {mode!r}")
        encoded = encode_note(note, self.token_vocab, self.config)
        leaves = {name: Tensor(arr) for name, arr in self.params.items()}
        probs, logits, attention = self.graph(
            encoded, leaves, None, train=(mode == "train"), rng=rng)
        return CodePrediction(probs.values.copy(), logits.values.copy(),
                              attention.values.copy(), encoded.token_spans)
