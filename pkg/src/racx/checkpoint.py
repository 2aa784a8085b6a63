"""Binary model checkpoints.

Layout: magic "RACX", version u16 LE, manifest length u32 LE, JSON manifest
(config, vocabulary digests, tensor name/shape/offset/nbytes table), then the
tensor payloads as little-endian float32 in manifest order. Offsets are
relative to the start of the payload region.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import (CodeVocabulary, TokenVocabulary, load_code_vocab,
                     load_token_vocab, save_code_vocab, save_token_vocab)
from .errors import CompatibilityError, CorruptionError, ValidationError
from .model import ModelConfig, RacModel, parameter_shapes

MAGIC = b"RACX"
VERSION = 1
_HEADER = struct.Struct("<HI")  # version, manifest length


@dataclass(frozen=True)
class Checkpoint:
    params: dict[str, np.ndarray]
    config: ModelConfig
    token_vocab_digest: str
    code_vocab_digest: str


def save_checkpoint(params: Mapping[str, np.ndarray], config: ModelConfig,
                    token_vocab_digest: str, code_vocab_digest: str,
                    path: str | Path) -> None:
    vocab_size = params["token_embedding"].shape[0] if "token_embedding" in params else 0
    expected = parameter_shapes(config, vocab_size)
    if set(params.keys()) != set(expected.keys()):
        extra = sorted(set(params) - set(expected))
        missing = sorted(set(expected) - set(params))
        raise CompatibilityError(
            "parameter names do not match the model configuration "
            f"(unexpected: {extra or 'none'}, missing: {missing or 'none'})")
    entries = []
    offset = 0
    payloads = []
    for name, shape in expected.items():
        arr = params[name]
        if tuple(arr.shape) != shape:
            raise CompatibilityError(
                f"tensor {name!r} has shape {tuple(arr.shape)}, expected {shape}")
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(shape),
                        "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    manifest = json.dumps(
        {"config": config.to_dict(),
         "digests": {"token_vocab": token_vocab_digest, "code_vocab": code_vocab_digest},
         "tensors": entries},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(VERSION, len(manifest)))
        fh.write(manifest)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path: str | Path,
                    token_vocab: TokenVocabulary | None = None,
                    code_vocab: CodeVocabulary | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    head = len(MAGIC) + _HEADER.size
    if len(data) < head:
        raise CorruptionError(
            f"checkpoint is {len(data)} bytes, shorter than the {head}-byte header")
    if data[:len(MAGIC)] != MAGIC:
        raise CorruptionError(f"bad magic bytes {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    version, manifest_len = _HEADER.unpack_from(data, len(MAGIC))
    if version != VERSION:
        raise CompatibilityError(f"unsupported checkpoint version {version}")
    if len(data) < head + manifest_len:
        raise CorruptionError(
            f"manifest needs {manifest_len} bytes but only "
            f"{len(data) - head} follow the header")
    try:
        manifest = json.loads(data[head:head + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"unreadable checkpoint manifest: {exc}") from exc
    for key in ("config", "digests", "tensors"):
        if key not in manifest:
            raise CorruptionError(f"checkpoint manifest lacks {key!r}")
    config = ModelConfig.from_dict(manifest["config"])
    tensors = manifest["tensors"]
    by_name = {e["name"]: e for e in tensors}
    emb = by_name.get("token_embedding")
    if emb is None:
        raise CompatibilityError("checkpoint manifest lacks the token_embedding tensor")
    expected = parameter_shapes(config, int(emb["shape"][0]))
    if [e["name"] for e in tensors] != list(expected.keys()):
        raise CompatibilityError(
            "manifest tensor order does not match the model configuration")
    offset = 0
    for entry in tensors:
        name, shape = entry["name"], tuple(entry["shape"])
        if shape != expected[name]:
            raise CompatibilityError(
                f"tensor {name!r} has manifest shape {shape}, expected {expected[name]}")
        nbytes = 4 * int(np.prod(shape))
        if entry["nbytes"] != nbytes or entry["offset"] != offset:
            raise CorruptionError(
                f"tensor {name!r} payload table is inconsistent "
                f"(offset {entry['offset']}, nbytes {entry['nbytes']})")
        offset += nbytes
    payload = data[head + manifest_len:]
    if len(payload) != offset:
        raise CorruptionError(
            f"checkpoint payload has {len(payload)} bytes, expected {offset}")
    params: dict[str, np.ndarray] = {}
    for entry in tensors:
        shape = tuple(entry["shape"])
        flat = np.frombuffer(payload, dtype="<f4",
                             count=int(np.prod(shape)), offset=entry["offset"])
        arr = flat.astype(np.float64).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise CorruptionError(f"tensor {entry['name']!r} holds non-finite values")
        params[entry["name"]] = arr
    digests = manifest["digests"]
    if token_vocab is not None and token_vocab.digest() != digests["token_vocab"]:
        raise CompatibilityError(
            "token vocabulary digest mismatch: checkpoint has "
            f"{digests['token_vocab'][:12]}..., provided vocabulary hashes to "
            f"{token_vocab.digest()[:12]}...")
    if code_vocab is not None and code_vocab.digest() != digests["code_vocab"]:
        raise CompatibilityError(
            "code vocabulary digest mismatch: checkpoint has "
            f"{digests['code_vocab'][:12]}..., provided vocabulary hashes to "
            f"{code_vocab.digest()[:12]}...")
    return Checkpoint(params, config, digests["token_vocab"], digests["code_vocab"])


def save_model(model: RacModel, path: str | Path) -> None:
    save_checkpoint(model.params, model.config,
                    model.token_vocab.digest(), model.code_vocab.digest(), path)


def load_model(path: str | Path, token_vocab: TokenVocabulary,
               code_vocab: CodeVocabulary) -> RacModel:
    ckpt = load_checkpoint(path, token_vocab, code_vocab)
    return RacModel(ckpt.params, ckpt.config, token_vocab, code_vocab)


# A trained model ships as a directory so the vocabularies that define its
# input and output spaces travel with the weights.
MODEL_FILE = "model.racx"
TOKENS_FILE = "tokens.json"
CODES_FILE = "codes.jsonl"


def save_model_dir(model: RacModel, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_code_vocab(model.code_vocab, directory / CODES_FILE)
    save_token_vocab(model.token_vocab, directory / TOKENS_FILE)
    save_model(model, directory / MODEL_FILE)


def load_model_dir(directory: str | Path) -> RacModel:
    directory = Path(directory)
    for name in (MODEL_FILE, TOKENS_FILE, CODES_FILE):
        if not (directory / name).exists():
            raise ValidationError(f"model directory is missing {name}")
    code_vocab = load_code_vocab(directory / CODES_FILE)
    token_vocab = load_token_vocab(directory / TOKENS_FILE)
    return load_model(directory / MODEL_FILE, token_vocab, code_vocab)
