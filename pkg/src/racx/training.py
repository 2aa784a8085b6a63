"""Multi-label BCE training with Adam, seeded shuffling, and early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import CodeVocabulary, Dataset, TokenVocabulary, build_vocab
from .errors import ConfigurationError, ContractError, TrainingError
from .metrics import MetricsReport, compute_report, default_ks, predict_codes
from .model import ModelConfig, RacModel, encode_note, init_parameters
from .optim import OptimizerState, adam_step
from .rng import derive_rng
from .tensor import Tape, Tensor

PROB_FLOOR = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    threshold: float = 0.5
    patience: int = 20
    seed: int = 0
    eval_fraction: float = 0.0

    def __post_init__(self):
        # epochs == 0 is allowed and returns the initialization untouched
        if self.epochs < 0:
            raise ConfigurationError("epochs must not be negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must not be negative")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(
                f"threshold must lie in (0, 1), got {self.threshold}")
        if self.patience < 1:
            raise ConfigurationError("patience must be at least 1")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise ConfigurationError("eval_fraction must lie in [0, 1)")


def bce_multilabel_loss(probabilities: Tensor, gold: np.ndarray,
                        tape: Tape | None = None) -> Tensor:
    """Mean over codes of -[y log p + (1-y) log(1-p)], probabilities clamped."""
    p = T.clip(probabilities, PROB_FLOOR, 1.0 - PROB_FLOOR, tape)
    y = Tensor(gold.astype(np.float64))
    ones = Tensor(np.ones_like(gold, dtype=np.float64))
    pos = T.mul(y, T.log(p, tape), tape)
    neg = T.mul(T.sub(ones, y, tape), T.log(T.sub(ones, p, tape), tape), tape)
    mean = T.mean(T.add(pos, neg, tape), None, tape)
    return T.mul(mean, Tensor(np.array(-1.0)), tape)


def gold_vector(note_codes: frozenset[str], code_vocab: CodeVocabulary) -> np.ndarray:
    y = np.zeros(len(code_vocab))
    for code in note_codes:
        y[code_vocab.index[code]] = 1.0
    return y


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    validation: MetricsReport


@dataclass
class TrainResult:
    model: RacModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_micro_f1: float = 0.0


def evaluate_model(model: RacModel, dataset: Dataset, threshold: float = 0.5,
                   ks: Sequence[int] | None = None) -> MetricsReport:
    if not dataset:
        raise ContractError("empty evaluation set")
    codes = [e.code for e in model.code_vocab.entries]
    if ks is None:
        ks = default_ks(len(codes))
    probs, predicted, gold = [], [], []
    for note in dataset:
        pred = model.forward(note)
        probs.append(pred.probabilities)
        predicted.append(predict_codes(pred.probabilities, codes, threshold))
        gold.append(set(note.gold_codes))
    return compute_report(predicted, gold, probs, codes, ks)


def split_dataset(dataset: Dataset, eval_fraction: float, seed: int
                  ) -> tuple[Dataset, Dataset]:
    """Seeded split; a zero fraction validates directly on the training notes."""
    if eval_fraction == 0.0:
        return list(dataset), list(dataset)
    order = derive_rng(seed, "split").permutation(len(dataset))
    n_val = max(1, math.floor(eval_fraction * len(dataset)))
    if n_val >= len(dataset):
        raise ConfigurationError(
            f"eval_fraction {eval_fraction} leaves no training notes")
    val = [dataset[i] for i in order[:n_val]]
    train = [dataset[i] for i in order[n_val:]]
    return train, val


def train(dataset: Dataset, code_vocab: CodeVocabulary, model_config: ModelConfig,
          train_config: TrainConfig, min_freq: int = 1,
          token_vocab: TokenVocabulary | None = None) -> TrainResult:
    if not dataset:
        raise ContractError("training requires a non-empty dataset")
    if token_vocab is None:
        token_vocab = build_vocab(dataset, code_vocab, min_freq=min_freq)
    train_notes, val_notes = split_dataset(
        dataset, train_config.eval_fraction, train_config.seed)
    params = init_parameters(model_config, token_vocab, code_vocab)
    codes = [e.code for e in code_vocab.entries]

    if train_config.epochs == 0:
        model = RacModel(params, model_config, token_vocab, code_vocab)
        return TrainResult(model)

    encoded = {n.id: encode_note(n, token_vocab, model_config) for n in train_notes}
    gold = {n.id: gold_vector(n.gold_codes, code_vocab) for n in train_notes}
    state = OptimizerState(learning_rate=train_config.learning_rate)
    drop_rng = derive_rng(train_config.seed, "dropout")
    best = {k: v.copy() for k, v in params.items()}
    best_f1, best_epoch, since_best = -1.0, 0, 0
    history: list[EpochRecord] = []

    for epoch in range(1, train_config.epochs + 1):
        order = derive_rng(train_config.seed, "shuffle", epoch).permutation(len(train_notes))
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(train_notes), train_config.batch_size):
            batch = [train_notes[i] for i in order[start:start + train_config.batch_size]]
            tape = Tape()
            leaves = {name: tape.leaf(arr) for name, arr in params.items()}
            model = RacModel(params, model_config, token_vocab, code_vocab)
            total: Tensor | None = None
            for note in batch:
                probs, _, _ = model.graph(encoded[note.id], leaves, tape,
                                          train=True, rng=drop_rng)
                loss = bce_multilabel_loss(probs, gold[note.id], tape)
                total = loss if total is None else T.add(total, loss, tape)
            total = T.mul(total, Tensor(np.array(1.0 / len(batch))), tape)
            loss_value = float(total.values)
            if not np.isfinite(loss_value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches + 1}")
            tape.backward(total)
            grads = {}
            for name, leaf in leaves.items():
                g = tape.grads.get(leaf.node_id)
                if g is not None:
                    grads[name] = g.values
            try:
                params = adam_step(params, grads, state, train_config.weight_decay)
            except TrainingError as exc:
                raise TrainingError(
                    f"{exc} (epoch {epoch}, batch {n_batches + 1})") from exc
            epoch_loss += loss_value
            n_batches += 1

        model = RacModel(params, model_config, token_vocab, code_vocab)
        report = evaluate_model(model, val_notes, train_config.threshold)
        history.append(EpochRecord(epoch, epoch_loss / n_batches, report))
        if report.micro_f1 > best_f1:
            best_f1, best_epoch, since_best = report.micro_f1, epoch, 0
            best = {k: v.copy() for k, v in params.items()}
        else:
            since_best += 1
            if since_best >= train_config.patience:
                break

    model = RacModel(best, model_config, token_vocab, code_vocab)
    return TrainResult(model, history, best_epoch, best_f1)
