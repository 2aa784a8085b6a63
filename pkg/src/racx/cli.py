"""Command line interface: one executable covering the whole pipeline.

Exit codes: 0 success, 1 usage problem, 2 bad data or artifacts,
3 runtime failure. Machine-readable results go to stdout, artifacts to
--out paths, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import load_model_dir, save_model_dir
from .corpus import (Note, load_code_vocab, load_dataset, save_code_vocab,
                     save_dataset, save_triggers)
from .errors import DataError, InputError, RacxError
from .explain import (METHOD_ATTN, METHOD_KD, KdConfig,
                      build_feature_extractor, distill, extract_snippets_attn,
                      extract_snippets_kd, fidelity, load_student_bundle,
                      save_student_bundle)
from .harness import (QuestionSheet, RatingStore, build_question_sheet,
                      human_baseline_compare, inter_group_consistency,
                      load_coder_annotations)
from .metrics import default_ks, predict_codes
from .model import ModelConfig
from .report import history_csv, render_loss_curve, render_per_code_f1
from .service import apply_env, create_app, load_api_config
from .synthetic import default_spec, generate_synthetic_corpus
from .training import TrainConfig, evaluate_model, train

DATASET_FILE = "dataset.jsonl"
CODES_FILE = "codes.jsonl"
TRIGGERS_FILE = "triggers.jsonl"


class UsageError(Exception):
    """Flag combination that argparse alone cannot reject."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exit status is 2; we use 1
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_data(data_dir: str | Path, code_vocab=None):
    data_dir = Path(data_dir)
    if code_vocab is None:
        code_vocab = load_code_vocab(data_dir / CODES_FILE)
    dataset = load_dataset(data_dir / DATASET_FILE, code_vocab)
    return dataset, code_vocab


def _read_note(args) -> str:
    text = args.text if args.text is not None else sys.stdin.read()
    if not text.strip():
        raise InputError("no text supplied")
    return text


# ------------------------------------------------------------- subcommands

def cmd_gen_corpus(args) -> int:
    spec = default_spec(args.codes, args.notes, seed=args.seed)
    notes, code_vocab, triggers = generate_synthetic_corpus(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(notes, out / DATASET_FILE)
    save_code_vocab(code_vocab, out / CODES_FILE)
    save_triggers(triggers, out / TRIGGERS_FILE)
    print(json.dumps({"codes": len(code_vocab), "notes": len(notes),
                      "out": str(out)}, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    dataset, code_vocab = _load_data(args.data)
    model_config = ModelConfig(
        label_count=len(code_vocab), embed_dim=args.embed_dim,
        conv_width=args.conv_width, encoder_layers=args.layers,
        attention_heads=args.heads, ffn_dim=args.ffn_dim,
        max_tokens=args.max_tokens, dropout_rate=args.dropout, seed=args.seed)
    train_config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size,
        learning_rate=args.lr, weight_decay=args.weight_decay,
        threshold=args.threshold, patience=args.patience, seed=args.seed,
        eval_fraction=args.eval_fraction)
    result = train(dataset, code_vocab, model_config, train_config,
                   min_freq=args.min_freq)
    out = Path(args.out)
    save_model_dir(result.model, out)
    (out / "history.csv").write_text(history_csv(result.history),
                                     encoding="utf-8")
    if result.history:
        render_loss_curve(result.history, out / "loss_curve.png")
    # the persisted summary must not mention its own location, or repeated
    # runs into different directories stop being byte-identical
    summary = {"best_epoch": result.best_epoch,
               "best_micro_f1": result.best_micro_f1,
               "epochs_run": len(result.history)}
    (out / "training.json").write_text(json.dumps(summary, sort_keys=True) + "\n",
                                       encoding="utf-8")
    print(json.dumps({**summary, "out": str(out)}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    model = load_model_dir(args.model)
    dataset, _ = _load_data(args.data, model.code_vocab)
    ks = ([int(k) for k in args.ks.split(",")] if args.ks
          else default_ks(len(model.code_vocab)))
    report = evaluate_model(model, dataset, threshold=args.threshold, ks=ks)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(report.to_json() + "\n",
                                          encoding="utf-8")
        (out / "per_code.csv").write_text(report.per_code_csv(),
                                          encoding="utf-8")
        counts: dict[str, int] = {}
        for note in dataset:
            for code in note.gold_codes:
                counts[code] = counts.get(code, 0) + 1
        render_per_code_f1(report, counts, out / "per_code_f1.png")
    print(report.to_json())
    return 0


def cmd_predict(args) -> int:
    model = load_model_dir(args.model)
    text = _read_note(args)
    pred = model.forward(Note("query", text, []))
    codes = [e.code for e in model.code_vocab.entries]
    predicted = predict_codes(pred.probabilities, codes, args.threshold)
    order = sorted(range(len(codes)), key=lambda i: (-pred.probabilities[i], i))
    payload = {
        "text": text,
        "threshold": args.threshold,
        "predicted": [codes[i] for i in order if codes[i] in predicted],
        "scores": [{"code": codes[i],
                    "title": model.code_vocab.entries[i].title,
                    "prob": float(pred.probabilities[i])} for i in order],
    }
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_explain(args) -> int:
    model = load_model_dir(args.model)
    if args.text is not None:
        text, code = args.text, args.code
    else:
        raw = sys.stdin.read()
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InputError(f"stdin is not predict output JSON: {exc.msg}")
        text = payload.get("text", "")
        code = args.code or next(iter(payload.get("predicted", [])), None)
    if not text or not text.strip():
        raise InputError("no text supplied")
    if code is None:
        raise UsageError("no --code given and the input names no predicted code")
    note = Note("query", text, [])
    if args.method == METHOD_ATTN:
        pred = model.forward(note)
        result = extract_snippets_attn(pred, note, code, model.code_vocab,
                                       window=args.window, top_n=args.top_n)
    else:
        if args.students is None:
            raise UsageError("--method kd requires --students")
        students, extractor = load_student_bundle(args.students)
        result = extract_snippets_kd(students, extractor, note, code,
                                     top_n=args.top_n)
    print(result.to_json())
    return 0


def cmd_distill(args) -> int:
    model = load_model_dir(args.model)
    dataset, _ = _load_data(args.data, model.code_vocab)
    extractor = build_feature_extractor(dataset, max_features=args.max_features)
    config = KdConfig(epochs=args.epochs, batch_size=args.batch_size,
                      learning_rate=args.lr, weight_decay=args.weight_decay,
                      seed=args.seed)
    students = distill(model, dataset, extractor, config, jobs=args.jobs)
    save_student_bundle(students, extractor, args.out,
                        prune_ratio=args.prune_ratio)
    finite = [s.loss for s in students if not s.diverged]
    print(json.dumps({
        "students": len(students),
        "features": len(extractor),
        "diverged": sorted(s.code for s in students if s.diverged),
        "mean_loss": sum(finite) / len(finite) if finite else None,
        "out": str(args.out),
    }, sort_keys=True))
    return 0


def cmd_fidelity(args) -> int:
    model = load_model_dir(args.model)
    students, extractor = load_student_bundle(args.students)
    dataset, _ = _load_data(args.data, model.code_vocab)
    report = fidelity(model, students, extractor, dataset,
                      threshold=args.threshold,
                      min_positives=args.min_positives)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_json())
    return 0


def cmd_sheet_build(args) -> int:
    model = load_model_dir(args.model)
    dataset, _ = _load_data(args.data, model.code_vocab)
    methods = tuple(args.methods.split(","))
    students = extractor = None
    if args.students is not None:
        students, extractor = load_student_bundle(args.students)
    elif METHOD_KD in methods:
        raise UsageError("methods include kd: --students is required")
    sheet = build_question_sheet(
        dataset, model, args.n_items, methods=methods, students=students,
        extractor=extractor, threshold=args.threshold, window=args.window,
        seed=args.seed, sheet_id=args.sheet_id)
    out = Path(args.out)
    path = out / f"{sheet.sheet_id}.json"
    sheet.save(path)
    print(json.dumps({"sheet_id": sheet.sheet_id, "items": len(sheet.items),
                      "path": str(path)}, sort_keys=True))
    return 0


def cmd_sheet_ingest(args) -> int:
    sheet = QuestionSheet.load(Path(args.sheets) / f"{args.sheet_id}.json")
    incoming = RatingStore(args.ratings).records()
    store = RatingStore(args.store)
    known = sheet.item_ids()
    appended = 0
    for record in incoming:
        if record.sheet_id != sheet.sheet_id:
            raise DataError(
                f"rating for sheet '{record.sheet_id}' does not belong to "
                f"'{sheet.sheet_id}'")
        if record.item_id not in known:
            raise DataError(f"rating references unknown item '{record.item_id}'")
        store.append(record, overwrite=args.overwrite)
        appended += 1
    print(json.dumps({"appended": appended, "store": str(args.store)},
                     sort_keys=True))
    return 0


def cmd_sheet_consistency(args) -> int:
    sheet = QuestionSheet.load(Path(args.sheets) / f"{args.sheet_id}.json")
    records = RatingStore(args.store).records(sheet.sheet_id)
    report = inter_group_consistency(records, sheet)
    print(report.to_json())
    return 0


def cmd_baseline(args) -> int:
    model = load_model_dir(args.model)
    dataset, _ = _load_data(args.data, model.code_vocab)
    annotations = load_coder_annotations(args.coders, model.code_vocab)
    codes = [e.code for e in model.code_vocab.entries]
    reference = {note.id: set(note.gold_codes) for note in dataset}
    predicted = {}
    for note in dataset:
        pred = model.forward(note)
        predicted[note.id] = predict_codes(pred.probabilities, codes,
                                           args.threshold)
    report = human_baseline_compare(annotations, reference, predicted)
    print(report.to_json())
    return 0


def cmd_serve(args) -> int:
    import os

    config_path = args.config or os.environ.get("RACX_CONFIG")
    if not config_path:
        raise UsageError("pass --config or set RACX_CONFIG")
    config = apply_env(load_api_config(config_path))
    if args.port is not None:
        config = type(config)(**{**config.__dict__, "port": args.port})
    app = create_app(config)

    import uvicorn

    uvicorn.run(app, host=config.bind, port=config.port, log_level="warning")
    return 0


# ------------------------------------------------------------------ parser

def _build_parser() -> _Parser:
    parser = _Parser(prog="racx", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a synthetic corpus directory")
    p.add_argument("--codes", type=int, required=True, help="number of codes")
    p.add_argument("--notes", type=int, required=True, help="number of notes")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train a model on a corpus directory")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="model output directory")
    p.add_argument("--epochs", type=int, default=200, help="epoch budget")
    p.add_argument("--batch-size", type=int, default=8, help="minibatch size")
    p.add_argument("--lr", type=float, default=1e-2, help="Adam learning rate")
    p.add_argument("--weight-decay", type=float, default=0.0,
                   help="decoupled weight decay")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="decision threshold for validation metrics")
    p.add_argument("--patience", type=int, default=20,
                   help="epochs without improvement before stopping")
    p.add_argument("--eval-fraction", type=float, default=0.0,
                   help="fraction of notes held out for validation")
    p.add_argument("--min-freq", type=int, default=1,
                   help="minimum token frequency for the vocabulary")
    p.add_argument("--embed-dim", type=int, default=64, help="embedding width")
    p.add_argument("--conv-width", type=int, default=5, help="conv kernel width")
    p.add_argument("--layers", type=int, default=2, help="encoder layers")
    p.add_argument("--heads", type=int, default=4, help="attention heads")
    p.add_argument("--ffn-dim", type=int, default=128, help="feed-forward width")
    p.add_argument("--max-tokens", type=int, default=512,
                   help="token truncation limit")
    p.add_argument("--dropout", type=float, default=0.1, help="dropout rate")
    p.add_argument("--seed", type=int, default=0, help="training seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a corpus directory")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", help="report directory (figures, CSV, JSON)")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="decision threshold")
    p.add_argument("--ks", help="comma separated k values for precision@k")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict codes for one note")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--text", help="note text (defaults to stdin)")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="decision threshold")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="extract evidence snippets for a code")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--method", required=True, choices=[METHOD_ATTN, METHOD_KD],
                   help="explanation method")
    p.add_argument("--students", help="student directory (kd only)")
    p.add_argument("--text", help="note text (defaults to stdin JSON)")
    p.add_argument("--code", help="code to explain (defaults to the top "
                                  "predicted code on stdin input)")
    p.add_argument("--window", type=int, default=12,
                   help="attention snippet token window")
    p.add_argument("--top-n", type=int, default=3, help="snippets to return")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("distill", help="fit linear students from a model")
    p.add_argument("--model", required=True, help="teacher model directory")
    p.add_argument("--data", required=True, help="transfer corpus directory")
    p.add_argument("--out", required=True, help="student output directory")
    p.add_argument("--epochs", type=int, default=200, help="descent epochs")
    p.add_argument("--batch-size", type=int, default=32, help="minibatch size")
    p.add_argument("--lr", type=float, default=0.5, help="learning rate")
    p.add_argument("--weight-decay", type=float, default=1e-4,
                   help="L2 penalty on student weights")
    p.add_argument("--seed", type=int, default=0, help="batch order seed")
    p.add_argument("--max-features", type=int, default=20000,
                   help="tf-idf feature cap")
    p.add_argument("--prune-ratio", type=float, default=0.01,
                   help="drop weights below this fraction of the max")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker threads across the code dimension")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("fidelity", help="teacher-student fidelity report")
    p.add_argument("--model", required=True, help="teacher model directory")
    p.add_argument("--students", required=True, help="student directory")
    p.add_argument("--data", required=True, help="evaluation corpus directory")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="decision threshold")
    p.add_argument("--min-positives", type=int, default=5,
                   help="teacher positives needed for eligibility")
    p.add_argument("--out", help="also write the report JSON here")
    p.set_defaults(func=cmd_fidelity)

    p = sub.add_parser("sheet", help="question sheet operations")
    sheet_sub = p.add_subparsers(dest="sheet_command", required=True)

    b = sheet_sub.add_parser("build", help="build a question sheet")
    b.add_argument("--model", required=True, help="model directory")
    b.add_argument("--data", required=True, help="corpus directory")
    b.add_argument("--out", required=True, help="sheets directory")
    b.add_argument("--students", help="student directory (needed for kd)")
    b.add_argument("--n-items", type=int, required=True, help="items to sample")
    b.add_argument("--methods", default="attn,kd",
                   help="comma separated methods")
    b.add_argument("--threshold", type=float, default=0.5,
                   help="prediction confidence floor")
    b.add_argument("--window", type=int, default=12,
                   help="attention snippet token window")
    b.add_argument("--seed", type=int, default=0, help="sampling seed")
    b.add_argument("--sheet-id", help="explicit sheet identifier")
    b.set_defaults(func=cmd_sheet_build)

    i = sheet_sub.add_parser("ingest", help="bulk-append ratings to a store")
    i.add_argument("--sheets", required=True, help="sheets directory")
    i.add_argument("--sheet-id", required=True, help="sheet identifier")
    i.add_argument("--ratings", required=True, help="ratings JSONL to ingest")
    i.add_argument("--store", required=True, help="rating store path")
    i.add_argument("--overwrite", action="store_true",
                   help="allow replacing existing ratings")
    i.set_defaults(func=cmd_sheet_ingest)

    c = sheet_sub.add_parser("consistency", help="inter-group consistency")
    c.add_argument("--sheets", required=True, help="sheets directory")
    c.add_argument("--sheet-id", required=True, help="sheet identifier")
    c.add_argument("--store", required=True, help="rating store path")
    c.set_defaults(func=cmd_sheet_consistency)

    p = sub.add_parser("baseline", help="human coding baseline comparison")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--data", required=True, help="reference corpus directory")
    p.add_argument("--coders", required=True, help="coder annotations JSONL")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="decision threshold")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", help="service config JSON "
                                    "(defaults to RACX_CONFIG)")
    p.add_argument("--port", type=int, help="override the configured port")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"racx: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"racx: data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"racx: data error: {exc}", file=sys.stderr)
        return 2
    except RacxError as exc:
        print(f"racx: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
