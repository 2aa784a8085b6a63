"""HTTP facade over prediction, explanation, sheets and rating ingestion.

All responses are JSON; failures use the envelope
{"error": {"code": <machine readable>, "message": <human readable>}}.
A 200 on a rating POST means the record hit disk (fsync) first.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .checkpoint import load_model_dir
from .corpus import Note
from .errors import (ConfigurationError, ContractError, DataError,
                     DuplicateRatingError, InputError, RacxError,
                     ValidationError)
from .explain import (METHOD_ATTN, METHOD_KD, extract_snippets_attn,
                      extract_snippets_kd, load_student_bundle)
from .harness import (QuestionSheet, RatingRecord, RatingStore,
                      inter_group_consistency)

MAX_BODY_BYTES = 1 << 20
_SHEET_ID = re.compile(r"^[A-Za-z0-9_-]+$")


@dataclass(frozen=True)
class ApiConfig:
    sheets_dir: str
    ratings_store: str
    model_dir: str | None = None
    students_dir: str | None = None
    bind: str = "127.0.0.1"
    port: int = 8000
    threshold: float = 0.5
    static_dir: str | None = None

    def __post_init__(self):
        if not 1 <= self.port <= 65535:
            raise ConfigurationError(f"port {self.port} is out of range")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(
                f"threshold must lie strictly between 0 and 1, got {self.threshold}")

    @classmethod
    def from_dict(cls, data: dict) -> "ApiConfig":
        known = {"sheets_dir", "ratings_store", "model_dir", "students_dir",
                 "bind", "port", "threshold", "static_dir"}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(
                "unknown service config fields: " + ", ".join(sorted(unknown)))
        for key in ("sheets_dir", "ratings_store"):
            if key not in data:
                raise ConfigurationError(f"service config is missing '{key}'")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigurationError(f"bad service config: {exc}") from exc


def load_api_config(path: str | Path) -> ApiConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"service config is not valid JSON: {exc.msg}")
    if not isinstance(data, dict):
        raise ConfigurationError("service config must be a JSON object")
    return ApiConfig.from_dict(data)


def apply_env(config: ApiConfig) -> ApiConfig:
    """RACX_PORT overrides the configured port."""
    port = os.environ.get("RACX_PORT")
    if port is None:
        return config
    try:
        port = int(port)
    except ValueError:
        raise ConfigurationError(f"RACX_PORT is not an integer: {port!r}")
    return ApiConfig(**{**config.__dict__, "port": port})


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse({"error": {"code": code, "message": message}},
                        status_code=status)


def create_app(config: ApiConfig) -> FastAPI:
    model = None
    if config.model_dir is not None:
        if not Path(config.model_dir).is_dir():
            raise ConfigurationError(f"model directory not found: {config.model_dir}")
        model = load_model_dir(config.model_dir)
    students = extractor = None
    if config.students_dir is not None:
        if not Path(config.students_dir).is_dir():
            raise ConfigurationError(
                f"student directory not found: {config.students_dir}")
        students, extractor = load_student_bundle(config.students_dir)
    if config.static_dir is not None and not Path(config.static_dir).is_dir():
        raise ConfigurationError(f"static directory not found: {config.static_dir}")
    sheets_dir = Path(config.sheets_dir)
    sheets_dir.mkdir(parents=True, exist_ok=True)
    store = RatingStore(config.ratings_store)

    app = FastAPI(title="racx", openapi_url=None, docs_url=None, redoc_url=None)

    @app.exception_handler(RacxError)
    async def racx_error(request: Request, exc: RacxError):
        if isinstance(exc, DataError):
            return _error(400, "bad_data", str(exc))
        return _error(500, "internal_error", str(exc))

    async def _json_body(request: Request) -> dict | JSONResponse:
        body = await request.body()
        if len(body) > MAX_BODY_BYTES:
            return _error(413, "payload_too_large",
                          f"body exceeds {MAX_BODY_BYTES} bytes")
        try:
            data = json.loads(body)
        except json.JSONDecodeError:
            return _error(400, "invalid_json", "request body is not valid JSON")
        if not isinstance(data, dict):
            return _error(400, "invalid_json", "request body must be a JSON object")
        return data

    def _load_sheet(sheet_id: str) -> QuestionSheet | JSONResponse:
        if not _SHEET_ID.match(sheet_id):
            return _error(404, "unknown_sheet", f"no sheet named '{sheet_id}'")
        path = sheets_dir / f"{sheet_id}.json"
        if not path.exists():
            return _error(404, "unknown_sheet", f"no sheet named '{sheet_id}'")
        return QuestionSheet.load(path)

    @app.post("/api/predict")
    async def predict(request: Request):
        data = await _json_body(request)
        if isinstance(data, JSONResponse):
            return data
        text = data.get("text")
        if not isinstance(text, str) or not text.strip():
            return _error(400, "empty_text", "field 'text' must be a non-empty string")
        if model is None:
            return _error(503, "model_not_loaded", "no model directory configured")
        try:
            pred = model.forward(Note("query", text, []))
        except InputError as exc:
            return _error(400, "unusable_text", str(exc))
        entries = model.code_vocab.entries
        ranked = sorted(range(len(entries)),
                        key=lambda i: (-pred.probabilities[i], i))
        codes = [{"code": entries[i].code, "title": entries[i].title,
                  "prob": float(pred.probabilities[i])}
                 for i in ranked if pred.probabilities[i] >= config.threshold]
        return {"codes": codes, "threshold": config.threshold}

    @app.post("/api/explain")
    async def explain(request: Request):
        data = await _json_body(request)
        if isinstance(data, JSONResponse):
            return data
        text = data.get("text")
        if not isinstance(text, str) or not text.strip():
            return _error(400, "empty_text", "field 'text' must be a non-empty string")
        method = data.get("method")
        if method not in (METHOD_ATTN, METHOD_KD):
            return _error(400, "unknown_method",
                          f"method must be '{METHOD_ATTN}' or '{METHOD_KD}'")
        if model is None:
            return _error(503, "model_not_loaded", "no model directory configured")
        code = data.get("code")
        if not isinstance(code, str) or code not in model.code_vocab:
            return _error(404, "unknown_code", f"code '{code}' is not in the vocabulary")
        if method == METHOD_KD and students is None:
            return _error(409, "students_not_loaded",
                          "kd explanations need a student directory")
        note = Note("query", text, [])
        try:
            if method == METHOD_ATTN:
                pred = model.forward(note)
                result = extract_snippets_attn(pred, note, code, model.code_vocab)
            else:
                result = extract_snippets_kd(students, extractor, note, code)
        except InputError as exc:
            return _error(400, "unusable_text", str(exc))
        return json.loads(result.to_json())

    @app.get("/api/sheets/{sheet_id}")
    async def get_sheet(sheet_id: str):
        sheet = _load_sheet(sheet_id)
        if isinstance(sheet, JSONResponse):
            return sheet
        return json.loads(sheet.to_json(blinded=True))

    @app.post("/api/sheets/{sheet_id}/ratings")
    async def post_rating(sheet_id: str, request: Request):
        sheet = _load_sheet(sheet_id)
        if isinstance(sheet, JSONResponse):
            return sheet
        data = await _json_body(request)
        if isinstance(data, JSONResponse):
            return data
        fields = {}
        for name in ("item_id", "annotator_id", "group", "rating"):
            value = data.get(name)
            if not isinstance(value, str) or not value:
                return _error(422, "missing_field",
                              f"field '{name}' must be a non-empty string")
            fields[name] = value
        if fields["item_id"] not in sheet.item_ids():
            return _error(404, "unknown_item",
                          f"sheet has no item '{fields['item_id']}'")
        try:
            record = RatingRecord(sheet_id=sheet.sheet_id, **fields)
        except ValidationError as exc:
            return _error(422, "invalid_rating", str(exc))
        try:
            final = store.append(record, overwrite=bool(data.get("overwrite", False)))
        except DuplicateRatingError as exc:
            return _error(409, "duplicate_rating", str(exc))
        return {"status": "recorded", "record": final.to_dict()}

    @app.get("/api/sheets/{sheet_id}/consistency")
    async def consistency(sheet_id: str):
        sheet = _load_sheet(sheet_id)
        if isinstance(sheet, JSONResponse):
            return sheet
        records = store.records(sheet.sheet_id)
        try:
            report = inter_group_consistency(records, sheet)
        except ContractError as exc:
            return _error(404, "insufficient_ratings", str(exc))
        return json.loads(report.to_json())

    if config.static_dir is not None:
        app.mount("/", StaticFiles(directory=config.static_dir, html=True),
                  name="ui")
    return app
