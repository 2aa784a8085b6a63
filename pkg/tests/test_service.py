"""Service tests over the in-process HTTP client."""

import json
import os

import numpy as np
import pytest
from fastapi.testclient import TestClient

from racx import explain as X
from racx import harness as H
from racx import model as M
from racx import service as S
from racx.checkpoint import save_model_dir
from racx.corpus import build_vocab
from racx.errors import ConfigurationError
from racx.synthetic import default_spec, generate_synthetic_corpus


@pytest.fixture(scope="module")
def env(tmp_path_factory):
    root = tmp_path_factory.mktemp("service")
    notes, code_vocab, _ = generate_synthetic_corpus(default_spec(4, 10, seed=21))
    token_vocab = build_vocab(notes, code_vocab, min_freq=1)
    config = M.ModelConfig(label_count=4, embed_dim=16, conv_width=3,
                           encoder_layers=1, attention_heads=2, ffn_dim=32,
                           max_tokens=64, seed=8)
    model = M.RacModel.initialize(config, token_vocab, code_vocab)
    save_model_dir(model, root / "model")

    extractor = X.build_feature_extractor(notes, max_features=2000)
    students = [X.StudentModel(e.code, np.full(len(extractor), 0.1), 0.0)
                for e in code_vocab.entries]
    X.save_student_bundle(students, extractor, root / "students",
                          prune_ratio=0.0)

    sheet = H.build_question_sheet(notes, model, 6, students=students,
                                   extractor=extractor, threshold=0.0, seed=2)
    sheet.save(root / "sheets" / f"{sheet.sheet_id}.json")
    empty_sheet = H.build_question_sheet(notes, model, 4, methods=("attn",),
                                         threshold=0.0, seed=3,
                                         sheet_id="fresh")
    empty_sheet.save(root / "sheets" / "fresh.json")

    api = S.ApiConfig(sheets_dir=str(root / "sheets"),
                      ratings_store=str(root / "ratings.jsonl"),
                      model_dir=str(root / "model"),
                      students_dir=str(root / "students"),
                      threshold=0.3)
    client = TestClient(S.create_app(api))
    return {"client": client, "api": api, "notes": notes, "sheet": sheet,
            "model": model, "root": root}


def expect_error(response, status, code):
    assert response.status_code == status
    body = response.json()
    assert set(body) == {"error"}
    assert body["error"]["code"] == code
    assert isinstance(body["error"]["message"], str) and body["error"]["message"]


# ----------------------------------------------------------------- predict

def test_predict_happy_path(env):
    text = env["notes"][0].text
    r = env["client"].post("/api/predict", json={"text": text})
    assert r.status_code == 200
    body = r.json()
    assert body["threshold"] == 0.3
    probs = [c["prob"] for c in body["codes"]]
    assert probs == sorted(probs, reverse=True)
    assert all(p >= 0.3 for p in probs)
    assert all(set(c) == {"code", "title", "prob"} for c in body["codes"])


def test_predict_deterministic(env):
    text = env["notes"][1].text
    a = env["client"].post("/api/predict", json={"text": text})
    b = env["client"].post("/api/predict", json={"text": text})
    assert a.json() == b.json()


def test_predict_rejects_bad_bodies(env):
    expect_error(env["client"].post("/api/predict", json={"text": ""}),
                 400, "empty_text")
    expect_error(env["client"].post("/api/predict", json={"text": "   "}),
                 400, "empty_text")
    expect_error(env["client"].post("/api/predict", json={}), 400, "empty_text")
    expect_error(env["client"].post("/api/predict", content=b"{nope"),
                 400, "invalid_json")
    expect_error(env["client"].post("/api/predict", json=["text"]),
                 400, "invalid_json")


def test_predict_oversize_body(env):
    blob = json.dumps({"text": "word " * 250_000})
    assert len(blob) > S.MAX_BODY_BYTES
    expect_error(env["client"].post("/api/predict", content=blob.encode()),
                 413, "payload_too_large")


def test_predict_without_model(env, tmp_path):
    api = S.ApiConfig(sheets_dir=str(tmp_path / "sheets"),
                      ratings_store=str(tmp_path / "r.jsonl"))
    client = TestClient(S.create_app(api))
    expect_error(client.post("/api/predict", json={"text": "anything"}),
                 503, "model_not_loaded")
    expect_error(client.post("/api/explain",
                             json={"text": "x", "code": "c", "method": "attn"}),
                 503, "model_not_loaded")


# ----------------------------------------------------------------- explain

def test_explain_attn_single_token(env):
    code0 = env["model"].code_vocab.entries[0].code
    r = env["client"].post("/api/explain", json={
        "text": "Word.", "code": code0, "method": "attn"})
    assert r.status_code == 200
    body = r.json()
    assert body["method"] == "attn"
    assert body["note_id"] == "query"
    assert len(body["snippets"]) == 1
    snip = body["snippets"][0]
    assert "Word."[snip["start"]:snip["end"]] == snip["text"] == "Word"


def test_explain_spans_index_into_text(env):
    code0 = env["model"].code_vocab.entries[0].code
    text = env["notes"][2].text
    for method in ("attn", "kd"):
        r = env["client"].post("/api/explain", json={
            "text": text, "code": code0, "method": method})
        assert r.status_code == 200
        for snip in r.json()["snippets"]:
            assert text[snip["start"]:snip["end"]] == snip["text"]


def test_explain_error_contracts(env):
    client = env["client"]
    code0 = env["model"].code_vocab.entries[0].code
    expect_error(client.post("/api/explain", json={
        "text": "x", "code": code0, "method": "gradcam"}), 400, "unknown_method")
    expect_error(client.post("/api/explain", json={
        "text": "x", "code": "99.9", "method": "attn"}), 404, "unknown_code")
    expect_error(client.post("/api/explain", json={
        "text": "", "code": code0, "method": "attn"}), 400, "empty_text")


def test_explain_kd_without_students(env, tmp_path):
    api = S.ApiConfig(sheets_dir=str(tmp_path / "sheets"),
                      ratings_store=str(tmp_path / "r.jsonl"),
                      model_dir=str(env["root"] / "model"))
    client = TestClient(S.create_app(api))
    code0 = env["model"].code_vocab.entries[0].code
    expect_error(client.post("/api/explain", json={
        "text": "some words", "code": code0, "method": "kd"}),
        409, "students_not_loaded")


# ------------------------------------------------------------------ sheets

def test_get_sheet_blinded(env):
    sheet = env["sheet"]
    r = env["client"].get(f"/api/sheets/{sheet.sheet_id}")
    assert r.status_code == 200
    body = r.json()
    assert body["sheet_id"] == sheet.sheet_id
    assert len(body["items"]) == 6
    for item in body["items"]:
        assert "method" not in item
        assert item["note_text"][item["snippet"]["start"]:item["snippet"]["end"]] \
            == item["snippet"]["text"]


def test_get_sheet_unknown(env):
    expect_error(env["client"].get("/api/sheets/zzz"), 404, "unknown_sheet")
    expect_error(env["client"].get("/api/sheets/bad..id"), 404, "unknown_sheet")


# ----------------------------------------------------------------- ratings

def rate(env, item_id, annotator, group, rating, sheet_id=None, **extra):
    sheet_id = sheet_id or env["sheet"].sheet_id
    return env["client"].post(f"/api/sheets/{sheet_id}/ratings", json={
        "item_id": item_id, "annotator_id": annotator, "group": group,
        "rating": rating, **extra})


def test_rating_durable_append(env):
    r = rate(env, "i000", "ann-d", "A", "informative")
    assert r.status_code == 200
    record = r.json()["record"]
    assert record["timestamp"]
    lines = (env["root"] / "ratings.jsonl").read_text().splitlines()
    stored = [json.loads(l) for l in lines]
    assert any(s["annotator_id"] == "ann-d" and s["item_id"] == "i000"
               for s in stored)


def test_rating_duplicate_then_overwrite(env):
    assert rate(env, "i001", "ann-e", "A", "informative").status_code == 200
    expect_error(rate(env, "i001", "ann-e", "A", "irrelevant"),
                 409, "duplicate_rating")
    r = rate(env, "i001", "ann-e", "A", "irrelevant", overwrite=True)
    assert r.status_code == 200
    assert r.json()["record"]["replaces"] is True


def test_rating_error_contracts(env):
    expect_error(rate(env, "i000", "ann-f", "A", "maybe"), 422, "invalid_rating")
    expect_error(rate(env, "i000", "ann-f", "C", "informative"),
                 422, "invalid_rating")
    expect_error(rate(env, "i000", "", "A", "informative"), 422, "missing_field")
    expect_error(rate(env, "nope", "ann-f", "A", "informative"),
                 404, "unknown_item")
    expect_error(rate(env, "i000", "ann-f", "A", "informative",
                      sheet_id="ghost"), 404, "unknown_sheet")
    r = env["client"].post(f"/api/sheets/{env['sheet'].sheet_id}/ratings",
                           json={"item_id": "i000"})
    expect_error(r, 422, "missing_field")


# -------------------------------------------------------------- consistency

def test_consistency_no_ratings_yet(env):
    expect_error(env["client"].get("/api/sheets/fresh/consistency"),
                 404, "insufficient_ratings")


def test_consistency_read_your_writes(env):
    sheet = env["sheet"]
    items = sorted(sheet.item_ids())
    verdict_a = {items[0]: "informative", items[1]: "irrelevant",
                 items[2]: "highly_informative"}
    verdict_b = {items[0]: "informative", items[1]: "informative",
                 items[2]: "irrelevant"}
    for item, rating in verdict_a.items():
        assert rate(env, item, "cons-a", "A", rating).status_code == 200
    for item, rating in verdict_b.items():
        assert rate(env, item, "cons-b", "B", rating).status_code == 200
    r = env["client"].get(f"/api/sheets/{sheet.sheet_id}/consistency")
    assert r.status_code == 200
    body = r.json()

    store = H.RatingStore(env["api"].ratings_store)
    want = H.inter_group_consistency(store.records(sheet.sheet_id), sheet)
    assert body == json.loads(want.to_json())
    assert 0.0 <= body["jaccard"] <= 1.0
    assert set(body["per_method"]) == {"attn", "kd"}


def test_consistency_survives_restart(env):
    sheet = env["sheet"]
    before = env["client"].get(f"/api/sheets/{sheet.sheet_id}/consistency")
    assert before.status_code == 200
    fresh_client = TestClient(S.create_app(env["api"]))
    after = fresh_client.get(f"/api/sheets/{sheet.sheet_id}/consistency")
    assert after.json() == before.json()


# ------------------------------------------------------------------ config

def test_api_config_validation(tmp_path):
    with pytest.raises(ConfigurationError, match="missing 'sheets_dir'"):
        S.ApiConfig.from_dict({"ratings_store": "r"})
    with pytest.raises(ConfigurationError, match="unknown service config"):
        S.ApiConfig.from_dict({"sheets_dir": "s", "ratings_store": "r",
                               "extra": 1})
    with pytest.raises(ConfigurationError, match="port"):
        S.ApiConfig(sheets_dir="s", ratings_store="r", port=70000)
    with pytest.raises(ConfigurationError, match="threshold"):
        S.ApiConfig(sheets_dir="s", ratings_store="r", threshold=1.5)
    path = tmp_path / "config.json"
    path.write_text('{"sheets_dir": "s", "ratings_store": "r", "port": 9001}')
    config = S.load_api_config(path)
    assert config.port == 9001
    path.write_text("not json")
    with pytest.raises(ConfigurationError, match="not valid JSON"):
        S.load_api_config(path)


def test_apply_env_port_override(tmp_path, monkeypatch):
    config = S.ApiConfig(sheets_dir="s", ratings_store="r", port=8000)
    monkeypatch.delenv("RACX_PORT", raising=False)
    assert S.apply_env(config).port == 8000
    monkeypatch.setenv("RACX_PORT", "9999")
    assert S.apply_env(config).port == 9999
    monkeypatch.setenv("RACX_PORT", "abc")
    with pytest.raises(ConfigurationError, match="RACX_PORT"):
        S.apply_env(config)


def test_create_app_checks_paths(tmp_path):
    api = S.ApiConfig(sheets_dir=str(tmp_path / "s"),
                      ratings_store=str(tmp_path / "r.jsonl"),
                      model_dir=str(tmp_path / "missing"))
    with pytest.raises(ConfigurationError, match="model directory"):
        S.create_app(api)


def test_static_assets_served(env, tmp_path):
    static = tmp_path / "ui"
    static.mkdir()
    static.joinpath("index.html").write_text("<html><body>racx ui</body></html>")
    api = S.ApiConfig(sheets_dir=str(env["root"] / "sheets"),
                      ratings_store=str(env["root"] / "ratings.jsonl"),
                      model_dir=str(env["root"] / "model"),
                      static_dir=str(static), threshold=0.3)
    client = TestClient(S.create_app(api))
    r = client.get("/")
    assert r.status_code == 200
    assert "racx ui" in r.text
    # API routes still take precedence over the static mount
    assert client.post("/api/predict", json={"text": "word"}).status_code == 200
