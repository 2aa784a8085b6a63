"""Capture wire-format fixtures for the UI tests from a live service.

Trains a small model on the synthetic corpus, builds a 20-item sheet,
and records real HTTP exchanges (sheet fetch, explanations, a scripted
two-group rating session with its consistency report) into
tests/fixtures/. Rerun after changing the service wire format:

    python3 scripts/make_fixtures.py
"""

import json
import sys
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from racx.explain import (KdConfig, build_feature_extractor, distill,
                          load_student_bundle, save_student_bundle)
from racx.harness import RatingRecord, build_question_sheet, inter_group_consistency
from racx.checkpoint import load_model_dir, save_model_dir
from racx.model import ModelConfig
from racx.service import ApiConfig, create_app
from racx.synthetic import default_spec, generate_synthetic_corpus
from racx.training import TrainConfig, train

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
SHEET_ID = "fixture"
N_ITEMS = 20

MODEL = ModelConfig(label_count=8, embed_dim=16, conv_width=5, encoder_layers=1,
                    attention_heads=2, ffn_dim=32, max_tokens=96,
                    dropout_rate=0.1, seed=0)
TRAIN = TrainConfig(epochs=120, batch_size=8, learning_rate=1e-2,
                    weight_decay=1e-4, patience=500, seed=7)

# Two groups, one annotator each. Group A accepts serving positions
# 0..11, group B accepts 4..15: intersection 8, union 16, jaccard 0.5.
A_ACCEPTS = set(range(0, 12))
B_ACCEPTS = set(range(4, 16))


def scripted_ratings(item_ids: list[str]) -> list[dict]:
    script = []
    for pos, item_id in enumerate(item_ids):
        if pos in A_ACCEPTS:
            rating = "highly_informative" if pos % 2 == 0 else "informative"
        else:
            rating = "irrelevant"
        script.append({"item_id": item_id, "annotator_id": "ann-a",
                       "group": "A", "rating": rating})
    for pos, item_id in enumerate(item_ids):
        rating = "informative" if pos in B_ACCEPTS else "irrelevant"
        script.append({"item_id": item_id, "annotator_id": "ann-b",
                       "group": "B", "rating": rating})
    return script


def main() -> int:
    notes, code_vocab, _ = generate_synthetic_corpus(default_spec(8, 32, seed=0))
    print("training teacher ...", flush=True)
    result = train(notes, code_vocab, MODEL, TRAIN)

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        # checkpoints hold float32, so the sheet must be built from the
        # reloaded model or its scores drift from what the service returns
        save_model_dir(result.model, root / "model")
        model = load_model_dir(root / "model")

        extractor = build_feature_extractor(notes, max_features=300)
        students = distill(model, notes, extractor, KdConfig(epochs=300))
        # saving prunes small weights; reload so the sheet is built from
        # exactly the students the service will serve
        save_student_bundle(students, extractor, root / "students")
        students, extractor = load_student_bundle(root / "students")

        sheet = build_question_sheet(notes, model, n_items=N_ITEMS,
                                     methods=("attn", "kd"), students=students,
                                     extractor=extractor, seed=0, sheet_id=SHEET_ID)
        (root / "sheets").mkdir()
        sheet.save(root / "sheets" / f"{SHEET_ID}.json")

        app = create_app(ApiConfig(sheets_dir=str(root / "sheets"),
                                   ratings_store=str(root / "ratings.jsonl"),
                                   model_dir=str(root / "model"),
                                   students_dir=str(root / "students")))
        client = TestClient(app)

        resp = client.get(f"/api/sheets/{SHEET_ID}")
        assert resp.status_code == 200, resp.text
        blinded = resp.json()
        assert len(blinded["items"]) == N_ITEMS

        # methods come from the unblinded sheet object, never the wire
        explains = []
        for item in sheet.items:
            resp = client.post("/api/explain", json={
                "text": item.note_text, "code": item.code, "method": item.method})
            assert resp.status_code == 200, resp.text
            body = resp.json()
            top = body["snippets"][0]
            want = item.snippet
            assert (top["start"], top["end"], top["text"], top["score"]) == \
                (want.start, want.end, want.text, want.score), \
                f"{item.item_id}: sheet snippet and explain disagree"
            explains.append({"item_id": item.item_id, "method": item.method,
                             "response": body})

        item_ids = [item["item_id"] for item in blinded["items"]]
        script = scripted_ratings(item_ids)
        for entry in script:
            resp = client.post(f"/api/sheets/{SHEET_ID}/ratings", json=entry)
            assert resp.status_code == 200, resp.text

        resp = client.get(f"/api/sheets/{SHEET_ID}/consistency")
        assert resp.status_code == 200, resp.text
        report = resp.json()

    # cross-check the service's numbers against the harness directly
    records = [RatingRecord(sheet_id=SHEET_ID, **entry) for entry in script]
    oracle = json.loads(inter_group_consistency(records, sheet).to_json())
    assert report == oracle, "service and harness disagree on the report"
    expected = len(A_ACCEPTS & B_ACCEPTS) / len(A_ACCEPTS | B_ACCEPTS)
    assert report["jaccard"] == expected, report["jaccard"]

    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    for name, payload in (("sheet.json", blinded),
                          ("explain.json", explains),
                          ("session.json", {"script": script, "report": report})):
        path = FIXTURE_DIR / name
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        print(f"wrote {path}")
    print(f"jaccard {report['jaccard']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
