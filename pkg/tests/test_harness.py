"""Harness tests: sheet construction, rating store, agreement arithmetic."""

import json
from collections import Counter

import numpy as np
import pytest

from racx import explain as X
from racx import harness as H
from racx import model as M
from racx.corpus import build_vocab
from racx.errors import (BuildError, ConfigurationError, ContractError,
                         DuplicateRatingError, ParseError, ValidationError)
from racx.explain import Snippet
from racx.metrics import micro_jaccard
from racx.rng import make_rng
from racx.synthetic import default_spec, generate_synthetic_corpus


@pytest.fixture(scope="module")
def sheet_setup():
    notes, code_vocab, _ = generate_synthetic_corpus(default_spec(4, 10, seed=11))
    token_vocab = build_vocab(notes, code_vocab, min_freq=1)
    config = M.ModelConfig(label_count=4, embed_dim=16, conv_width=3,
                           encoder_layers=1, attention_heads=2, ffn_dim=32,
                           max_tokens=64, seed=5)
    model = M.RacModel.initialize(config, token_vocab, code_vocab)
    extractor = X.build_feature_extractor(notes, max_features=2000)
    students = [X.StudentModel(e.code, np.full(len(extractor), 0.1), 0.0)
                for e in code_vocab.entries]
    return notes, code_vocab, model, extractor, students


def build(setup, n_items, methods=("attn", "kd"), seed=0, threshold=0.0):
    notes, _, model, extractor, students = setup
    return H.build_question_sheet(notes, model, n_items, methods=methods,
                                  students=students, extractor=extractor,
                                  threshold=threshold, seed=seed)


def rec(item, annotator, rating, group="A", sheet="s1", **kw):
    return H.RatingRecord(sheet, item, annotator, group, rating, **kw)


def mk_item(item_id, method, note_id="n0"):
    snip = Snippet(note_id, "1.0", method, 0, 4, "text", 0.5)
    return H.SheetItem(item_id, note_id, "text here", "1.0", "title",
                       method, snip)


def mk_sheet(spec):
    """spec: list of (item_id, method)."""
    return H.QuestionSheet("s1", [mk_item(i, m) for i, m in spec], "d")


# ------------------------------------------------------------ sheet build

def test_sheet_even_split(sheet_setup):
    sheet = build(sheet_setup, 10)
    methods = Counter(item.method for item in sheet.items)
    assert methods == {"attn": 5, "kd": 5}
    assert len(sheet.item_ids()) == 10


def test_sheet_odd_split_favors_first_method(sheet_setup):
    sheet = build(sheet_setup, 5, methods=("kd", "attn"))
    methods = Counter(item.method for item in sheet.items)
    assert methods == {"kd": 3, "attn": 2}


def test_sheet_deterministic(sheet_setup):
    a = build(sheet_setup, 8, seed=3)
    b = build(sheet_setup, 8, seed=3)
    assert a.to_json() == b.to_json()
    assert a.sheet_id == b.sheet_id
    c = build(sheet_setup, 8, seed=4)
    assert c.to_json() != a.to_json()


def test_sheet_insufficient_candidates(sheet_setup):
    # 10 notes x 4 codes = 40 pairs per method; asking for 50 each must fail
    with pytest.raises(BuildError, match=r"needs 50.*only 40"):
        build(sheet_setup, 100)


def test_sheet_snippets_index_into_note_text(sheet_setup):
    sheet = build(sheet_setup, 10)
    for item in sheet.items:
        snip = item.snippet
        assert item.note_text[snip.start:snip.end] == snip.text
        assert item.method in ("attn", "kd")


def test_sheet_blinded_view_hides_method(sheet_setup):
    sheet = build(sheet_setup, 4)
    full = json.loads(sheet.to_json())
    blind = json.loads(sheet.to_json(blinded=True))
    assert all("method" in item for item in full["items"])
    assert all("method" not in item for item in blind["items"])
    assert [i["item_id"] for i in blind["items"]] == \
        [i["item_id"] for i in full["items"]]


def test_sheet_save_load_round_trip(sheet_setup, tmp_path):
    sheet = build(sheet_setup, 6)
    path = tmp_path / "sheet.json"
    sheet.save(path)
    back = H.QuestionSheet.load(path)
    assert back.to_json() == sheet.to_json()


def test_sheet_validation(sheet_setup):
    notes, _, model, extractor, students = sheet_setup
    with pytest.raises(ConfigurationError):
        build(sheet_setup, 0)
    with pytest.raises(ConfigurationError):
        build(sheet_setup, 4, methods=("bogus",))
    with pytest.raises(ConfigurationError):
        build(sheet_setup, 4, methods=("attn", "attn"))
    with pytest.raises(ContractError):
        H.build_question_sheet(notes, model, 4, methods=("kd",))
    with pytest.raises(ContractError):
        H.build_question_sheet([], model, 4, methods=("attn",))
    with pytest.raises(ValidationError, match="duplicate item id"):
        H.QuestionSheet("s", [mk_item("i0", "attn"), mk_item("i0", "kd")], "d")


def test_sheet_attn_only_needs_no_students(sheet_setup):
    notes, _, model, _, _ = sheet_setup
    sheet = H.build_question_sheet(notes, model, 6, methods=("attn",),
                                   threshold=0.0, seed=1)
    assert all(item.method == "attn" for item in sheet.items)


# ---------------------------------------------------------------- ratings

def test_rating_record_validation():
    with pytest.raises(ValidationError, match="must be one of"):
        rec("i1", "ann1", "maybe")
    with pytest.raises(ValidationError, match="group"):
        H.RatingRecord("s1", "i1", "ann1", "C", "informative")
    with pytest.raises(ValidationError, match="annotator_id"):
        H.RatingRecord("s1", "i1", "", "A", "informative")


def test_store_round_trip(tmp_path):
    store = H.RatingStore(tmp_path / "ratings.jsonl")
    written = store.append(rec("i1", "ann1", "informative"))
    assert written.timestamp != ""
    assert written.replaces is False
    back = store.records()
    assert back == [written]


def test_store_duplicate_and_overwrite(tmp_path):
    store = H.RatingStore(tmp_path / "ratings.jsonl")
    store.append(rec("i1", "ann1", "informative"))
    with pytest.raises(DuplicateRatingError, match="already rated"):
        store.append(rec("i1", "ann1", "irrelevant"))
    second = store.append(rec("i1", "ann1", "irrelevant"), overwrite=True)
    assert second.replaces is True
    log = store.records()
    assert len(log) == 2  # the audit trail keeps the original line
    eff = H.effective_ratings(log)
    assert eff[("i1", "ann1")].rating == "irrelevant"


def test_store_filters_by_sheet(tmp_path):
    store = H.RatingStore(tmp_path / "ratings.jsonl")
    store.append(rec("i1", "ann1", "informative", sheet="s1"))
    store.append(rec("i1", "ann1", "informative", sheet="s2"))
    assert len(store.records("s1")) == 1
    assert len(store.records()) == 2
    assert H.RatingStore(tmp_path / "nope.jsonl").records() == []


def test_store_parse_errors(tmp_path):
    path = tmp_path / "ratings.jsonl"
    path.write_text('{"sheet_id": "s1"}\n', encoding="utf-8")
    with pytest.raises(ParseError, match="line 1"):
        H.RatingStore(path).records()
    good = json.dumps(rec("i1", "a1", "informative").to_dict())
    bad = good.replace("informative", "kinda")
    path.write_text(good + "\n" + bad + "\n", encoding="utf-8")
    with pytest.raises(ParseError, match="line 2"):
        H.RatingStore(path).records()


# --------------------------------------------------------------- majority

def test_majority_unanimous():
    assert H.majority_label(["irrelevant"] * 3) == "irrelevant"
    assert H.majority_label(["highly_informative"]) == "highly_informative"


def test_majority_conservative_ties():
    assert H.majority_label(["highly_informative", "irrelevant"]) == "irrelevant"
    assert H.majority_label(["highly_informative", "informative"]) == "informative"
    assert H.majority_label(["informative", "irrelevant"]) == "irrelevant"
    three_way = ["highly_informative", "informative", "irrelevant"]
    assert H.majority_label(three_way) == "irrelevant"


def test_majority_strict_beats_tie_rule():
    votes = ["highly_informative", "highly_informative", "irrelevant"]
    assert H.majority_label(votes) == "highly_informative"


def test_majority_duplicate_annotator_invariant():
    rng = make_rng(33)
    for _ in range(100):
        votes = [H.RATING_LEVELS[i] for i in rng.integers(0, 3, size=5)]
        counts = Counter(votes)
        top, runner = counts.most_common(1)[0][1], 0
        if len(counts) > 1:
            runner = counts.most_common(2)[1][1]
        if top == runner:
            continue  # only strict majorities are covered by the invariant
        verdict = H.majority_label(votes)
        doubled = votes + [verdict]
        assert H.majority_label(doubled) == verdict


def test_group_distribution_all_irrelevant():
    records = [rec("i1", "a1", "irrelevant"), rec("i1", "a2", "irrelevant"),
               rec("i2", "a1", "irrelevant"), rec("i2", "a2", "irrelevant")]
    dist = H.group_distribution(records, "A")
    assert dist.proportions == {"highly_informative": 0.0, "informative": 0.0,
                                "irrelevant": 1.0}
    assert dist.counts["irrelevant"] == 2


def test_group_distribution_six_annotator_oracle():
    annotators = [f"a{i}" for i in range(6)]
    votes = {
        "i1": ["informative"] * 4 + ["irrelevant"] * 2,
        "i2": ["highly_informative"] * 3 + ["irrelevant"] * 3,
        "i3": ["highly_informative"] * 5 + ["informative"],
    }
    records = [rec(item, ann, rating)
               for item, ratings in votes.items()
               for ann, rating in zip(annotators, ratings)]
    dist = H.group_distribution(records, "A")
    # exhaustive count: i1 informative (4>2), i2 tie -> irrelevant, i3 highly
    assert dist.item_labels == {"i1": "informative", "i2": "irrelevant",
                                "i3": "highly_informative"}
    assert dist.counts == {"highly_informative": 1, "informative": 1,
                           "irrelevant": 1}
    assert all(p == pytest.approx(1 / 3) for p in dist.proportions.values())


def test_group_distribution_uses_effective_ratings(tmp_path):
    store = H.RatingStore(tmp_path / "r.jsonl")
    store.append(rec("i1", "a1", "highly_informative"))
    store.append(rec("i1", "a1", "irrelevant"), overwrite=True)
    dist = H.group_distribution(store.records(), "A")
    assert dist.item_labels == {"i1": "irrelevant"}


def test_group_distribution_empty_group():
    with pytest.raises(ContractError, match="group 'B'"):
        H.group_distribution([rec("i1", "a1", "informative")], "B")


# ------------------------------------------------------------- consistency

def ratings_for(sets, items, group, prefix):
    """One annotator per group; items in `sets` rated informative."""
    return [rec(i, prefix, "informative" if i in sets else "irrelevant",
                group=group) for i in items]


def test_consistency_identical_verdicts():
    sheet = mk_sheet([("i1", "attn"), ("i2", "kd")])
    records = (ratings_for({"i1"}, ["i1", "i2"], "A", "a1")
               + ratings_for({"i1"}, ["i1", "i2"], "B", "b1"))
    report = H.inter_group_consistency(records, sheet)
    assert report.jaccard == 1.0
    assert report.below_threshold is False
    assert report.per_method == {"attn": 1.0, "kd": 1.0}


def test_consistency_hand_set_arithmetic():
    items = [f"i{k}" for k in range(1, 9)]
    sheet = mk_sheet([(i, "attn") for i in items])
    set_a = {"i1", "i2", "i3", "i4", "i5"}
    set_b = {"i1", "i2", "i6", "i7", "i8"}
    records = (ratings_for(set_a, items, "A", "a1")
               + ratings_for(set_b, items, "B", "b1"))
    report = H.inter_group_consistency(records, sheet)
    assert report.jaccard == pytest.approx(0.25)  # 2 shared of 8 total
    assert report.below_threshold is True
    assert report.set_a == sorted(set_a)
    assert report.set_b == sorted(set_b)


def test_consistency_flag_threshold_boundary():
    items = [f"i{k}" for k in range(1, 9)]
    sheet = mk_sheet([(i, "attn") for i in items])
    set_a = {"i1", "i2", "i3", "i4", "i5"}
    set_b = {"i1", "i2", "i3", "i6", "i7", "i8"}
    records = (ratings_for(set_a, items, "A", "a1")
               + ratings_for(set_b, items, "B", "b1"))
    report = H.inter_group_consistency(records, sheet)
    assert report.jaccard == pytest.approx(3 / 8)
    assert report.below_threshold is True
    # exactly at 0.40 is not below
    sheet5 = mk_sheet([(i, "attn") for i in ["i1", "i2", "i3", "i4", "i5"]])
    recs = (ratings_for({"i1", "i2", "i3"}, ["i1", "i2", "i3", "i4", "i5"], "A", "a1")
            + ratings_for({"i1", "i2", "i4", "i5"},
                          ["i1", "i2", "i3", "i4", "i5"], "B", "b1"))
    r5 = H.inter_group_consistency(recs, sheet5)
    assert r5.jaccard == pytest.approx(0.4)
    assert r5.below_threshold is False


def test_consistency_symmetry():
    items = ["i1", "i2", "i3", "i4"]
    sheet = mk_sheet([(i, "attn") for i in items])
    records = (ratings_for({"i1", "i2"}, items, "A", "a1")
               + ratings_for({"i2", "i3"}, items, "B", "b1"))
    fwd = H.inter_group_consistency(records, sheet, "A", "B")
    rev = H.inter_group_consistency(records, sheet, "B", "A")
    assert fwd.jaccard == rev.jaccard
    assert fwd.set_a == rev.set_b and fwd.set_b == rev.set_a


def test_consistency_per_method_breakdown():
    sheet = mk_sheet([("i1", "attn"), ("i2", "attn"),
                      ("i3", "kd"), ("i4", "kd")])
    items = ["i1", "i2", "i3", "i4"]
    records = (ratings_for({"i1", "i3"}, items, "A", "a1")
               + ratings_for({"i1", "i4"}, items, "B", "b1"))
    report = H.inter_group_consistency(records, sheet)
    assert report.per_method["attn"] == 1.0  # {i1} vs {i1}
    assert report.per_method["kd"] == 0.0    # {i3} vs {i4}
    assert report.jaccard == pytest.approx(1 / 3)
    # the method partition covers the overall sets exactly
    attn_ids = {"i1", "i2"}
    kd_ids = {"i3", "i4"}
    assert (set(report.set_a) & attn_ids) | (set(report.set_a) & kd_ids) \
        == set(report.set_a)


def test_consistency_both_groups_empty_sets():
    sheet = mk_sheet([("i1", "attn")])
    records = (ratings_for(set(), ["i1"], "A", "a1")
               + ratings_for(set(), ["i1"], "B", "b1"))
    report = H.inter_group_consistency(records, sheet)
    assert report.jaccard == 1.0
    assert report.per_method == {"attn": 1.0}


def test_consistency_errors():
    sheet = mk_sheet([("i1", "attn"), ("i2", "attn")])
    with pytest.raises(ContractError, match="unknown item"):
        H.inter_group_consistency([rec("zz", "a1", "informative")], sheet)
    disjoint = (ratings_for({"i1"}, ["i1"], "A", "a1")
                + ratings_for({"i2"}, ["i2"], "B", "b1"))
    with pytest.raises(ContractError, match="disjoint"):
        H.inter_group_consistency(disjoint, sheet)
    only_a = ratings_for({"i1"}, ["i1"], "A", "a1")
    with pytest.raises(ContractError, match="group 'B'"):
        H.inter_group_consistency(only_a, sheet)


def test_consistency_json_shape():
    sheet = mk_sheet([("i1", "attn")])
    records = (ratings_for({"i1"}, ["i1"], "A", "a1")
               + ratings_for({"i1"}, ["i1"], "B", "b1"))
    data = json.loads(H.inter_group_consistency(records, sheet).to_json())
    assert data["jaccard"] == 1.0
    assert data["threshold"] == 0.40
    assert data["histograms"]["A"]["informative"] == 1
    assert data["informative_or_better"]["A"] == ["i1"]


# ------------------------------------------------------------- baseline

def test_baseline_perfect_agreement():
    gold = {"n1": {"c1", "c2"}, "n2": {"c3"}}
    anns = [H.CoderAnnotation("n1", "coder1", frozenset(gold["n1"])),
            H.CoderAnnotation("n2", "coder1", frozenset(gold["n2"]))]
    report = H.human_baseline_compare(anns, gold, gold)
    assert report.human_micro_jaccard == 1.0
    assert report.system_micro_jaccard == 1.0
    assert report.ratio == pytest.approx(1.0)


def test_baseline_ratio_from_paper_style_operands():
    gold = {f"n{i}": {f"c{i}"} for i in range(100)}
    anns = [H.CoderAnnotation(f"n{i}", "coder1",
                              frozenset({f"c{i}"}) if i < 10 else frozenset())
            for i in range(100)]
    predicted = {f"n{i}": ({f"c{i}"} if i < 39 else set()) for i in range(100)}
    report = H.human_baseline_compare(anns, gold, predicted)
    assert report.human_micro_jaccard == pytest.approx(0.10)
    assert report.system_micro_jaccard == pytest.approx(0.39)
    assert report.ratio == pytest.approx(3.9)


def test_baseline_matches_micro_jaccard_composition():
    gold = {"n1": {"c1", "c2"}, "n2": {"c2"}, "n3": {"c3", "c4"}}
    predicted = {"n1": {"c1"}, "n2": {"c2", "c3"}, "n3": set()}
    anns = [H.CoderAnnotation("n1", "k1", frozenset({"c1", "c2"})),
            H.CoderAnnotation("n2", "k1", frozenset({"c5"})),
            H.CoderAnnotation("n1", "k2", frozenset({"c2"})),
            H.CoderAnnotation("n3", "k2", frozenset({"c3"}))]
    report = H.human_baseline_compare(anns, gold, predicted)
    want_human = micro_jaccard(
        [{"c1", "c2"}, {"c5"}, {"c2"}, {"c3"}],
        [gold["n1"], gold["n2"], gold["n1"], gold["n3"]])
    want_system = micro_jaccard(
        [predicted["n1"], predicted["n2"], predicted["n3"]],
        [gold["n1"], gold["n2"], gold["n3"]])
    assert report.human_micro_jaccard == pytest.approx(want_human)
    assert report.system_micro_jaccard == pytest.approx(want_system)
    assert report.ratio == pytest.approx(want_system / want_human)
    assert report.n_annotations == 4 and report.n_notes == 3


def test_baseline_zero_human_is_undefined():
    gold = {"n1": {"c1"}}
    anns = [H.CoderAnnotation("n1", "k1", frozenset({"c9"}))]
    report = H.human_baseline_compare(anns, gold, {"n1": {"c1"}})
    assert report.ratio is None
    assert json.loads(report.to_json())["ratio"] == "undefined"


def test_baseline_coverage_errors():
    gold = {"n1": {"c1"}}
    anns = [H.CoderAnnotation("n1", "k1", frozenset({"c1"})),
            H.CoderAnnotation("n9", "k1", frozenset({"c1"}))]
    with pytest.raises(ContractError, match="reference: n9"):
        H.human_baseline_compare(anns, gold, {"n1": {"c1"}, "n9": {"c1"}})
    with pytest.raises(ContractError, match="predictions: n1"):
        H.human_baseline_compare([anns[0]], gold, {})
    with pytest.raises(ContractError, match="no coder annotations"):
        H.human_baseline_compare([], gold, {})


def test_coder_annotations_round_trip(tmp_path):
    anns = [H.CoderAnnotation("n1", "k1", frozenset({"c2", "c1"})),
            H.CoderAnnotation("n2", "k2", frozenset())]
    path = tmp_path / "coders.jsonl"
    H.save_coder_annotations(anns, path)
    back = H.load_coder_annotations(path)
    assert back == anns
    path.write_text('{"note_id": "n1", "coder_id": "k1", "codes": [3]}\n',
                    encoding="utf-8")
    with pytest.raises(ParseError, match="strings"):
        H.load_coder_annotations(path)
