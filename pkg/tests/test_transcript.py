import json

import pytest
from hypothesis import given, strategies as st

from conftest import full_scores, make_transcript
from madrs_assess.catalog import ITEMS
from madrs_assess.errors import (
    CorpusError,
    DuplicateInterviewId,
    MalformedRecord,
    MissingGroundTruthItem,
)
from madrs_assess.transcript import (
    Corpus,
    dumps_corpus,
    load_corpus,
    token_count,
    transcript_from_record,
)


def record(iid="a1", pid="p1", visit=1, scores="full", utterances=None):
    rec = {
        "interview_id": iid, "patient_id": pid, "visit_number": visit, "rater_id": "R2",
        "education": 4, "gender": "male", "age": 33,
        "utterances": utterances or [
            {"speaker": "clinician", "text": "How are you?"},
            {"speaker": "patient", "text": "Fine."},
            {"speaker": "clinician", "text": "Sleep?"},
            {"speaker": "patient", "text": "Poorly."},
        ],
        "madrs_scores": {i.value: k % 7 for k, i in enumerate(ITEMS)} if scores == "full" else scores,
    }
    return rec


def write(tmp_path, *recs, name="c.jsonl"):
    p = tmp_path / name
    p.write_text("".join(json.dumps(r) + "\n" for r in recs), encoding="utf-8")
    return p


def test_load_single_interview_total_is_item_sum(tmp_path):
    c = load_corpus(write(tmp_path, record()))
    assert len(c) == 1
    t = c["a1"]
    assert len(t.utterances) == 4
    assert t.clinician_total == sum(k % 7 for k in range(10)) == 24


def test_partial_scores_block_raises(tmp_path):
    scores = {i.value: 1 for i in ITEMS[:9]}
    with pytest.raises(MissingGroundTruthItem) as ei:
        load_corpus(write(tmp_path, record(scores=scores)))
    assert ei.value.missing == ["suicidal_thoughts"]


def test_duplicate_interview_id(tmp_path):
    with pytest.raises(DuplicateInterviewId):
        load_corpus(write(tmp_path, record(), record(visit=2)))


def test_duplicate_patient_visit_pair():
    t1 = make_transcript("CP", iid="x", visit=1)
    t2 = make_transcript("CP", iid="y", visit=1)
    with pytest.raises(CorpusError):
        Corpus((t1, t2))


def test_malformed_record_reports_line(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps(record()) + "\n{not json\n", encoding="utf-8")
    with pytest.raises(MalformedRecord) as ei:
        load_corpus(p)
    assert ei.value.line == 2


@pytest.mark.parametrize("mutate", [
    lambda r: r.pop("rater_id"),
    lambda r: r.update(rater_id="R9"),
    lambda r: r.update(visit_number=0),
    lambda r: r.update(age="old"),
    lambda r: r.update(utterances=[]),
    lambda r: r.update(utterances=[{"speaker": "patient", "text": "   "}]),
    lambda r: r.update(madrs_scores={i.value: 7 for i in ITEMS}),
])
def test_invalid_fields_are_malformed(tmp_path, mutate):
    rec = record()
    mutate(rec)
    with pytest.raises(MalformedRecord):
        load_corpus(write(tmp_path, rec))


def test_empty_corpus_rejected(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text("\n", encoding="utf-8")
    with pytest.raises(CorpusError):
        load_corpus(p)


def test_unlabeled_transcript_allowed(tmp_path):
    c = load_corpus(write(tmp_path, record(scores=None)))
    assert not c.labeled
    assert c["a1"].clinician_total is None


def test_directory_of_files(tmp_path):
    write(tmp_path, record("a1"), name="one.jsonl")
    write(tmp_path, record("b1", pid="p2"), name="two.jsonl")
    assert load_corpus(tmp_path).interview_ids == ["a1", "b1"]


@pytest.mark.parametrize("texts,expected", [
    (["I feel fine"], 3),
    (["Hello", "Hi there"], 3),
    (["a   b"], 2),
])
def test_token_count(texts, expected):
    t = make_transcript("C" * len(texts), texts=texts)
    assert token_count(t) == expected == t.token_count


def test_round_trip_bit_identical(tmp_path, small_corpus):
    text = dumps_corpus(small_corpus)
    p = tmp_path / "c.jsonl"
    p.write_text(text, encoding="utf-8")
    assert dumps_corpus(load_corpus(p)) == text


def test_round_trip_non_ascii(tmp_path):
    rec = record(utterances=[{"speaker": "clinician", "text": "Ça va? über naïve"}])
    c = load_corpus(write(tmp_path, rec))
    assert dumps_corpus(c) == json.dumps(rec, ensure_ascii=False) + "\n"
    assert transcript_from_record(rec).utterances[0].text == "Ça va? über naïve"


words = st.lists(st.text(alphabet="abcxyz", min_size=1, max_size=5), min_size=2, max_size=12)


@given(words, st.integers(min_value=1, max_value=11))
def test_token_count_invariant_under_resplitting(ws, cut):
    cut = min(cut, len(ws) - 1)
    whole = make_transcript("P", texts=[" ".join(ws)])
    split = make_transcript("PP", texts=[" ".join(ws[:cut]), " ".join(ws[cut:])])
    assert token_count(whole) == token_count(split) == len(ws)


@given(st.lists(st.integers(0, 6), min_size=10, max_size=10))
def test_total_is_sum(values):
    scores = dict(zip(ITEMS, values))
    t = make_transcript("CP", scores=scores)
    assert t.clinician_total == sum(values)
    assert 0 <= t.clinician_total <= 60


def test_default_scores_helper():
    assert make_transcript("C", scores=full_scores(6)).clinician_total == 60
