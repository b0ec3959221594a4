import json

import numpy as np
import pytest

from madrs_assess.catalog import ITEMS, MadrsItem
from madrs_assess.prompts import ContextScope, PromptVariant, build_assessment_prompt, build_segmentation_prompt
from madrs_assess.synth import (
    OraclePolicy,
    SynthSpec,
    default_markers,
    generate_corpus,
    load_markers,
    perturb,
)
from madrs_assess.transcript import Speaker, dumps_corpus


def test_two_patients_one_visit():
    c = generate_corpus(SynthSpec(2, 1, seed=0))
    assert len(c) == 2 and c.labeled
    assert {t.meta.patient_id for t in c} == {"p001", "p002"}


def test_same_seed_identical():
    assert dumps_corpus(generate_corpus(SynthSpec(4, 2, seed=3))) == dumps_corpus(generate_corpus(SynthSpec(4, 2, seed=3)))
    assert dumps_corpus(generate_corpus(SynthSpec(4, 2, seed=3))) != dumps_corpus(generate_corpus(SynthSpec(4, 2, seed=4)))


def test_every_item_asked_with_marker(catalog):
    markers = default_markers()
    for t in generate_corpus(SynthSpec(3, 2, seed=1)):
        texts = [u.text for u in t.utterances]
        for item in ITEMS:
            qs = catalog.definition_of(item).key_questions
            assert any(u.speaker is Speaker.CLINICIAN and u.text in qs for u in t.utterances)
            planted = markers[item][t.clinician_scores[item]]
            assert sum(any(m in x for m in planted) for x in texts) == 1


def test_markers_disjoint_and_digit_free():
    table = default_markers()
    phrases = [p for item in ITEMS for s in range(7) for p in table[item][s]]
    assert len(phrases) == len(set(phrases))
    assert not any(ch.isdigit() for p in phrases for ch in p)


def test_bad_marker_table_rejected(tmp_path):
    doc = {"version": "x", "items": {i.value: {str(s): [f"{i.value} level {'I' * (s + 1)}"] for s in range(7)}
                                     for i in ITEMS}}
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError):  # "level I" is contained in "level II"
        load_markers(tmp_path / "m.json")


def test_oracle_assessment_reads_marker():
    m = default_markers()[MadrsItem.REDUCED_APPETITE][3][1]
    ctx = f"CLINICIAN: How is your appetite?\nPATIENT: Honestly, {m}."
    out = OraclePolicy()(build_assessment_prompt(MadrsItem.REDUCED_APPETITE, ctx).rendered_text, 0)
    assert out.startswith("Rating: 3\n")
    assert "Most Relevant Question: How is your appetite?" in out


def test_oracle_ignores_other_items_markers():
    m = default_markers()[MadrsItem.REDUCED_SLEEP][6][0]
    p = build_assessment_prompt(MadrsItem.LASSITUDE, f"PATIENT: {m}", PromptVariant.NO_CUES,
                                ContextScope.FULL_TRANSCRIPT).rendered_text
    assert OraclePolicy()(p, 0).startswith("Rating: 0\nExplanation: No severity marker")


def test_oracle_segmentation(catalog):
    q = catalog.definition_of(MadrsItem.REDUCED_SLEEP).key_questions[0]
    assert OraclePolicy()(build_segmentation_prompt(q), 0) == "reduced_sleep"
    assert OraclePolicy()(build_segmentation_prompt("Did you find parking?"), 0) == "none"


def test_noise_reproducible_and_in_range():
    prompts = [f"prompt {i}" for i in range(2000)]
    a = [perturb(3, p, 1, 0.5) for p in prompts]
    assert a == [perturb(3, p, 1, 0.5) for p in prompts]
    assert set(a) == {2, 3, 4}
    assert 0.45 < np.mean(np.array(a) != 3) < 0.55
    assert {perturb(0, p, 1, 1.0) for p in prompts} == {1}
    assert {perturb(6, p, 1, 1.0) for p in prompts} == {5}


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(0)
    with pytest.raises(ValueError):
        SynthSpec(1, noise=1.5)
    assert SynthSpec(1, noise=0.2).policy().noise == 0.2
