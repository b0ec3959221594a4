import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from madrs_assess.catalog import ITEMS, default_catalog
from madrs_assess.llm import MockBackend
from madrs_assess.synth import OraclePolicy, SynthSpec, generate_corpus
from madrs_assess.transcript import (
    Gender,
    InterviewMeta,
    Rater,
    Speaker,
    Transcript,
    Utterance,
)


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(SynthSpec(n_patients=3, visits_per_patient=2, seed=11))


@pytest.fixture
def oracle_backend():
    return MockBackend(OraclePolicy())


def make_transcript(speakers: str, iid="i1", pid="p1", visit=1, scores=None, texts=None):
    """Transcript from a speaker string such as "CPPC" (C clinician, P patient)."""
    utts = []
    for i, s in enumerate(speakers):
        sp = Speaker.CLINICIAN if s == "C" else Speaker.PATIENT
        text = texts[i] if texts else f"{sp.value} line {i}"
        utts.append(Utterance(i, sp, text))
    meta = InterviewMeta(iid, pid, visit, Rater.R1, 3, Gender.FEMALE, 40)
    return Transcript(meta, tuple(utts), scores)


def full_scores(value=0):
    return {item: value for item in ITEMS}


CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion and fail on FAIL."""

    def check(name: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        print(line)
        CRITERIA.append(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
