"""Transcript data model and the JSON-Lines corpus format.

One interview per line::

    {"interview_id": "p001-v1", "patient_id": "p001", "visit_number": 1,
     "rater_id": "R1", "education": 3, "gender": "female", "age": 41,
     "utterances": [{"speaker": "clinician", "text": "..."}, ...],
     "madrs_scores": {"apparent_sadness": 2, ...} | null}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .catalog import ITEMS, MadrsItem
from .errors import (
    CorpusError,
    DuplicateInterviewId,
    MalformedRecord,
    MissingGroundTruthItem,
)


class Speaker(str, Enum):
    CLINICIAN = "clinician"
    PATIENT = "patient"


class Gender(str, Enum):
    FEMALE = "female"
    MALE = "male"
    OTHER = "other"


class Rater(str, Enum):
    R1 = "R1"
    R2 = "R2"
    R3 = "R3"


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker: Speaker
    text: str

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("utterance index must be non-negative")
        if not self.text.strip():
            raise ValueError(f"utterance {self.index} has empty text")


@dataclass(frozen=True)
class InterviewMeta:
    interview_id: str
    patient_id: str
    visit_number: int
    rater_id: Rater
    patient_education: int
    patient_gender: Gender
    patient_age: int

    def __post_init__(self):
        if not self.interview_id:
            raise ValueError("interview_id must be non-empty")
        if self.visit_number < 1:
            raise ValueError("visit_number must be positive")
        if self.patient_age < 0:
            raise ValueError("age must be non-negative")


@dataclass(frozen=True)
class Transcript:
    meta: InterviewMeta
    utterances: tuple[Utterance, ...]
    clinician_scores: Mapping[MadrsItem, int] | None = None

    def __post_init__(self):
        for expected, utt in enumerate(self.utterances):
            if utt.index != expected:
                raise ValueError(
                    f"{self.meta.interview_id}: utterance indices must be contiguous from 0"
                )
        if self.clinician_scores is not None:
            missing = [i.value for i in ITEMS if i not in self.clinician_scores]
            if missing:
                raise MissingGroundTruthItem(self.meta.interview_id, missing)
            for item, score in self.clinician_scores.items():
                if not 0 <= score <= 6:
                    raise ValueError(f"{self.meta.interview_id}: {item.value} score {score} outside 0-6")

    @property
    def interview_id(self) -> str:
        return self.meta.interview_id

    @property
    def has_ground_truth(self) -> bool:
        return self.clinician_scores is not None

    @property
    def clinician_total(self) -> int | None:
        if self.clinician_scores is None:
            return None
        return sum(self.clinician_scores[i] for i in ITEMS)

    @cached_property
    def token_count(self) -> int:
        return token_count(self)


def token_count(t: Transcript) -> int:
    """Whitespace-delimited token count over every utterance."""
    return sum(len(u.text.split()) for u in t.utterances)


@dataclass(frozen=True)
class Corpus:
    transcripts: tuple[Transcript, ...]
    source_path: str = "<memory>"
    _by_id: dict[str, Transcript] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.transcripts:
            raise CorpusError(f"{self.source_path}: corpus is empty")
        by_id: dict[str, Transcript] = {}
        visits: set[tuple[str, int]] = set()
        for t in self.transcripts:
            if t.interview_id in by_id:
                raise DuplicateInterviewId(t.interview_id)
            key = (t.meta.patient_id, t.meta.visit_number)
            if key in visits:
                raise CorpusError(f"patient {key[0]!r} has two interviews for visit {key[1]}")
            by_id[t.interview_id] = t
            visits.add(key)
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.transcripts)

    def __iter__(self) -> Iterator[Transcript]:
        return iter(self.transcripts)

    def __getitem__(self, interview_id: str) -> Transcript:
        return self._by_id[interview_id]

    def __contains__(self, interview_id: object) -> bool:
        return interview_id in self._by_id

    @property
    def interview_ids(self) -> list[str]:
        return [t.interview_id for t in self.transcripts]

    @property
    def labeled(self) -> bool:
        return all(t.has_ground_truth for t in self.transcripts)


# -- serialization --------------------------------------------------------

def transcript_from_record(rec: dict) -> Transcript:
    """Build a transcript from one decoded JSON record. Raises ValueError/KeyError/TypeError."""
    if not isinstance(rec, dict):
        raise TypeError("record must be a JSON object")
    for key in ("interview_id", "patient_id", "visit_number", "rater_id",
                "education", "gender", "age", "utterances"):
        if key not in rec:
            raise KeyError(f"missing field {key!r}")
    for key in ("visit_number", "education", "age"):
        if not isinstance(rec[key], int) or isinstance(rec[key], bool):
            raise TypeError(f"{key} must be an integer")
    meta = InterviewMeta(
        interview_id=str(rec["interview_id"]),
        patient_id=str(rec["patient_id"]),
        visit_number=rec["visit_number"],
        rater_id=Rater(rec["rater_id"]),
        patient_education=rec["education"],
        patient_gender=Gender(rec["gender"]),
        patient_age=rec["age"],
    )
    if not isinstance(rec["utterances"], list) or not rec["utterances"]:
        raise ValueError("utterances must be a non-empty list")
    utterances = []
    for i, u in enumerate(rec["utterances"]):
        if not isinstance(u.get("text"), str):
            raise TypeError(f"utterance {i}: text must be a string")
        utterances.append(Utterance(i, Speaker(u["speaker"]), u["text"]))
    scores = rec.get("madrs_scores")
    parsed: dict[MadrsItem, int] | None = None
    if scores is not None:
        if not isinstance(scores, dict):
            raise TypeError("madrs_scores must be an object or null")
        parsed = {}
        for key, value in scores.items():
            if not isinstance(value, int) or isinstance(value, bool):
                raise TypeError(f"score for {key} must be an integer")
            parsed[MadrsItem.parse(key)] = value
    return Transcript(meta=meta, utterances=tuple(utterances), clinician_scores=parsed)


def transcript_to_record(t: Transcript) -> dict:
    m = t.meta
    scores = None
    if t.clinician_scores is not None:
        scores = {item.value: t.clinician_scores[item] for item in ITEMS}
    return {
        "interview_id": m.interview_id,
        "patient_id": m.patient_id,
        "visit_number": m.visit_number,
        "rater_id": m.rater_id.value,
        "education": m.patient_education,
        "gender": m.patient_gender.value,
        "age": m.patient_age,
        "utterances": [{"speaker": u.speaker.value, "text": u.text} for u in t.utterances],
        "madrs_scores": scores,
    }


def _corpus_files(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(path.glob("*.jsonl"))
        if not files:
            raise CorpusError(f"{path}: directory holds no .jsonl files")
        return files
    if not path.exists():
        raise CorpusError(f"{path}: no such file or directory")
    return [path]


def iter_records(path: Path) -> Iterable[tuple[Path, int, dict]]:
    for file in _corpus_files(path):
        with open(file, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield file, lineno, json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedRecord(lineno, f"invalid JSON ({exc.msg})", str(file)) from None


def load_corpus(path: str | Path) -> Corpus:
    """Read a corpus file (or a directory of ``*.jsonl`` files)."""
    path = Path(path)
    transcripts = []
    seen: set[str] = set()
    for file, lineno, rec in iter_records(path):
        try:
            t = transcript_from_record(rec)
        except MissingGroundTruthItem:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(lineno, str(exc).strip("'\""), str(file)) from None
        if t.interview_id in seen:
            raise DuplicateInterviewId(t.interview_id)
        seen.add(t.interview_id)
        transcripts.append(t)
    return Corpus(tuple(transcripts), source_path=str(path))


def dumps_corpus(corpus: Corpus | Iterable[Transcript]) -> str:
    return "".join(
        json.dumps(transcript_to_record(t), ensure_ascii=False) + "\n" for t in corpus
    )


def write_corpus(corpus: Corpus | Iterable[Transcript], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_corpus(corpus), encoding="utf-8")
    return path
