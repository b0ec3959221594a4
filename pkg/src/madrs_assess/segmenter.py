"""Question-response segmentation of diarized interviews.

Each clinician utterance opens a pair that collects the patient utterances
up to the next clinician turn. The LLM labels every question with one MADRS
item (or none) and pairs are grouped per item in interview order.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .catalog import ITEMS, Catalog, MadrsItem
from .errors import NoClinicianSpeech
from .llm import Backend, run_batch
from .prompts import NONE_LABEL, build_segmentation_prompt
from .transcript import Speaker, Transcript

log = logging.getLogger(__name__)

PREAMBLE_INDEX = -1
NO_EXCHANGES_SENTINEL = "NO RELEVANT EXCHANGES FOUND"


@dataclass(frozen=True)
class QuestionResponsePair:
    question_utterance_index: int
    question: str
    responses: tuple[str, ...] = ()
    item_label: MadrsItem | None = None
    note: str | None = None

    @property
    def is_preamble(self) -> bool:
        return self.question_utterance_index == PREAMBLE_INDEX

    def render(self) -> str:
        lines = [] if self.is_preamble else [f"CLINICIAN: {self.question}"]
        lines += [f"PATIENT: {r}" for r in self.responses]
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {
            "question_utterance_index": self.question_utterance_index,
            "question": self.question,
            "responses": list(self.responses),
            "item_label": None if self.item_label is None else self.item_label.value,
            "note": self.note,
        }

    @classmethod
    def from_json(cls, d: dict) -> "QuestionResponsePair":
        label = d.get("item_label")
        return cls(
            question_utterance_index=int(d["question_utterance_index"]),
            question=d["question"],
            responses=tuple(d.get("responses", ())),
            item_label=None if label is None else MadrsItem(label),
            note=d.get("note"),
        )


@dataclass(frozen=True)
class SegmentedInterview:
    interview_id: str
    segments: dict[MadrsItem, tuple[QuestionResponsePair, ...]]
    unmapped: tuple[QuestionResponsePair, ...] = field(default=())

    def pairs_for(self, item: MadrsItem) -> tuple[QuestionResponsePair, ...]:
        return self.segments.get(MadrsItem(item), ())

    def context_for(self, item: MadrsItem) -> str:
        """Mapped exchanges for ``item`` in interview order, or the no-exchange sentinel."""
        pairs = self.pairs_for(item)
        if not pairs:
            return NO_EXCHANGES_SENTINEL
        return "\n\n".join(p.render() for p in pairs)

    @property
    def n_pairs(self) -> int:
        return len(self.unmapped) + sum(len(v) for v in self.segments.values())

    @property
    def mapped_fraction(self) -> float:
        real = [p for p in self.unmapped if not p.is_preamble]
        mapped = sum(len(v) for v in self.segments.values())
        total = mapped + len(real)
        return 1.0 if total == 0 else mapped / total

    def to_json(self) -> dict:
        return {
            "interview_id": self.interview_id,
            "segments": {
                item.value: [p.to_json() for p in self.pairs_for(item)] for item in ITEMS
            },
            "unmapped": [p.to_json() for p in self.unmapped],
        }

    @classmethod
    def from_json(cls, d: dict) -> "SegmentedInterview":
        segments = {
            MadrsItem(k): tuple(QuestionResponsePair.from_json(p) for p in v)
            for k, v in d["segments"].items()
        }
        for item in ITEMS:
            segments.setdefault(item, ())
        return cls(
            interview_id=d["interview_id"],
            segments=segments,
            unmapped=tuple(QuestionResponsePair.from_json(p) for p in d["unmapped"]),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "SegmentedInterview":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def extract_pairs(t: Transcript) -> list[QuestionResponsePair]:
    """Split a transcript into (clinician question, patient responses) pairs.

    Patient speech before the first clinician turn goes to a synthetic
    preamble pair (index -1, empty question), marked unmapped.
    """
    if not any(u.speaker is Speaker.CLINICIAN for u in t.utterances):
        raise NoClinicianSpeech(t.interview_id)
    pairs: list[QuestionResponsePair] = []
    preamble: list[str] = []
    current: tuple[int, str] | None = None
    responses: list[str] = []
    for u in t.utterances:
        if u.speaker is Speaker.CLINICIAN:
            if current is not None:
                pairs.append(QuestionResponsePair(current[0], current[1], tuple(responses)))
            current, responses = (u.index, u.text), []
        elif current is None:
            preamble.append(u.text)
        else:
            responses.append(u.text)
    pairs.append(QuestionResponsePair(current[0], current[1], tuple(responses)))
    if preamble:
        pairs.insert(0, QuestionResponsePair(PREAMBLE_INDEX, "", tuple(preamble), note="preamble"))
    return pairs


_LABEL_PREFIX = re.compile(r"^\s*(?:label|answer|item)\s*[:=-]\s*", re.IGNORECASE)


def parse_label(text: str) -> tuple[MadrsItem | None, bool]:
    """Parse a classification answer. Returns ``(label, ok)``; ``ok`` is False when unparseable."""
    for line in text.strip().splitlines():
        line = _LABEL_PREFIX.sub("", line).strip().strip("`'\"*.").strip()
        if not line:
            continue
        if line.lower() == NONE_LABEL:
            return None, True
        try:
            return MadrsItem.parse(line), True
        except ValueError:
            return None, False
    return None, False


def classify_pairs(
    pairs: Sequence[QuestionResponsePair],
    backend: Backend,
    catalog: Catalog | None = None,
    seed: int | None = None,
) -> list[QuestionResponsePair]:
    """Label each pair via one classification request per question.

    Unparseable answers and transport failures give ``None`` with a note;
    they never abort the interview.
    """
    todo = [i for i, p in enumerate(pairs) if not p.is_preamble]
    if not todo:
        return list(pairs)
    prompts = [build_segmentation_prompt(pairs[i].question, catalog) for i in todo]
    results = run_batch(backend, prompts, [seed] * len(prompts))
    out = list(pairs)
    for i, res in zip(todo, results):
        if isinstance(res, Exception):
            note = f"classification failed: {res}"
            log.warning("pair %d: %s", pairs[i].question_utterance_index, note)
            out[i] = replace(pairs[i], item_label=None, note=note)
            continue
        label, ok = parse_label(res.text)
        note = None if ok else f"unparseable label {res.text.strip()[:80]!r}"
        if note:
            log.warning("pair %d: %s", pairs[i].question_utterance_index, note)
        out[i] = replace(pairs[i], item_label=label, note=note)
    return out


def group_segments(pairs: Sequence[QuestionResponsePair], interview_id: str) -> SegmentedInterview:
    buckets: dict[MadrsItem, list[QuestionResponsePair]] = {item: [] for item in ITEMS}
    unmapped: list[QuestionResponsePair] = []
    for p in pairs:
        if p.item_label is None:
            unmapped.append(p)
        else:
            buckets[p.item_label].append(p)
    return SegmentedInterview(
        interview_id=interview_id,
        segments={k: tuple(v) for k, v in buckets.items()},
        unmapped=tuple(unmapped),
    )


def segment_interview(
    t: Transcript,
    backend: Backend,
    catalog: Catalog | None = None,
    seed: int | None = None,
) -> SegmentedInterview:
    labeled = classify_pairs(extract_pairs(t), backend, catalog, seed)
    return group_segments(labeled, t.interview_id)
