"""Per-item zero-shot assessment, output parsing and run bookkeeping."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

from filelock import FileLock

from .catalog import ITEMS, Catalog, MadrsItem, default_catalog
from .errors import (
    AssessmentParseError,
    ConfigError,
    MissingRating,
    RatingOutOfRange,
)
from .llm import Backend, ContextOverflow, EndpointError, LlmError, TransportError, backend_name
from .prompts import ContextScope, PromptVariant, build_assessment_prompt
from .segmenter import NO_EXCHANGES_SENTINEL, SegmentedInterview
from .transcript import Corpus, Transcript

log = logging.getLogger(__name__)

DEFAULT_REPETITIONS = 5
MAX_PARSE_RETRIES = 2

_FIELD_NAMES = {
    "rating": "rating",
    "explanation": "explanation",
    "key utterances": "key_utterances",
    "key utterance": "key_utterances",
    "most relevant question": "most_relevant_question",
}
_LABEL_RE = re.compile(
    r"^[ \t>*_#\-]*(?P<label>rating|explanation|key[ \t]+utterances?|most[ \t]+relevant[ \t]+question)"
    r"[ \t*_]*:[ \t*_]*",
    re.IGNORECASE | re.MULTILINE,
)
_INT_RE = re.compile(r"[-−]?\d+")
_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+")


@dataclass(frozen=True)
class ItemAssessment:
    item: MadrsItem
    score: int
    explanation: str
    key_utterances: tuple[str, ...]
    most_relevant_question: str
    raw_response: str
    missing_fields: tuple[str, ...] = ()
    attempts: int = 1
    prompt_sha256: str = ""

    def __post_init__(self):
        if not 0 <= self.score <= 6:
            raise RatingOutOfRange(self.score)

    ok = True


class FailureCause(str, Enum):
    MISSING_CONTEXT = "missing_context"
    PARSE_FAILURE = "parse_failure"
    CONTEXT_OVERFLOW = "context_overflow"
    TRANSPORT = "transport"
    ENDPOINT = "endpoint"


@dataclass(frozen=True)
class ItemFailure:
    item: MadrsItem
    cause: FailureCause
    detail: str = ""
    attempts: int = 0
    prompt_sha256: str = ""
    raw_response: str = ""

    ok = False


ItemOutcome = ItemAssessment | ItemFailure


def _clean_line(line: str) -> str:
    line = _BULLET_RE.sub("", line).strip()
    if len(line) >= 2 and line[0] == line[-1] and line[0] in "\"'":
        line = line[1:-1].strip()
    return line


def _first_line(text: str) -> str:
    return next((c for c in (_clean_line(l) for l in text.splitlines()) if c), "")


def parse_assessment(raw: str, item: MadrsItem) -> ItemAssessment:
    """Parse the four labelled fields of a model answer.

    Fields may appear in any order and amid extra prose. The rating is the
    first integer after the first ``Rating:`` label and is mandatory; other
    missing fields become empty and are listed in ``missing_fields``.
    """
    item = MadrsItem(item)
    fields: dict[str, str] = {}
    matches = list(_LABEL_RE.finditer(raw))
    for m, nxt in zip(matches, matches[1:] + [None]):
        name = _FIELD_NAMES[re.sub(r"\s+", " ", m.group("label").lower())]
        if name in fields:
            continue
        end = nxt.start() if nxt is not None else len(raw)
        fields[name] = raw[m.end():end].strip()

    if "rating" not in fields:
        raise MissingRating()
    num = _INT_RE.search(fields["rating"])
    if num is None:
        raise MissingRating(f"'Rating' field has no integer: {fields['rating'][:40]!r}")
    score = int(num.group().replace("−", "-"))
    if not 0 <= score <= 6:
        raise RatingOutOfRange(score)

    missing = tuple(
        label for label, key in (
            ("Explanation", "explanation"),
            ("Key Utterances", "key_utterances"),
            ("Most Relevant Question", "most_relevant_question"),
        ) if key not in fields
    )
    if missing:
        log.debug("%s: response lacks %s", item.value, ", ".join(missing))
    utterances = tuple(
        c for c in (_clean_line(l) for l in fields.get("key_utterances", "").splitlines()) if c
    )
    return ItemAssessment(
        item=item,
        score=score,
        explanation=" ".join(fields.get("explanation", "").split()),
        key_utterances=utterances,
        most_relevant_question=_first_line(fields.get("most_relevant_question", "")),
        raw_response=raw,
        missing_fields=missing,
    )


def render_transcript(t: Transcript) -> str:
    return "\n".join(f"{u.speaker.value.upper()}: {u.text}" for u in t.utterances)


def build_context(
    t: Transcript,
    seg: SegmentedInterview | None,
    item: MadrsItem,
    scope: ContextScope,
) -> str:
    if ContextScope(scope) is ContextScope.FULL_TRANSCRIPT:
        return render_transcript(t)
    if seg is None:
        raise ValueError(f"{t.interview_id}: segmented scope needs a SegmentedInterview")
    if seg.interview_id != t.interview_id:
        raise ValueError(f"segments for {seg.interview_id!r} do not belong to {t.interview_id!r}")
    return seg.context_for(item)


def derive_seed(*parts: object) -> int:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


def assess_item(
    t: Transcript,
    seg: SegmentedInterview | None,
    item: MadrsItem,
    variant: PromptVariant,
    scope: ContextScope,
    backend: Backend,
    catalog: Catalog | None = None,
    seed: int = 0,
    max_parse_retries: int = MAX_PARSE_RETRIES,
) -> ItemOutcome:
    item, scope = MadrsItem(item), ContextScope(scope)
    context = build_context(t, seg, item, scope)
    if scope is ContextScope.SEGMENTED and context == NO_EXCHANGES_SENTINEL:
        return ItemFailure(item, FailureCause.MISSING_CONTEXT, "no exchanges mapped to this item")
    prompt = build_assessment_prompt(item, context, variant, scope, catalog)
    phash = prompt.sha256
    last_error: AssessmentParseError | None = None
    last_raw = ""
    attempts = 0
    for k in range(max_parse_retries + 1):
        attempts += 1
        request_seed = seed if k == 0 else derive_seed(seed, "parse-retry", k)
        try:
            resp = backend.complete(prompt.rendered_text, request_seed)
        except ContextOverflow as exc:
            return ItemFailure(item, FailureCause.CONTEXT_OVERFLOW, str(exc), attempts, phash)
        except EndpointError as exc:
            return ItemFailure(item, FailureCause.ENDPOINT, str(exc), attempts, phash)
        except (TransportError, LlmError) as exc:
            return ItemFailure(item, FailureCause.TRANSPORT, str(exc), attempts, phash)
        try:
            parsed = parse_assessment(resp.text, item)
        except AssessmentParseError as exc:
            last_error, last_raw = exc, resp.text
            log.info("%s/%s attempt %d: %s", t.interview_id, item.value, attempts, exc)
            continue
        return replace(parsed, attempts=attempts, prompt_sha256=phash)
    return ItemFailure(
        item, FailureCause.PARSE_FAILURE,
        f"{type(last_error).__name__}: {last_error}", attempts, phash, last_raw,
    )


@dataclass(frozen=True)
class AssessmentRun:
    interview_id: str
    run_index: int
    variant: PromptVariant
    scope: ContextScope
    items: Mapping[MadrsItem, ItemOutcome]

    @property
    def complete(self) -> bool:
        return all(isinstance(self.items.get(i), ItemAssessment) for i in ITEMS)

    @property
    def total(self) -> int | None:
        """Sum of the ten item scores; ``None`` marks an incomplete run."""
        if not self.complete:
            return None
        return sum(self.items[i].score for i in ITEMS)

    def score(self, item: MadrsItem) -> int | None:
        outcome = self.items.get(MadrsItem(item))
        return outcome.score if isinstance(outcome, ItemAssessment) else None


@dataclass
class RunSet:
    variant: PromptVariant
    scope: ContextScope
    model: str
    repetitions: int
    catalog_stamp: str
    runs: dict[tuple[str, int], AssessmentRun] = field(default_factory=dict)

    def add(self, run: AssessmentRun) -> None:
        key = (run.interview_id, run.run_index)
        if key in self.runs:
            raise ValueError(f"duplicate run {key}")
        self.runs[key] = run

    @property
    def interview_ids(self) -> list[str]:
        return list(dict.fromkeys(k[0] for k in self.runs))

    @property
    def run_indices(self) -> list[int]:
        return sorted({k[1] for k in self.runs})

    def run(self, interview_id: str, run_index: int) -> AssessmentRun:
        return self.runs[(interview_id, run_index)]

    def ordered(self) -> list[AssessmentRun]:
        return list(self.runs.values())

    def failures(self) -> list[ItemFailure]:
        return [o for r in self.runs.values() for o in r.items.values() if isinstance(o, ItemFailure)]

    def to_records(self) -> list[dict]:
        return [
            outcome_record(run, run.items[item], self.model, self.catalog_stamp)
            for run in self.ordered() for item in ITEMS if item in run.items
        ]

    def dumps(self) -> str:
        return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in self.to_records())

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def from_records(cls, records: Iterable[dict], repetitions: int | None = None) -> "RunSet":
        records = list(records)
        if not records:
            raise ValueError("no records")
        head = records[0]
        rs = cls(
            variant=PromptVariant(head["variant"]),
            scope=ContextScope(head["scope"]),
            model=head["model"],
            repetitions=repetitions or 0,
            catalog_stamp=head["catalog"],
        )
        grouped: dict[tuple[str, int], dict[MadrsItem, ItemOutcome]] = {}
        for rec in records:
            if (rec["variant"], rec["scope"], rec["model"]) != (head["variant"], head["scope"], head["model"]):
                raise ValueError("records mix variants, scopes or models")
            grouped.setdefault((rec["interview_id"], rec["run_index"]), {})[MadrsItem(rec["item"])] = (
                outcome_from_record(rec)
            )
        for (iid, r), items in grouped.items():
            rs.add(AssessmentRun(iid, r, rs.variant, rs.scope, items))
        if not rs.repetitions:
            rs.repetitions = len(rs.run_indices)
        return rs

    @classmethod
    def load(cls, path: str | Path) -> "RunSet":
        with open(path, encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        return cls.from_records(records)


def outcome_record(run: AssessmentRun, o: ItemOutcome, model: str, catalog_stamp: str) -> dict:
    rec = {
        "interview_id": run.interview_id,
        "run_index": run.run_index,
        "variant": run.variant.value,
        "scope": run.scope.value,
        "model": model,
        "item": o.item.value,
        "status": "ok" if o.ok else "failed",
        "score": o.score if isinstance(o, ItemAssessment) else None,
        "explanation": o.explanation if isinstance(o, ItemAssessment) else None,
        "key_utterances": list(o.key_utterances) if isinstance(o, ItemAssessment) else None,
        "most_relevant_question": o.most_relevant_question if isinstance(o, ItemAssessment) else None,
        "missing_fields": list(o.missing_fields) if isinstance(o, ItemAssessment) else None,
        "failure_cause": o.cause.value if isinstance(o, ItemFailure) else None,
        "failure_detail": o.detail if isinstance(o, ItemFailure) else None,
        "attempts": o.attempts,
        "prompt_sha256": o.prompt_sha256,
        "catalog": catalog_stamp,
        "raw_response": o.raw_response,
    }
    return rec


def outcome_from_record(rec: dict) -> ItemOutcome:
    item = MadrsItem(rec["item"])
    if rec["status"] == "ok":
        return ItemAssessment(
            item=item,
            score=int(rec["score"]),
            explanation=rec["explanation"] or "",
            key_utterances=tuple(rec["key_utterances"] or ()),
            most_relevant_question=rec["most_relevant_question"] or "",
            raw_response=rec.get("raw_response", ""),
            missing_fields=tuple(rec.get("missing_fields") or ()),
            attempts=int(rec["attempts"]),
            prompt_sha256=rec.get("prompt_sha256", ""),
        )
    return ItemFailure(
        item=item,
        cause=FailureCause(rec["failure_cause"]),
        detail=rec.get("failure_detail") or "",
        attempts=int(rec["attempts"]),
        prompt_sha256=rec.get("prompt_sha256", ""),
        raw_response=rec.get("raw_response", ""),
    )


class RunStore:
    """Append-only JSONL checkpoint of completed runs.

    A run's ten records are written in one locked append. On open, records
    of runs that did not reach ten items (an interrupted write) are dropped
    so a resumed job rewrites them from scratch.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = FileLock(str(self.path) + ".lock")
        self._done: dict[tuple[str, int], dict[MadrsItem, dict]] = {}
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        with self._lock:
            good: list[str] = []
            grouped: dict[tuple[str, int], list[tuple[str, dict]]] = {}
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.endswith("\n"):
                        break
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError:
                        break
                    grouped.setdefault((rec["interview_id"], rec["run_index"]), []).append((line, rec))
            for key, entries in grouped.items():
                if len({e[1]["item"] for e in entries}) == len(ITEMS):
                    self._done[key] = {MadrsItem(rec["item"]): rec for _, rec in entries}
                    good.extend(line for line, _ in entries)
            text = "".join(good)
            if text != self.path.read_text(encoding="utf-8"):
                log.warning("%s: dropping incomplete trailing runs", self.path)
                self.path.write_text(text, encoding="utf-8")

    def has(self, interview_id: str, run_index: int) -> bool:
        return (interview_id, run_index) in self._done

    def records(self, interview_id: str, run_index: int) -> dict[MadrsItem, dict]:
        return self._done[(interview_id, run_index)]

    def check_compatible(self, variant: PromptVariant, scope: ContextScope, model: str, catalog: str) -> None:
        for recs in self._done.values():
            rec = next(iter(recs.values()))
            found = (rec["variant"], rec["scope"], rec["model"], rec["catalog"])
            wanted = (variant.value, scope.value, model, catalog)
            if found != wanted:
                raise ConfigError(f"{self.path} holds results for {found}, not {wanted}")
            return

    def append_run(self, records: list[dict]) -> None:
        text = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(text)
        rec = records[0]
        self._done[(rec["interview_id"], rec["run_index"])] = {MadrsItem(r["item"]): r for r in records}


def assess_run(
    t: Transcript,
    seg: SegmentedInterview | None,
    run_index: int,
    variant: PromptVariant,
    scope: ContextScope,
    backend: Backend,
    catalog: Catalog | None = None,
    seed: int = 0,
) -> AssessmentRun:
    """Assess all ten items of one interview for one repetition."""

    def one(item: MadrsItem) -> ItemOutcome:
        item_seed = derive_seed(seed, t.interview_id, run_index, item.value)
        return assess_item(t, seg, item, variant, scope, backend, catalog, item_seed)

    with ThreadPoolExecutor(max_workers=backend.max_in_flight) as pool:
        outcomes = list(pool.map(one, ITEMS))
    return AssessmentRun(t.interview_id, run_index, variant, scope, dict(zip(ITEMS, outcomes)))


def assess_corpus(
    corpus: Corpus,
    variant: PromptVariant,
    scope: ContextScope,
    backend: Backend,
    repetitions: int = DEFAULT_REPETITIONS,
    segments: Mapping[str, SegmentedInterview] | None = None,
    catalog: Catalog | None = None,
    seed: int = 0,
    store: RunStore | None = None,
) -> RunSet:
    """Run ``repetitions`` independent assessments of every interview.

    Each interview is handled in isolation. With a ``store``, completed runs
    are skipped and new ones appended as they finish, so an interrupted job
    resumes where it stopped.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    variant, scope = PromptVariant(variant), ContextScope(scope)
    catalog = catalog or default_catalog()
    model = backend_name(backend)
    if scope is ContextScope.SEGMENTED:
        missing = [t.interview_id for t in corpus if segments is None or t.interview_id not in segments]
        if missing:
            raise ConfigError(f"segmented scope needs segments for {len(missing)} interview(s), e.g. {missing[0]}")
    if store is not None:
        store.check_compatible(variant, scope, model, catalog.stamp)
    rs = RunSet(variant, scope, model, repetitions, catalog.stamp)
    for t in corpus:
        seg = segments.get(t.interview_id) if segments else None
        for r in range(1, repetitions + 1):
            if store is not None and store.has(t.interview_id, r):
                items = {k: outcome_from_record(v) for k, v in store.records(t.interview_id, r).items()}
                rs.add(AssessmentRun(t.interview_id, r, variant, scope, items))
                continue
            run = assess_run(t, seg, r, variant, scope, backend, catalog, seed)
            rs.add(run)
            if store is not None:
                store.append_run([outcome_record(run, run.items[i], model, catalog.stamp) for i in ITEMS])
        log.info("assessed %s (%d runs)", t.interview_id, repetitions)
    return rs
