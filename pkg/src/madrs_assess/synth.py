"""Synthetic interviews with planted severities and an oracle mock policy.

Each patient reply that answers an item question embeds a marker phrase
drawn from that item's pool for the planted severity. The oracle policy
reads those markers back out of whatever context reached the prompt, so any
plumbing error (wrong segment, lost exchange, cross-talk) shows up as a
scoring error.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .catalog import ITEMS, Catalog, MadrsItem, default_catalog
from .prompts import NONE_LABEL, SEGMENTATION_HEADER, extract_context, extract_question
from .transcript import (
    Corpus,
    Gender,
    InterviewMeta,
    Rater,
    Speaker,
    Transcript,
    Utterance,
)

MarkerTable = Mapping[MadrsItem, Mapping[int, tuple[str, ...]]]

_FILLER = (
    "I suppose that is about right.",
    "It is hard to put into words.",
    "Not much more to add there.",
    "I have not thought about it that way before.",
    "Some weeks are different from others.",
)
_OPENERS = ("Hello.", "Good morning, sorry I am a little late.")

# Fallback for paraphrased questions that match no key question verbatim.
_KEYWORDS: dict[MadrsItem, tuple[str, ...]] = {
    MadrsItem.APPARENT_SADNESS: ("look", "appear", "expression"),
    MadrsItem.REPORTED_SADNESS: ("sad", "unhappy", "down", "depressed", "gloomy"),
    MadrsItem.INNER_TENSION: ("tense", "anxious", "nervous", "on edge", "panic"),
    MadrsItem.REDUCED_SLEEP: ("sleep", "insomnia", "wake"),
    MadrsItem.REDUCED_APPETITE: ("appetite", "eat", "food", "hungry"),
    MadrsItem.CONCENTRATION_DIFFICULTIES: ("concentrat", "focus", "attention", "read"),
    MadrsItem.LASSITUDE: ("get started", "energy", "routine", "sluggish"),
    MadrsItem.INABILITY_TO_FEEL: ("enjoy", "pleasure", "interest", "feel close"),
    MadrsItem.PESSIMISTIC_THOUGHTS: ("guilt", "failure", "worthless", "blame", "future"),
    MadrsItem.SUICIDAL_THOUGHTS: ("suicid", "not worth living", "end your life", "dead", "harm yourself"),
}


def _check_markers(table: MarkerTable) -> None:
    seen: dict[str, tuple[MadrsItem, int]] = {}
    for item in ITEMS:
        if item not in table:
            raise ValueError(f"marker table has no entry for {item.value}")
        for s in range(7):
            pool = table[item].get(s)
            if not pool:
                raise ValueError(f"empty marker pool for {item.value}/{s}")
            for phrase in pool:
                if any(ch.isdigit() for ch in phrase):
                    raise ValueError(f"marker {phrase!r} contains a digit")
                if phrase in seen:
                    raise ValueError(f"marker {phrase!r} is not unique")
                seen[phrase] = (item, s)
    phrases = list(seen)
    for a in phrases:
        for b in phrases:
            if a != b and a in b:
                raise ValueError(f"marker {a!r} is contained in {b!r}")


def load_markers(path: str | Path | None = None) -> MarkerTable:
    if path is None:
        raw = resources.files("madrs_assess.data").joinpath("markers.json").read_text(encoding="utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    doc = json.loads(raw)
    table = {
        MadrsItem(k): {int(s): tuple(pool) for s, pool in v.items()}
        for k, v in doc["items"].items()
    }
    _check_markers(table)
    return table


@lru_cache(maxsize=1)
def default_markers() -> MarkerTable:
    return load_markers()


@dataclass(frozen=True)
class SynthSpec:
    n_patients: int
    visits_per_patient: int = 1
    seed: int = 0
    noise: float = 0.0
    marker_table: MarkerTable = field(default_factory=default_markers, compare=False, repr=False)

    def __post_init__(self):
        if self.n_patients < 1 or self.visits_per_patient < 1:
            raise ValueError("n_patients and visits_per_patient must be >= 1")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must be a probability in [0, 1]")
        _check_markers(self.marker_table)

    def policy(self, catalog: Catalog | None = None) -> "OraclePolicy":
        """Oracle policy using these markers and this noise level."""
        return OraclePolicy(catalog, self.marker_table, self.noise)


def generate_corpus(spec: SynthSpec, catalog: Catalog | None = None) -> Corpus:
    """Build a labelled corpus whose clinician questions all come from the catalog pools."""
    catalog = catalog or default_catalog()
    rng = np.random.default_rng(spec.seed)
    out = []
    for p in range(spec.n_patients):
        pid = f"p{p + 1:03d}"
        gender = (Gender.FEMALE, Gender.MALE, Gender.OTHER)[rng.choice(3, p=[0.55, 0.4, 0.05])]
        education = int(rng.integers(1, 6))
        age = int(rng.integers(18, 76))
        for v in range(1, spec.visits_per_patient + 1):
            scores = {item: int(rng.integers(0, 7)) for item in ITEMS}
            texts: list[tuple[Speaker, str]] = []
            if rng.random() < 0.3:
                texts.append((Speaker.PATIENT, _OPENERS[int(rng.integers(len(_OPENERS)))]))
            for item in ITEMS:
                questions = catalog.definition_of(item).key_questions
                pool = spec.marker_table[item][scores[item]]
                marker = pool[int(rng.integers(len(pool)))]
                q_order = rng.permutation(len(questions))
                texts.append((Speaker.CLINICIAN, questions[q_order[0]]))
                texts.append((Speaker.PATIENT, f"Honestly, {marker}."))
                if rng.random() < 0.4:
                    texts.append((Speaker.CLINICIAN, questions[q_order[1]]))
                    texts.append((Speaker.PATIENT, _FILLER[int(rng.integers(len(_FILLER)))]))
            utterances = tuple(Utterance(i, s, t) for i, (s, t) in enumerate(texts))
            meta = InterviewMeta(
                interview_id=f"{pid}-v{v}",
                patient_id=pid,
                visit_number=v,
                rater_id=(Rater.R1, Rater.R2, Rater.R3)[int(rng.integers(3))],
                patient_education=education,
                patient_gender=gender,
                patient_age=age,
            )
            out.append(Transcript(meta, utterances, scores))
    return Corpus(tuple(out), source_path=f"synth:seed={spec.seed}")


def _unit_draws(prompt: str, seed: int) -> tuple[float, bool]:
    h = hashlib.sha256(f"{seed}\x00{prompt}".encode("utf-8")).digest()
    u = int.from_bytes(h[:8], "big") / 2**64
    return u, bool(h[8] & 1)


def perturb(score: int, prompt: str, seed: int, noise: float) -> int:
    """Move ``score`` by one step with probability ``noise``.

    At the ends of the scale the step points inward so every perturbation
    costs exactly one point of absolute error.
    """
    if noise <= 0:
        return score
    u, up = _unit_draws(prompt, seed)
    if u >= noise:
        return score
    if score == 0:
        return 1
    if score == 6:
        return 5
    return score + 1 if up else score - 1


class OraclePolicy:
    """Mock policy that decodes planted markers; callable as ``policy(prompt, seed)``."""

    def __init__(
        self,
        catalog: Catalog | None = None,
        markers: MarkerTable | None = None,
        noise: float = 0.0,
    ):
        if not 0.0 <= noise <= 1.0:
            raise ValueError("noise must be a probability in [0, 1]")
        self.catalog = catalog or default_catalog()
        self.markers = markers or default_markers()
        self.noise = noise
        self._question_map = {
            _norm(q): item
            for item in ITEMS
            for q in self.catalog.definition_of(item).key_questions
        }

    def __call__(self, prompt: str, seed: int = 0) -> str:
        if prompt.startswith(SEGMENTATION_HEADER):
            return self.classify(prompt)
        return self.assess(prompt, seed)

    def classify(self, prompt: str) -> str:
        question = extract_question(prompt) or ""
        norm = _norm(question)
        item = self._question_map.get(norm)
        if item is None:
            words = re.findall(r"[a-z]+", norm)
            text = " ".join(words)
            item = next((i for i, keys in _KEYWORDS.items()
                         if any(re.search(rf"\b{re.escape(k)}", text) for k in keys)), None)
        return item.value if item else NONE_LABEL

    def find_marker(self, item: MadrsItem, context: str) -> tuple[int, str, int] | None:
        """Earliest ``(severity, phrase, offset)`` for ``item`` in ``context``."""
        best = None
        for score, pool in self.markers[item].items():
            for phrase in pool:
                at = context.find(phrase)
                if at >= 0 and (best is None or at < best[2]):
                    best = (score, phrase, at)
        return best

    def assess(self, prompt: str, seed: int) -> str:
        item = _item_from_prompt(prompt)
        context = extract_context(prompt)
        hit = None if item is None or context is None else self.find_marker(item, context)
        if hit is None:
            return (
                "Rating: 0\n"
                "Explanation: No severity marker was found in the provided context.\n"
                "Key Utterances: none\n"
                "Most Relevant Question: none"
            )
        planted, phrase, at = hit
        score = perturb(planted, prompt, seed, self.noise)
        line = _line_at(context, at)
        question = _question_before(context, at)
        note = "" if score == planted else f" Perturbed from {planted}."
        return (
            f"Rating: {score}\n"
            f"Explanation: Marker for severity {planted} found.{note}\n"
            f"Key Utterances: {line}\n"
            f"Most Relevant Question: {question}"
        )


def _norm(text: str) -> str:
    return " ".join(text.lower().split())


def _item_from_prompt(prompt: str) -> MadrsItem | None:
    tag = "Item to rate: "
    at = prompt.find(tag)
    if at < 0:
        return None
    line = prompt[at + len(tag):].split("\n", 1)[0]
    key = line[line.rfind("(") + 1 : line.rfind(")")]
    try:
        return MadrsItem(key)
    except ValueError:
        return None


def _line_at(text: str, offset: int) -> str:
    start = text.rfind("\n", 0, offset) + 1
    end = text.find("\n", offset)
    return text[start : None if end < 0 else end]


def _question_before(text: str, offset: int) -> str:
    head = text[:offset]
    at = head.rfind("CLINICIAN: ")
    if at < 0:
        return "none"
    return _line_at(text, at)[len("CLINICIAN: "):]


def simulate_random_intercept(
    n_patients: int,
    n_obs: int,
    beta: np.ndarray,
    sigma_u: float,
    sigma_e: float,
    rng: np.random.Generator,
    center_noise: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw ``(X, y, groups)`` from a random-intercept model with an intercept column.

    Covariates are standard normal with a patient-level component so both
    within and between variation exist. ``center_noise`` removes the group
    means of the residual noise, which pins the variance-ratio estimate at 0
    when ``sigma_u`` is 0.
    """
    beta = np.asarray(beta, float)
    k = len(beta) - 1
    groups = np.repeat(np.arange(n_patients), n_obs)
    patient_part = rng.normal(size=(n_patients, k))[groups]
    X = np.column_stack([np.ones(len(groups)), patient_part + rng.normal(size=(len(groups), k))])
    e = rng.normal(scale=sigma_e, size=len(groups))
    if center_noise:
        e -= np.bincount(groups, weights=e)[groups] / n_obs
    u = rng.normal(scale=sigma_u, size=n_patients)[groups]
    return X, X @ beta + u + e, groups
