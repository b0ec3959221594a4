"""Plain-text prompt assembly for item assessment and question classification.

An assessment prompt is a sequence of labelled sections joined by blank
lines. Ablation variants drop whole sections and never rewrite the ones that
remain, so any two variants differ only in the cue sections.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

from .catalog import ANCHOR_SCORES, ITEMS, Catalog, MadrsItem, default_catalog
from .errors import EmptyContext, EmptyQuestion

CONTEXT_BEGIN = "=== TRANSCRIPT BEGIN ==="
CONTEXT_END = "=== TRANSCRIPT END ==="
QUESTION_BEGIN = "=== QUESTION BEGIN ==="
QUESTION_END = "=== QUESTION END ==="
SEGMENTATION_HEADER = "MADRS Question Classification"
NONE_LABEL = "none"

OUTPUT_FIELDS = ("Rating", "Explanation", "Key Utterances", "Most Relevant Question")


class PromptVariant(str, Enum):
    ALL_CUES = "all"
    NO_DESCRIPTIVE_CUES = "no-descriptive"
    NO_DEMONSTRATIVE_CUES = "no-demonstrative"
    NO_CUES = "none"

    @property
    def descriptive(self) -> bool:
        return self in (PromptVariant.ALL_CUES, PromptVariant.NO_DEMONSTRATIVE_CUES)

    @property
    def demonstrative(self) -> bool:
        return self in (PromptVariant.ALL_CUES, PromptVariant.NO_DESCRIPTIVE_CUES)


class ContextScope(str, Enum):
    FULL_TRANSCRIPT = "full"
    SEGMENTED = "segmented"


class Section(str, Enum):
    TASK = "Task"
    ITEM_COMPONENTS = "ItemComponents"
    RATING_SCALE = "RatingScale"
    DEMONSTRATIVE_CUES = "DemonstrativeCues"
    OUTPUT_FORMAT = "OutputFormat"
    CONTEXT = "Context"


SECTION_ORDER = tuple(Section)
DESCRIPTIVE_SECTIONS = frozenset({Section.ITEM_COMPONENTS})
DEMONSTRATIVE_SECTIONS = frozenset({Section.DEMONSTRATIVE_CUES})


@dataclass(frozen=True)
class AssessmentPrompt:
    item: MadrsItem
    variant: PromptVariant
    scope: ContextScope
    rendered_text: str
    section_manifest: tuple[Section, ...]

    @property
    def sha256(self) -> str:
        return prompt_hash(self.rendered_text)


def prompt_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _task_section(item: MadrsItem, scope: ContextScope) -> str:
    if scope is ContextScope.FULL_TRANSCRIPT:
        source = (
            "Analyze a diarized transcript of a psychiatric session where the "
            "Montgomery-Asberg Depression Rating Scale (MADRS) questionnaire is being administered."
        )
    else:
        source = (
            "Analyze excerpts from a diarized transcript of a psychiatric session where the "
            "Montgomery-Asberg Depression Rating Scale (MADRS) questionnaire is being administered. "
            "The excerpts are the question-response exchanges relevant to the item below."
        )
    return (
        "Task Description:\n"
        f"{source} Predict the rating (0-6) that the practitioner would likely give for the "
        "specified MADRS item based on the patient's responses and the conversation.\n"
        f"Item to rate: {item.label} ({item.value})"
    )


def _item_components_section(item: MadrsItem, catalog: Catalog) -> str:
    d = catalog.definition_of(item)
    questions = "\n".join(f"  - {q}" for q in d.key_questions)
    return (
        "MADRS Item Components:\n"
        f"- Item Name: {item.label}\n"
        f"- Description: {d.description}\n"
        f"- Key Questions:\n{questions}"
    )


def _rating_scale_section(item: MadrsItem, catalog: Catalog) -> str:
    d = catalog.definition_of(item)
    lines = [f"- {s}: {d.anchors[s]}" for s in ANCHOR_SCORES]
    lines.append(f"-- ({d.intermediate_note})")
    return "Rating Scale (0-6):\n" + "\n".join(lines)


def _demonstrative_section(item: MadrsItem, catalog: Catalog) -> str:
    blocks = []
    for ex in catalog.exemplars_of(item):
        blocks.append(
            f"Example (rating {ex.score}):\n{ex.exchange}\nRationale: {ex.rationale}"
        )
    return "Scored Examples:\n" + "\n\n".join(blocks)


def _output_format_section() -> str:
    return (
        "Required Output Format:\n"
        "Rating: [0-6]\n"
        "Explanation: [2-3 sentences]\n"
        "Key Utterances: [relevant lines, one per line]\n"
        "Most Relevant Question: [from transcript]"
    )


def _context_section(context: str) -> str:
    return f"Transcript:\n{CONTEXT_BEGIN}\n{context}\n{CONTEXT_END}"


def prompt_sections(
    item: MadrsItem,
    context: str,
    scope: ContextScope,
    catalog: Catalog | None = None,
) -> dict[Section, str]:
    """Every section for ``item``; variants select a subset of these blocks."""
    catalog = catalog or default_catalog()
    return {
        Section.TASK: _task_section(item, scope),
        Section.ITEM_COMPONENTS: _item_components_section(item, catalog),
        Section.RATING_SCALE: _rating_scale_section(item, catalog),
        Section.DEMONSTRATIVE_CUES: _demonstrative_section(item, catalog),
        Section.OUTPUT_FORMAT: _output_format_section(),
        Section.CONTEXT: _context_section(context),
    }


def manifest_for(variant: PromptVariant) -> tuple[Section, ...]:
    drop: set[Section] = set()
    if not variant.descriptive:
        drop |= DESCRIPTIVE_SECTIONS
    if not variant.demonstrative:
        drop |= DEMONSTRATIVE_SECTIONS
    return tuple(s for s in SECTION_ORDER if s not in drop)


def build_assessment_prompt(
    item: MadrsItem,
    context: str,
    variant: PromptVariant = PromptVariant.ALL_CUES,
    scope: ContextScope = ContextScope.SEGMENTED,
    catalog: Catalog | None = None,
) -> AssessmentPrompt:
    if not context or not context.strip():
        raise EmptyContext(f"empty context for {MadrsItem(item).value}")
    item, variant, scope = MadrsItem(item), PromptVariant(variant), ContextScope(scope)
    sections = prompt_sections(item, context, scope, catalog)
    manifest = manifest_for(variant)
    text = "\n\n".join(sections[s] for s in manifest) + "\n"
    return AssessmentPrompt(item, variant, scope, text, manifest)


def segmentation_labels() -> list[str]:
    return [i.value for i in ITEMS] + [NONE_LABEL]


def build_segmentation_prompt(question: str, catalog: Catalog | None = None) -> str:
    """Prompt asking which MADRS item a clinician question probes."""
    if not question or not question.strip():
        raise EmptyQuestion("question must be non-empty")
    catalog = catalog or default_catalog()
    item_lines = []
    for item in ITEMS:
        d = catalog.definition_of(item)
        item_lines.append(f"- {item.value}: {item.label}. {d.description}")
    return (
        f"{SEGMENTATION_HEADER}\n\n"
        "You are given one question asked by a clinician during a MADRS interview. "
        "Decide which MADRS item the question is assessing.\n\n"
        "Items:\n" + "\n".join(item_lines) + "\n\n"
        "Allowed labels (answer with exactly one):\n"
        + "\n".join(f"- {label}" for label in segmentation_labels())
        + "\n\nUse \"none\" when the question does not assess any MADRS item "
        "(greetings, logistics, clarifications unrelated to symptoms).\n\n"
        f"{QUESTION_BEGIN}\n{question}\n{QUESTION_END}\n\n"
        "Answer with the label only.\n"
    )


def extract_context(prompt: str) -> str | None:
    """Return the transcript block embedded by ``build_assessment_prompt``."""
    start = prompt.find(CONTEXT_BEGIN)
    end = prompt.rfind(CONTEXT_END)
    if start < 0 or end < start:
        return None
    return prompt[start + len(CONTEXT_BEGIN) + 1 : end - 1]


def extract_question(prompt: str) -> str | None:
    start = prompt.find(QUESTION_BEGIN)
    end = prompt.rfind(QUESTION_END)
    if start < 0 or end < start:
        return None
    return prompt[start + len(QUESTION_BEGIN) + 1 : end - 1]
