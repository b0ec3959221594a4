"""The ten MADRS items and the cue library used to build prompts.

Catalog content lives in a JSON data file so it can be swapped without code
changes. Every loaded catalog carries its declared version plus a SHA-256 of
the file bytes, which assessment records stamp alongside their results.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import CatalogError

ANCHOR_SCORES = (0, 2, 4, 6)
INTERMEDIATE_NOTE = "Odd numbers represent intermediate states"


class MadrsItem(str, Enum):
    """MADRS items in scale order. Values are the canonical snake-case keys."""

    APPARENT_SADNESS = "apparent_sadness"
    REPORTED_SADNESS = "reported_sadness"
    INNER_TENSION = "inner_tension"
    REDUCED_SLEEP = "reduced_sleep"
    REDUCED_APPETITE = "reduced_appetite"
    CONCENTRATION_DIFFICULTIES = "concentration_difficulties"
    LASSITUDE = "lassitude"
    INABILITY_TO_FEEL = "inability_to_feel"
    PESSIMISTIC_THOUGHTS = "pessimistic_thoughts"
    SUICIDAL_THOUGHTS = "suicidal_thoughts"

    @property
    def label(self) -> str:
        return self.value.replace("_", " ").title()

    @property
    def position(self) -> int:
        return ITEMS.index(self)

    @classmethod
    def parse(cls, text: str) -> "MadrsItem":
        """Accept either the snake-case key or the title-case label."""
        key = text.strip().lower().replace(" ", "_").replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown MADRS item {text!r}") from None


ITEMS: tuple[MadrsItem, ...] = tuple(MadrsItem)


@dataclass(frozen=True)
class ItemDefinition:
    item: MadrsItem
    description: str
    key_questions: tuple[str, ...]
    anchors: dict[int, str]
    intermediate_note: str = INTERMEDIATE_NOTE
    authored: bool = True

    def __post_init__(self):
        if not self.description.strip():
            raise CatalogError(f"{self.item.value}: empty description")
        if not self.key_questions or not all(q.strip() for q in self.key_questions):
            raise CatalogError(f"{self.item.value}: key_questions must be non-empty")
        missing = [s for s in ANCHOR_SCORES if not self.anchors.get(s, "").strip()]
        if missing:
            raise CatalogError(f"{self.item.value}: missing anchors for scores {missing}")


@dataclass(frozen=True)
class DemonstrativeExemplar:
    item: MadrsItem
    score: int
    exchange: str
    rationale: str

    def __post_init__(self):
        if not 0 <= self.score <= 6:
            raise CatalogError(f"{self.item.value}: exemplar score {self.score} outside 0-6")
        if not self.exchange.strip() or not self.rationale.strip():
            raise CatalogError(f"{self.item.value}: exemplar {self.score} has empty text")


class Catalog:
    """Closed mapping from each MADRS item to its definition and 7 exemplars."""

    def __init__(
        self,
        version: str,
        definitions: dict[MadrsItem, ItemDefinition],
        exemplars: dict[MadrsItem, tuple[DemonstrativeExemplar, ...]],
        content_hash: str,
        source: str = "<memory>",
    ):
        self.version = version
        self.content_hash = content_hash
        self.source = source
        self._definitions = dict(definitions)
        self._exemplars = dict(exemplars)
        self._validate()

    def _validate(self) -> None:
        for item in ITEMS:
            if item not in self._definitions:
                raise CatalogError(f"catalog has no definition for {item.value}")
            scores = sorted(e.score for e in self._exemplars.get(item, ()))
            if scores != list(range(7)):
                raise CatalogError(
                    f"{item.value}: exemplars must cover scores 0-6 exactly once, got {scores}"
                )
        seen: dict[str, MadrsItem] = {}
        for item, definition in self._definitions.items():
            for q in definition.key_questions:
                if q in seen and seen[q] is not item:
                    raise CatalogError(f"key question {q!r} shared by {seen[q].value} and {item.value}")
                seen[q] = item

    def definition_of(self, item: MadrsItem) -> ItemDefinition:
        return self._definitions[MadrsItem(item)]

    def exemplars_of(self, item: MadrsItem) -> list[DemonstrativeExemplar]:
        return sorted(self._exemplars[MadrsItem(item)], key=lambda e: e.score)

    @property
    def stamp(self) -> str:
        """Short identifier recorded with every assessment: ``version+hash12``."""
        return f"{self.version}+{self.content_hash[:12]}"

    @classmethod
    def from_bytes(cls, raw: bytes, source: str = "<memory>") -> "Catalog":
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CatalogError(f"{source}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict) or "items" not in doc or "version" not in doc:
            raise CatalogError(f"{source}: expected an object with 'version' and 'items'")
        definitions: dict[MadrsItem, ItemDefinition] = {}
        exemplars: dict[MadrsItem, tuple[DemonstrativeExemplar, ...]] = {}
        for entry in doc["items"]:
            try:
                item = MadrsItem.parse(entry["item"])
                if item in definitions:
                    raise CatalogError(f"{source}: duplicate entry for {item.value}")
                definitions[item] = ItemDefinition(
                    item=item,
                    description=entry["description"],
                    key_questions=tuple(entry["key_questions"]),
                    anchors={int(k): v for k, v in entry["anchors"].items()},
                    authored=bool(entry.get("authored", True)),
                )
                exemplars[item] = tuple(
                    DemonstrativeExemplar(item, int(e["score"]), e["exchange"], e["rationale"])
                    for e in entry["exemplars"]
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise CatalogError(f"{source}: bad item entry ({exc})") from None
        return cls(
            version=str(doc["version"]),
            definitions=definitions,
            exemplars=exemplars,
            content_hash=hashlib.sha256(raw).hexdigest(),
            source=source,
        )


def load_catalog(path: str | Path | None = None) -> Catalog:
    """Load a catalog file; ``None`` loads the packaged default."""
    if path is None:
        return default_catalog()
    path = Path(path)
    return Catalog.from_bytes(path.read_bytes(), source=str(path))


@lru_cache(maxsize=1)
def default_catalog() -> Catalog:
    raw = resources.files("madrs_assess.data").joinpath("catalog.json").read_bytes()
    return Catalog.from_bytes(raw, source="madrs_assess/data/catalog.json")


def definition_of(item: MadrsItem, catalog: Catalog | None = None) -> ItemDefinition:
    return (catalog or default_catalog()).definition_of(item)


def exemplars_of(item: MadrsItem, catalog: Catalog | None = None) -> list[DemonstrativeExemplar]:
    return (catalog or default_catalog()).exemplars_of(item)
