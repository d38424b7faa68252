"""Diversity taxonomy domain model: sound classes, subcategories, adjectives.

A taxonomy groups original dataset labels (e.g. VGGSound tags) into merged
sound event classes, each carrying subcategories that are distinguishable
both visually and auditorily. Instances are plain frozen dataclasses and are
safe for concurrent reads once constructed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

#: The nine overarching source-label categories. Closed enumeration; anything
#: else is rejected on construction and on load.
CATEGORIES = (
    "animals",
    "home",
    "music",
    "nature",
    "people",
    "sports",
    "tools",
    "vehicle",
    "others",
)

#: Schema version understood by save/load.
SCHEMA_VERSION = 1

MIN_ADJECTIVES = 2
MAX_ADJECTIVES = 4


class TaxonomyError(ValueError):
    """Invalid taxonomy data or operation on an invalid taxonomy."""


class TaxonomyParseError(TaxonomyError):
    """Malformed taxonomy file (bad JSON or wrong field shapes)."""


class TaxonomyVersionError(TaxonomyError):
    """Taxonomy file declares an unsupported schema version."""


@dataclass(frozen=True)
class SourceLabel:
    """An original dataset label plus its overarching category."""

    text: str
    category: str

    def __post_init__(self):
        if not self.text:
            raise TaxonomyError("source label text must be non-empty")
        if self.category not in CATEGORIES:
            raise TaxonomyError(
                f"unknown category {self.category!r}; expected one of {', '.join(CATEGORIES)}"
            )


@dataclass(frozen=True)
class Subcategory:
    """An in-class variant with 2-4 describing adjectives."""

    name: str
    adjectives: tuple[str, ...]
    description: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "adjectives", tuple(self.adjectives))


@dataclass(frozen=True)
class SoundClass:
    """A merged sound event class and the source labels folded into it."""

    name: str
    source_labels: tuple[str, ...]
    subcategories: tuple[Subcategory, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "source_labels", tuple(self.source_labels))
        object.__setattr__(self, "subcategories", tuple(self.subcategories))


@dataclass(frozen=True)
class Taxonomy:
    """The full class hierarchy, optionally annotated with LLM provenance.

    ``provenance`` is a free-form mapping recording at least the model id and
    the transcript hashes that produced this taxonomy, or None when the
    taxonomy was authored by hand.
    """

    version: int = SCHEMA_VERSION
    classes: tuple[SoundClass, ...] = ()
    provenance: Optional[dict] = None

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))

    def class_named(self, name: str) -> SoundClass:
        for cls in self.classes:
            if cls.name == name:
                return cls
        raise KeyError(name)


def validate_taxonomy(t: Taxonomy) -> list[str]:
    """Check every structural invariant; return one message per violation.

    An empty list means the taxonomy is valid. Violations are data, not
    exceptions: intermediate pipeline states are allowed to be broken.
    """
    violations = []
    if not isinstance(t.version, int) or t.version < 1:
        violations.append(f"version must be an integer >= 1, got {t.version!r}")

    seen_classes = set()
    label_owner: dict[str, str] = {}
    for cls in t.classes:
        if not cls.name:
            violations.append("class with empty name")
        if cls.name in seen_classes:
            violations.append(f"duplicate class name: {cls.name}")
        seen_classes.add(cls.name)

        if not cls.source_labels:
            violations.append(f"class {cls.name!r} has no source labels")
        for label in cls.source_labels:
            if not label:
                violations.append(f"class {cls.name!r} has an empty source label")
            elif label in label_owner and label_owner[label] != cls.name:
                violations.append(
                    f"source label {label!r} appears in both "
                    f"{label_owner[label]!r} and {cls.name!r}"
                )
            else:
                label_owner.setdefault(label, cls.name)

        seen_subs = set()
        for sub in cls.subcategories:
            if not sub.name:
                violations.append(f"class {cls.name!r} has a subcategory with empty name")
            if sub.name in seen_subs:
                violations.append(
                    f"class {cls.name!r} has duplicate subcategory name: {sub.name}"
                )
            seen_subs.add(sub.name)
            if not (MIN_ADJECTIVES <= len(sub.adjectives) <= MAX_ADJECTIVES):
                violations.append(
                    f"subcategory {cls.name}/{sub.name}: adjective count out of "
                    f"range [{MIN_ADJECTIVES},{MAX_ADJECTIVES}] (got {len(sub.adjectives)})"
                )
            for adj in sub.adjectives:
                if not adj:
                    violations.append(
                        f"subcategory {cls.name}/{sub.name} has an empty adjective"
                    )
    return violations


def taxonomy_warnings(t: Taxonomy) -> list[str]:
    """Non-fatal oddities: states that are legal mid-pipeline but not final.

    A class with fewer than 2 subcategories cannot express in-class diversity,
    yet intermediate states may legitimately hold singletons.
    """
    warnings = []
    for cls in t.classes:
        if len(cls.subcategories) < 2:
            warnings.append(
                f"class {cls.name!r} has {len(cls.subcategories)} "
                "subcategories; a diversity class needs >= 2"
            )
    return warnings


def taxonomy_stats(t: Taxonomy) -> dict:
    """Class count, mean subcategories per class, and a count histogram.

    The mean is computed in exact rational arithmetic and rounded to 4
    decimals. Raises TaxonomyError on an empty taxonomy.
    """
    if not t.classes:
        raise TaxonomyError("no classes")
    counts = [len(cls.subcategories) for cls in t.classes]
    mean = Fraction(sum(counts), len(counts))
    histogram: dict[int, int] = {}
    for c in counts:
        histogram[c] = histogram.get(c, 0) + 1
    return {
        "class_count": len(counts),
        "mean_subcategories": float(round(mean, 4)),
        "subcategory_histogram": dict(sorted(histogram.items())),
    }


def _class_to_dict(cls: SoundClass) -> dict:
    return {
        "name": cls.name,
        "source_labels": list(cls.source_labels),
        "subcategories": [
            {
                "name": sub.name,
                "adjectives": list(sub.adjectives),
                "description": sub.description,
            }
            for sub in cls.subcategories
        ],
    }


def taxonomy_to_dict(t: Taxonomy) -> dict:
    # Key order is the serialization schema: version, provenance, classes.
    return {
        "version": t.version,
        "provenance": t.provenance,
        "classes": [_class_to_dict(cls) for cls in t.classes],
    }


def save_taxonomy(t: Taxonomy, path) -> None:
    """Write a valid taxonomy as one UTF-8 JSON document."""
    violations = validate_taxonomy(t)
    if violations:
        raise TaxonomyError(
            "refusing to save invalid taxonomy: " + "; ".join(violations)
        )
    Path(path).write_text(
        json.dumps(taxonomy_to_dict(t), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def _require(obj: dict, key: str, kind, context: str):
    if key not in obj:
        raise TaxonomyParseError(f"{context}: missing field {key!r}")
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        raise TaxonomyParseError(
            f"{context}: field {key!r} has type {type(value).__name__}"
        )
    return value


def taxonomy_from_dict(doc: dict) -> Taxonomy:
    if not isinstance(doc, dict):
        raise TaxonomyParseError("top-level value must be an object")
    version = _require(doc, "version", int, "taxonomy")
    if version != SCHEMA_VERSION:
        raise TaxonomyVersionError(
            f"unsupported taxonomy schema version {version} (supported: {SCHEMA_VERSION})"
        )
    provenance = doc.get("provenance")
    if provenance is not None and not isinstance(provenance, dict):
        raise TaxonomyParseError("taxonomy: field 'provenance' must be an object or null")
    classes = []
    for i, cdoc in enumerate(_require(doc, "classes", list, "taxonomy")):
        ctx = f"classes[{i}]"
        if not isinstance(cdoc, dict):
            raise TaxonomyParseError(f"{ctx}: must be an object")
        name = _require(cdoc, "name", str, ctx)
        labels = _require(cdoc, "source_labels", list, ctx)
        if not all(isinstance(x, str) for x in labels):
            raise TaxonomyParseError(f"{ctx}: source_labels must be strings")
        subs = []
        for j, sdoc in enumerate(cdoc.get("subcategories", [])):
            sctx = f"{ctx}.subcategories[{j}]"
            if not isinstance(sdoc, dict):
                raise TaxonomyParseError(f"{sctx}: must be an object")
            adjectives = _require(sdoc, "adjectives", list, sctx)
            if not all(isinstance(x, str) for x in adjectives):
                raise TaxonomyParseError(f"{sctx}: adjectives must be strings")
            description = sdoc.get("description")
            if description is not None and not isinstance(description, str):
                raise TaxonomyParseError(f"{sctx}: description must be a string or null")
            subs.append(
                Subcategory(
                    name=_require(sdoc, "name", str, sctx),
                    adjectives=tuple(adjectives),
                    description=description,
                )
            )
        classes.append(
            SoundClass(name=name, source_labels=tuple(labels), subcategories=tuple(subs))
        )
    return Taxonomy(version=version, classes=tuple(classes), provenance=provenance)


def load_taxonomy(path) -> Taxonomy:
    """Load a taxonomy JSON file; load(save(t)) is structurally identical to t."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise TaxonomyParseError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TaxonomyParseError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    return taxonomy_from_dict(doc)
