"""Conditioning embeddings for downstream generators.

Each class gets a fixed pseudo-random label vector from a seeded lookup
table. A conditioning vector is either that label vector alone (base mode)
or the label vector concatenated with a subcategory text feature or the
subcategory's representative-image feature (label first). Exports write one
fused vector per retained clip in the version-2 embedding container.
"""

from __future__ import annotations

import numpy as np

from dataclasses import dataclass
from typing import Optional, Sequence

from .embeddings import EmbeddingSet, Modality, write_embeddings
from .matching import DatasetManifest

#: Standard deviation of the label-table initialization.
LABEL_INIT_STD = 0.02

MODES = ("base", "text", "image")


class FusionError(ValueError):
    """Unknown class, missing feature, or inconsistent fusion inputs."""


@dataclass(frozen=True)
class LabelTable:
    """Seeded lookup table mapping class names to label vectors.

    Rebuilding with the same (class order, dim, seed) yields bit-identical
    entries.
    """

    label_dim: int
    seed: int
    class_names: tuple[str, ...]
    entries: np.ndarray  # (len(class_names), label_dim) float32, read-only

    def vector(self, class_name: str) -> np.ndarray:
        try:
            return self.entries[self.class_names.index(class_name)]
        except ValueError:
            raise FusionError(f"class {class_name!r} not in label table") from None

    def __contains__(self, class_name: str) -> bool:
        return class_name in self.class_names


def build_label_table(class_names: Sequence[str], label_dim: int, seed: int) -> LabelTable:
    """Draw one normal(0, 0.02^2) vector per class, in the given class order."""
    names = tuple(class_names)
    if len(set(names)) != len(names):
        raise FusionError("class names must be distinct")
    if label_dim < 1:
        raise FusionError(f"label_dim must be >= 1, got {label_dim}")
    rng = np.random.default_rng(seed)
    entries = rng.normal(0.0, LABEL_INIT_STD, size=(len(names), label_dim)).astype(np.float32)
    entries.setflags(write=False)
    return LabelTable(label_dim=label_dim, seed=seed, class_names=names, entries=entries)


@dataclass(frozen=True)
class ConditioningVector:
    key: str  # clip id (exports) or class name (ad hoc fusion)
    mode: str
    values: np.ndarray


def fuse(
    mode: str,
    class_name: str,
    table: LabelTable,
    feature: Optional[np.ndarray] = None,
) -> ConditioningVector:
    """Build one conditioning vector: label entry, then the optional feature."""
    if mode not in MODES:
        raise FusionError(f"unknown fusion mode {mode!r}; expected one of {MODES}")
    label = table.vector(class_name)
    if mode == "base":
        if feature is not None:
            raise FusionError("base mode takes no feature vector")
        values = label
    else:
        if feature is None:
            raise FusionError(f"{mode} mode requires a feature vector")
        feature = np.asarray(feature, dtype=np.float32).ravel()
        values = np.concatenate([label, feature])
    return ConditioningVector(key=class_name, mode=mode, values=values)


def export_conditioning(
    manifest: DatasetManifest,
    table: LabelTable,
    text_set: Optional[EmbeddingSet],
    image_set: Optional[EmbeddingSet],
    mode: str,
    path,
) -> int:
    """Write one fused vector per retained clip, ordered by clip id.

    text mode appends the clip's subcategory text vector (key
    "{class}/{subcategory}"); image mode appends the subcategory's
    representative-frame vector. Returns the number of vectors written.
    """
    if mode not in MODES:
        raise FusionError(f"unknown fusion mode {mode!r}; expected one of {MODES}")
    if mode == "text" and text_set is None:
        raise FusionError("text mode requires a text embedding set")
    if mode == "image" and image_set is None:
        raise FusionError("image mode requires an image embedding set")

    rows: list[tuple[str, np.ndarray]] = []
    for cls in manifest.classes:
        if cls.class_name not in table:
            raise FusionError(f"class {cls.class_name!r} not in label table")
        label = table.vector(cls.class_name)
        for sub in cls.subcategories:
            if mode == "base":
                suffix = None
            elif mode == "text":
                key = f"{cls.class_name}/{sub.name}"
                if key not in text_set:
                    raise FusionError(f"text feature missing for subcategory {key!r}")
                suffix = text_set.vector(key)
            else:
                if sub.representative_frame not in image_set:
                    raise FusionError(
                        f"image feature missing for representative frame "
                        f"{sub.representative_frame!r}"
                    )
                suffix = image_set.vector(sub.representative_frame)
            for clip_id in sub.clip_ids:
                values = label if suffix is None else np.concatenate([label, suffix])
                rows.append((clip_id, values))

    rows.sort(key=lambda item: item[0])
    if mode == "base":
        dim = table.label_dim
    elif mode == "text":
        dim = table.label_dim + text_set.dim
    else:
        dim = table.label_dim + image_set.dim
    fused = EmbeddingSet(
        Modality.FUSED,
        dim,
        [clip_id for clip_id, _ in rows],
        np.vstack([v for _, v in rows]) if rows else np.empty((0, dim), dtype=np.float32),
    )
    write_embeddings(fused, path)
    return len(rows)
