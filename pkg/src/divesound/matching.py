"""Cross-modal text-audio-image matching into a dataset manifest.

The pipeline classifies each clip twice against a class's subcategory texts:
its video frames against the plain subcategory names (image channel) and its
audio against adjective-augmented texts (audio channel). A clip is assigned
only when both channels pick the same subcategory; subcategories that end up
with too few clips are discarded.

Clip ids carry their class as a prefix ("{class_name}/{clip}"), matching the
"{class_name}/{subcategory}" keys used for text vectors.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .embeddings import EmbeddingSet, FrameRef, Modality
from .taxonomy import Subcategory, Taxonomy

COSINE_EPSILON = 1e-12

DEFAULT_MIN_CLIPS = 20
DEFAULT_SOFTMAX_SCALE = 100.0

FRAME_AGGREGATIONS = ("mean", "max")


class MatchInputError(ValueError):
    """Inconsistent matching inputs (dims, modalities, missing vectors)."""


def cosine_similarity(a, b) -> float:
    """Cosine similarity in [-1, 1]; 0 when either vector has ~zero norm."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise MatchInputError(f"dimension mismatch: {a.size} vs {b.size}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a < COSINE_EPSILON or norm_b < COSINE_EPSILON:
        return 0.0
    return float(np.clip(a @ b / (norm_a * norm_b), -1.0, 1.0))


def augment_subcategory_text(s: Subcategory) -> str:
    """Subcategory name followed by its adjectives, comma-joined."""
    return ", ".join((s.name, *s.adjectives))


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    # Rows with ~zero norm stay zero, so their cosine contribution is 0.
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    degenerate = norms[:, 0] < COSINE_EPSILON
    out = matrix / np.where(norms < COSINE_EPSILON, 1.0, norms)
    out[degenerate] = 0.0
    return out


def _cosine_matrix(rows: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    if rows.shape[1] != candidates.shape[1]:
        raise MatchInputError(
            f"dimension mismatch: vectors have dim {rows.shape[1]}, "
            f"candidate texts have dim {candidates.shape[1]}"
        )
    sims = _unit_rows(rows) @ _unit_rows(candidates).T
    return np.clip(sims, -1.0, 1.0)


def classify_frames(
    frames,
    subcat_text_vectors,
    scale: float = DEFAULT_SOFTMAX_SCALE,
    frame_agg: str = "mean",
) -> tuple[np.ndarray, int]:
    """Classify frames against subcategory texts.

    Per frame, a softmax over (scale * cosine similarity) gives a probability
    vector over subcategories; frame vectors are then aggregated (mean by
    default) and the argmax taken, ties to the lowest index. Returns
    (probabilities, choice).
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    texts = np.atleast_2d(np.asarray(subcat_text_vectors, dtype=np.float64))
    if frames.shape[0] < 1:
        raise MatchInputError("need at least one frame")
    if texts.shape[0] < 2:
        raise MatchInputError(f"need >= 2 subcategory texts, got {texts.shape[0]}")
    if scale <= 0:
        raise MatchInputError(f"softmax scale must be positive, got {scale}")
    if frame_agg not in FRAME_AGGREGATIONS:
        raise MatchInputError(f"unknown frame aggregation {frame_agg!r}")

    logits = scale * _cosine_matrix(frames, texts)
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    per_frame = exp / exp.sum(axis=1, keepdims=True)
    if frame_agg == "mean":
        probabilities = per_frame.mean(axis=0)
    else:
        pooled = per_frame.max(axis=0)
        probabilities = pooled / pooled.sum()
    return probabilities, int(np.argmax(probabilities))


def classify_audio(audio, augmented_text_vectors) -> tuple[int, np.ndarray]:
    """Pick the augmented subcategory text closest to the audio vector.

    Ties go to the lowest index. Returns (choice, similarities).
    """
    audio = np.asarray(audio, dtype=np.float64).reshape(1, -1)
    texts = np.atleast_2d(np.asarray(augmented_text_vectors, dtype=np.float64))
    if texts.shape[0] < 2:
        raise MatchInputError(f"need >= 2 candidate texts, got {texts.shape[0]}")
    similarities = _cosine_matrix(audio, texts)[0]
    return int(np.argmax(similarities)), similarities


@dataclass(frozen=True)
class ClipBundle:
    """One clip's audio vector plus its sampled frame vectors."""

    clip_id: str
    class_name: str
    audio_vector: np.ndarray
    frames: tuple[tuple[FrameRef, np.ndarray], ...]

    def __post_init__(self):
        if not self.frames:
            raise MatchInputError(f"clip {self.clip_id!r} has no frames")
        dims = {vec.shape[-1] for _, vec in self.frames}
        if len(dims) != 1:
            raise MatchInputError(f"clip {self.clip_id!r} frames disagree on dim: {dims}")

    @property
    def frame_matrix(self) -> np.ndarray:
        return np.vstack([vec for _, vec in self.frames])


@dataclass(frozen=True)
class ClassTexts:
    """Per-class subcategory text vectors, one row per subcategory.

    ``image_vectors`` hold the plain subcategory names (image channel);
    ``audio_vectors`` hold the adjective-augmented texts (audio channel).
    Rows of both matrices index ``subcategory_names`` in the same order.
    """

    subcategory_names: tuple[str, ...]
    image_vectors: np.ndarray
    audio_vectors: np.ndarray

    def __post_init__(self):
        k = len(self.subcategory_names)
        if self.image_vectors.shape[0] != k or self.audio_vectors.shape[0] != k:
            raise MatchInputError("text vector rows do not match subcategory names")


@dataclass(frozen=True)
class MatchRecord:
    clip_id: str
    image_choice: int
    image_probabilities: np.ndarray
    audio_choice: int
    agreed: bool
    assigned: Optional[str]


def match_clip(
    bundle: ClipBundle,
    class_texts: ClassTexts,
    scale: float = DEFAULT_SOFTMAX_SCALE,
    frame_agg: str = "mean",
) -> MatchRecord:
    """Run both channels for one clip and apply the agreement rule."""
    probabilities, image_choice = classify_frames(
        bundle.frame_matrix, class_texts.image_vectors, scale=scale, frame_agg=frame_agg
    )
    audio_choice, _ = classify_audio(bundle.audio_vector, class_texts.audio_vectors)
    agreed = image_choice == audio_choice
    return MatchRecord(
        clip_id=bundle.clip_id,
        image_choice=image_choice,
        image_probabilities=probabilities,
        audio_choice=audio_choice,
        agreed=agreed,
        assigned=class_texts.subcategory_names[image_choice] if agreed else None,
    )


def select_representative_image(
    assigned_clips: Sequence[ClipBundle], subcat_text_vector
) -> tuple[FrameRef, float]:
    """The frame most similar to the subcategory text over all assigned clips.

    Ties break to the lexicographically smallest frame id.
    """
    if not assigned_clips:
        raise MatchInputError("no assigned clips to pick a representative from")
    best_ref, best_sim = None, -np.inf
    for bundle in assigned_clips:
        for ref, vec in bundle.frames:
            sim = cosine_similarity(vec, subcat_text_vector)
            if sim > best_sim or (sim == best_sim and ref.id < best_ref.id):
                best_ref, best_sim = ref, sim
    return best_ref, float(best_sim)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestSubcategory:
    name: str
    clip_ids: tuple[str, ...]
    representative_frame: str
    representative_similarity: float

    @property
    def clip_count(self) -> int:
        return len(self.clip_ids)


@dataclass(frozen=True)
class ManifestClass:
    class_name: str
    subcategories: tuple[ManifestSubcategory, ...]


@dataclass(frozen=True)
class DroppedSubcategory:
    class_name: str
    name: str
    clip_count: int


@dataclass(frozen=True)
class DatasetManifest:
    taxonomy_version: int
    classes: tuple[ManifestClass, ...]
    dropped_subcategories: tuple[DroppedSubcategory, ...]
    unmatched_clips: tuple[str, ...]

    def retained_clip_count(self) -> int:
        return sum(sub.clip_count for cls in self.classes for sub in cls.subcategories)

    def dropped_clip_count(self) -> int:
        return sum(d.clip_count for d in self.dropped_subcategories)

    def total_clip_count(self) -> int:
        return self.retained_clip_count() + self.dropped_clip_count() + len(self.unmatched_clips)


def manifest_summary(manifest: DatasetManifest) -> dict:
    """The summary record written as the final manifest line."""
    counts = [len(cls.subcategories) for cls in manifest.classes]
    mean = float(round(Fraction(sum(counts), len(counts)), 4)) if counts else 0.0
    return {
        "class_count": len(manifest.classes),
        "mean_subcategories": mean,
        "total_clips": manifest.retained_clip_count(),
        "dropped_count": manifest.dropped_clip_count(),
        "unmatched_count": len(manifest.unmatched_clips),
    }


def filter_subclasses(
    manifest: DatasetManifest,
    min_clips: int = DEFAULT_MIN_CLIPS,
    keep_singleton_classes: bool = False,
) -> DatasetManifest:
    """Discard subcategories with fewer than min_clips clips.

    Classes left with fewer than 2 surviving subcategories are removed
    entirely (their remaining clips counted as dropped), unless
    keep_singleton_classes is set. Clip counts are conserved and the
    operation is idempotent.
    """
    if min_clips < 1:
        raise MatchInputError(f"min_clips must be >= 1, got {min_clips}")
    dropped = list(manifest.dropped_subcategories)
    kept_classes = []
    for cls in manifest.classes:
        survivors = []
        for sub in cls.subcategories:
            if sub.clip_count < min_clips:
                dropped.append(
                    DroppedSubcategory(cls.class_name, sub.name, sub.clip_count)
                )
            else:
                survivors.append(sub)
        if not survivors:
            continue
        if len(survivors) < 2 and not keep_singleton_classes:
            dropped.extend(
                DroppedSubcategory(cls.class_name, sub.name, sub.clip_count)
                for sub in survivors
            )
            continue
        kept_classes.append(replace(cls, subcategories=tuple(survivors)))
    return DatasetManifest(
        taxonomy_version=manifest.taxonomy_version,
        classes=tuple(kept_classes),
        dropped_subcategories=tuple(dropped),
        unmatched_clips=manifest.unmatched_clips,
    )


def _clip_class(clip_id: str) -> str:
    class_name, sep, _ = clip_id.partition("/")
    if not sep:
        raise MatchInputError(
            f"clip id {clip_id!r} has no class prefix (expected 'class/clip')"
        )
    return class_name


def _group_frames(frame_set: EmbeddingSet) -> dict[str, list[tuple[FrameRef, np.ndarray]]]:
    grouped: dict[str, list[tuple[FrameRef, np.ndarray]]] = {}
    for frame_id, vec in frame_set.records():
        ref = FrameRef.parse(frame_id)
        grouped.setdefault(ref.clip_id, []).append((ref, vec))
    for frames in grouped.values():
        frames.sort(key=lambda item: item[0].frame_index)
    return grouped


def _class_texts_for(
    class_name: str,
    subcategories: Sequence[Subcategory],
    text_set: EmbeddingSet,
    augmented_text_set: EmbeddingSet,
) -> ClassTexts:
    names = tuple(sub.name for sub in subcategories)
    image_rows, audio_rows = [], []
    for name in names:
        key = f"{class_name}/{name}"
        if key not in text_set:
            raise MatchInputError(f"text vector missing for subcategory {key!r}")
        if key not in augmented_text_set:
            raise MatchInputError(f"augmented text vector missing for subcategory {key!r}")
        image_rows.append(text_set.vector(key))
        audio_rows.append(augmented_text_set.vector(key))
    return ClassTexts(
        subcategory_names=names,
        image_vectors=np.vstack(image_rows),
        audio_vectors=np.vstack(audio_rows),
    )


def _match_class(
    class_name: str,
    bundles: Sequence[ClipBundle],
    class_texts: ClassTexts,
    scale: float,
    frame_agg: str,
):
    """Match one class's clips; returns (manifest class or None, zero-clip drops, unmatched)."""
    assigned: dict[str, list[ClipBundle]] = {name: [] for name in class_texts.subcategory_names}
    unmatched = []
    for bundle in bundles:
        record = match_clip(bundle, class_texts, scale=scale, frame_agg=frame_agg)
        if record.agreed:
            assigned[record.assigned].append(bundle)
        else:
            unmatched.append(bundle.clip_id)

    subcats = []
    zero_drops = []
    for index, name in enumerate(class_texts.subcategory_names):
        clips = assigned[name]
        if not clips:
            zero_drops.append(DroppedSubcategory(class_name, name, 0))
            continue
        ref, sim = select_representative_image(clips, class_texts.image_vectors[index])
        subcats.append(
            ManifestSubcategory(
                name=name,
                clip_ids=tuple(sorted(b.clip_id for b in clips)),
                representative_frame=ref.id,
                representative_similarity=sim,
            )
        )
    cls = ManifestClass(class_name=class_name, subcategories=tuple(subcats)) if subcats else None
    return cls, zero_drops, unmatched


def build_dataset(
    taxonomy: Taxonomy,
    audio_set: EmbeddingSet,
    frame_set: EmbeddingSet,
    text_set: EmbeddingSet,
    augmented_text_set: EmbeddingSet,
    min_clips: int = DEFAULT_MIN_CLIPS,
    scale: float = DEFAULT_SOFTMAX_SCALE,
    frame_agg: str = "mean",
    keep_singleton_classes: bool = False,
    workers: int = 1,
) -> DatasetManifest:
    """Run the full matching pipeline and return the filtered manifest.

    Deterministic for fixed inputs, independent of the worker count: classes
    are processed (possibly concurrently) and re-assembled in taxonomy order,
    clip lists sorted by id.
    """
    for es, expected, label in (
        (audio_set, Modality.AUDIO, "audio_set"),
        (frame_set, Modality.IMAGE, "frame_set"),
        (text_set, Modality.TEXT, "text_set"),
        (augmented_text_set, Modality.TEXT, "augmented_text_set"),
    ):
        if es.modality != expected:
            raise MatchInputError(
                f"{label} has modality {es.modality.wire_name}, expected {expected.wire_name}"
            )

    class_names = {cls.name for cls in taxonomy.classes}
    frames_by_clip = _group_frames(frame_set)

    clips_by_class: dict[str, list[ClipBundle]] = {name: [] for name in class_names}
    unmatched: list[str] = []
    for clip_id in sorted(audio_set.ids):
        class_name = _clip_class(clip_id)
        if class_name not in class_names:
            raise MatchInputError(f"clip {clip_id!r} names unknown class {class_name!r}")
        frames = frames_by_clip.get(clip_id)
        if not frames:
            unmatched.append(clip_id)  # nothing to run the image channel on
            continue
        clips_by_class[class_name].append(
            ClipBundle(
                clip_id=clip_id,
                class_name=class_name,
                audio_vector=audio_set.vector(clip_id),
                frames=tuple(frames),
            )
        )

    matchable = []
    zero_drops: list[DroppedSubcategory] = []
    for cls in taxonomy.classes:
        if len(cls.subcategories) < 2:
            # Cannot classify against a single candidate; park the clips.
            unmatched.extend(b.clip_id for b in clips_by_class[cls.name])
            zero_drops.extend(
                DroppedSubcategory(cls.name, sub.name, 0) for sub in cls.subcategories
            )
            continue
        texts = _class_texts_for(cls.name, cls.subcategories, text_set, augmented_text_set)
        matchable.append((cls.name, clips_by_class[cls.name], texts))

    def run(task):
        name, bundles, texts = task
        return _match_class(name, bundles, texts, scale, frame_agg)

    if workers > 1 and len(matchable) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, matchable))
    else:
        results = [run(task) for task in matchable]

    classes = []
    for cls_entry, drops, cls_unmatched in results:
        if cls_entry is not None:
            classes.append(cls_entry)
        zero_drops.extend(drops)
        unmatched.extend(cls_unmatched)

    manifest = DatasetManifest(
        taxonomy_version=taxonomy.version,
        classes=tuple(classes),
        dropped_subcategories=tuple(zero_drops),
        unmatched_clips=tuple(sorted(unmatched)),
    )
    return filter_subclasses(
        manifest, min_clips=min_clips, keep_singleton_classes=keep_singleton_classes
    )


# ---------------------------------------------------------------------------
# JSON Lines serialization: one line per class, then one summary record.
# ---------------------------------------------------------------------------


def manifest_to_jsonl(manifest: DatasetManifest) -> str:
    lines = []
    for cls in manifest.classes:
        lines.append(
            json.dumps(
                {
                    "class_name": cls.class_name,
                    "subcategories": [
                        {
                            "name": sub.name,
                            "clip_ids": list(sub.clip_ids),
                            "representative_frame": sub.representative_frame,
                            "representative_similarity": sub.representative_similarity,
                        }
                        for sub in cls.subcategories
                    ],
                },
                ensure_ascii=False,
            )
        )
    summary = manifest_summary(manifest)
    summary["taxonomy_version"] = manifest.taxonomy_version
    summary["dropped_subcategories"] = [
        {"class": d.class_name, "name": d.name, "clip_count": d.clip_count}
        for d in manifest.dropped_subcategories
    ]
    summary["unmatched_clips"] = list(manifest.unmatched_clips)
    lines.append(json.dumps(summary, ensure_ascii=False))
    return "\n".join(lines) + "\n"


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(manifest_to_jsonl(manifest), encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise MatchInputError(f"{path}: empty manifest")
    try:
        records = [json.loads(line) for line in lines if line.strip()]
    except json.JSONDecodeError as exc:
        raise MatchInputError(f"{path}: invalid JSON line: {exc}") from exc
    summary = records[-1]
    if "class_count" not in summary:
        raise MatchInputError(f"{path}: final line is not a summary record")
    classes = []
    for doc in records[:-1]:
        classes.append(
            ManifestClass(
                class_name=doc["class_name"],
                subcategories=tuple(
                    ManifestSubcategory(
                        name=sub["name"],
                        clip_ids=tuple(sub["clip_ids"]),
                        representative_frame=sub["representative_frame"],
                        representative_similarity=sub["representative_similarity"],
                    )
                    for sub in doc["subcategories"]
                ),
            )
        )
    return DatasetManifest(
        taxonomy_version=summary.get("taxonomy_version", 1),
        classes=tuple(classes),
        dropped_subcategories=tuple(
            DroppedSubcategory(d["class"], d["name"], d["clip_count"])
            for d in summary.get("dropped_subcategories", [])
        ),
        unmatched_clips=tuple(summary.get("unmatched_clips", [])),
    )
