"""Shared fixture builders: planted matching datasets and recorded LLM replays."""

from __future__ import annotations

import json

import numpy as np

from divesound.embeddings import EmbeddingSet, Modality
from divesound.llm import (
    LlmConfig,
    LlmTranscript,
    TranscriptStore,
    build_cluster_prompt,
    build_subcategory_prompt,
    canonical_request,
    request_hash,
)
from divesound.taxonomy import SoundClass, SourceLabel, Subcategory, Taxonomy

# ---------------------------------------------------------------------------
# Planted matching fixture
# ---------------------------------------------------------------------------

#: class name -> subcategory names (4 classes, 2-3 subcategories each).
PLANTED_LAYOUT = {
    "dog": ["small dog", "large dog"],
    "engine": ["idling engine", "revving engine", "diesel engine"],
    "bird": ["songbird", "crow"],
    "drum": ["snare drum", "bass drum", "hand drum"],
}


def _unit(v):
    return v / np.linalg.norm(v)


def make_planted_fixture(
    layout=None,
    clips_per_subcat: int = 40,
    frames_per_clip: int = 3,
    noise: float = 0.05,
    dim_image: int = 16,
    dim_audio: int = 12,
    seed: int = 7,
):
    """Synthesize unit-norm embeddings clustered around per-subcategory centroids.

    Returns (taxonomy, audio_set, frame_set, text_set, augmented_text_set,
    expected) where expected maps clip_id -> planted subcategory name.
    Centroids are orthonormal within each class, so with small noise both
    channels recover the planted assignment.
    """
    layout = layout or PLANTED_LAYOUT
    rng = np.random.default_rng(seed)

    classes = []
    audio_ids, audio_rows = [], []
    frame_ids, frame_rows = [], []
    text_ids, text_rows = [], []
    aug_ids, aug_rows = [], []
    expected = {}

    for class_name, subcat_names in layout.items():
        k = len(subcat_names)
        image_centroids = np.linalg.qr(rng.normal(size=(dim_image, k)))[0].T
        audio_centroids = np.linalg.qr(rng.normal(size=(dim_audio, k)))[0].T

        subcats = []
        for idx, subcat in enumerate(subcat_names):
            subcats.append(
                Subcategory(
                    name=subcat,
                    adjectives=(f"adjective-{idx}a", f"adjective-{idx}b"),
                )
            )
            text_ids.append(f"{class_name}/{subcat}")
            text_rows.append(_unit(image_centroids[idx]))
            aug_ids.append(f"{class_name}/{subcat}")
            aug_rows.append(_unit(audio_centroids[idx]))

            for i in range(clips_per_subcat):
                clip_id = f"{class_name}/{class_name}-{idx}-{i:03d}"
                expected[clip_id] = subcat
                audio_ids.append(clip_id)
                audio_rows.append(
                    _unit(audio_centroids[idx] + noise * rng.normal(size=dim_audio))
                )
                for f in range(frames_per_clip):
                    frame_ids.append(f"{clip_id}#frame{f}")
                    frame_rows.append(
                        _unit(image_centroids[idx] + noise * rng.normal(size=dim_image))
                    )
        classes.append(
            SoundClass(
                name=class_name,
                source_labels=(f"{class_name} sound",),
                subcategories=tuple(subcats),
            )
        )

    taxonomy = Taxonomy(version=1, classes=tuple(classes))
    audio_set = EmbeddingSet(Modality.AUDIO, dim_audio, audio_ids, np.array(audio_rows, dtype=np.float32))
    frame_set = EmbeddingSet(Modality.IMAGE, dim_image, frame_ids, np.array(frame_rows, dtype=np.float32))
    text_set = EmbeddingSet(Modality.TEXT, dim_image, text_ids, np.array(text_rows, dtype=np.float32))
    aug_set = EmbeddingSet(Modality.TEXT, dim_audio, aug_ids, np.array(aug_rows, dtype=np.float32))
    return taxonomy, audio_set, frame_set, text_set, aug_set, expected


# ---------------------------------------------------------------------------
# Recorded LLM replay fixture: 2 categories / 5 labels
# ---------------------------------------------------------------------------

REPLAY_LABELS = [
    SourceLabel("dog barking", "animals"),
    SourceLabel("dog howling", "animals"),
    SourceLabel("cat meowing", "animals"),
    SourceLabel("race car, auto racing", "vehicle"),
    SourceLabel("motorboat, speedboat", "vehicle"),
]

_CLUSTER_RESPONSES = {
    "animals": (
        "Here is the grouping you asked for:\n"
        "```json\n"
        + json.dumps(
            {
                "clusters": [
                    {"class_name": "dog", "member_labels": ["dog barking", "dog howling"]},
                    {"class_name": "cat", "member_labels": ["cat meowing"]},
                ],
                "discarded_labels": [],
            }
        )
        + "\n```\n"
    ),
    "vehicle": json.dumps(
        {
            "clusters": [
                {"class_name": "race car", "member_labels": ["race car, auto racing"]}
            ],
            "discarded_labels": ["motorboat, speedboat"],
        }
    ),
}

_SUBCATEGORY_RESPONSES = {
    "dog": json.dumps(
        {
            "subcategories": [
                {
                    "name": "small dog",
                    "adjectives": ["yappy", "high-pitched"],
                    "description": "A small breed with a sharp bark.",
                },
                {
                    "name": "large dog",
                    "adjectives": ["deep", "booming"],
                    "description": None,
                },
            ]
        }
    ),
    # Only one valid subcategory: the class must be dropped by the pipeline.
    "cat": json.dumps(
        {
            "subcategories": [
                {"name": "house cat", "adjectives": ["soft", "gentle"], "description": None},
                {"name": "loud cat", "adjectives": ["noisy"], "description": None},
            ]
        }
    ),
    "race car": json.dumps(
        {
            "subcategories": [
                {
                    "name": "formula car",
                    "adjectives": ["screaming", "high-revving"],
                    "description": None,
                },
                {
                    "name": "stock car",
                    "adjectives": ["rumbling", "throaty", "loud"],
                    "description": None,
                },
            ]
        }
    ),
}

#: Classes the replayed pipeline is expected to keep, with subcategory names.
REPLAY_EXPECTED = {
    "dog": ["small dog", "large dog"],
    "race car": ["formula car", "stock car"],
}


def replay_config(replay_dir) -> LlmConfig:
    return LlmConfig(model="fixture-model", replay_dir=str(replay_dir))


def build_replay_store(replay_dir) -> LlmConfig:
    """Record the canned transcripts for REPLAY_LABELS under replay_dir."""
    config = replay_config(replay_dir)
    store = TranscriptStore(replay_dir)

    def record(messages, response):
        canonical = canonical_request(config, messages)
        store.put(
            LlmTranscript(
                request_hash=request_hash(canonical),
                request=canonical,
                response=response,
                model_id=config.model,
            )
        )

    by_category = {}
    for label in REPLAY_LABELS:
        by_category.setdefault(label.category, []).append(label.text)
    for category, texts in by_category.items():
        record(build_cluster_prompt(category, texts), _CLUSTER_RESPONSES[category])

    members = {
        "dog": ("dog barking", "dog howling"),
        "cat": ("cat meowing",),
        "race car": ("race car, auto racing",),
    }
    for class_name, labels in members.items():
        cls = SoundClass(name=class_name, source_labels=labels)
        record(build_subcategory_prompt(cls), _SUBCATEGORY_RESPONSES[class_name])
    return config
