"""Build a taxonomy from recorded LLM transcripts, offline and deterministic.

The chat requests for each category (clustering) and each merged class
(subcategory reasoning) are canonicalized and hashed; a replay directory maps
each hash to a recorded completion. Running the pipeline against that
directory needs no network and produces the same taxonomy bytes every time.
"""

import json
import tempfile

from divesound.llm import (
    LlmConfig,
    LlmTranscript,
    TranscriptStore,
    build_cluster_prompt,
    build_subcategory_prompt,
    canonical_request,
    request_hash,
    run_taxonomy_pipeline,
)
from divesound.taxonomy import SoundClass, SourceLabel, taxonomy_stats, taxonomy_to_dict

LABELS = [
    SourceLabel("dog barking", "animals"),
    SourceLabel("dog howling", "animals"),
    SourceLabel("cat meowing", "animals"),
    SourceLabel("race car, auto racing", "vehicle"),
    SourceLabel("motorboat, speedboat", "vehicle"),
]

# What "the model" answered, keyed by what it was asked.
CANNED = {
    ("cluster", "animals"): {
        "clusters": [
            {"class_name": "dog", "member_labels": ["dog barking", "dog howling"]},
            {"class_name": "cat", "member_labels": ["cat meowing"]},
        ],
        "discarded_labels": [],
    },
    ("cluster", "vehicle"): {
        "clusters": [{"class_name": "race car", "member_labels": ["race car, auto racing"]}],
        "discarded_labels": ["motorboat, speedboat"],
    },
    ("subcat", "dog"): {
        "subcategories": [
            {"name": "small dog", "adjectives": ["yappy", "high-pitched"], "description": None},
            {"name": "large dog", "adjectives": ["deep", "booming"], "description": None},
        ]
    },
    # Only one valid entry: "cat" will be dropped (< 2 subcategories).
    ("subcat", "cat"): {
        "subcategories": [
            {"name": "house cat", "adjectives": ["soft", "gentle"], "description": None}
        ]
    },
    ("subcat", "race car"): {
        "subcategories": [
            {"name": "formula car", "adjectives": ["screaming", "high-revving"], "description": None},
            {"name": "stock car", "adjectives": ["rumbling", "throaty", "loud"], "description": None},
        ]
    },
}


def record_transcripts(replay_dir: str, config: LlmConfig) -> None:
    store = TranscriptStore(replay_dir)

    def record(messages, payload):
        canonical = canonical_request(config, messages)
        store.put(
            LlmTranscript(
                request_hash=request_hash(canonical),
                request=canonical,
                response=json.dumps(payload),
                model_id=config.model,
            )
        )

    by_category = {}
    for label in LABELS:
        by_category.setdefault(label.category, []).append(label.text)
    for category, texts in by_category.items():
        record(build_cluster_prompt(category, texts), CANNED[("cluster", category)])

    members = {"dog": ("dog barking", "dog howling"), "cat": ("cat meowing",),
               "race car": ("race car, auto racing",)}
    for name, source_labels in members.items():
        cls = SoundClass(name=name, source_labels=source_labels)
        record(build_subcategory_prompt(cls), CANNED[("subcat", name)])


def main():
    with tempfile.TemporaryDirectory() as replay_dir:
        config = LlmConfig(model="demo-model", replay_dir=replay_dir)
        record_transcripts(replay_dir, config)
        print(f"recorded {len(CANNED)} transcripts in {replay_dir}\n")

        taxonomy = run_taxonomy_pipeline(LABELS, config)
        print("resulting taxonomy:")
        print(json.dumps(taxonomy_to_dict(taxonomy), indent=2))
        print("\nstats:", taxonomy_stats(taxonomy))
        print("\nnote: 'cat' is gone - only one of its subcategories was valid,")
        print("and a diversity class needs at least two.")


if __name__ == "__main__":
    main()
