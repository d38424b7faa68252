"""Diverse sound-event dataset construction and evaluation toolkit.

Submodules:

- ``taxonomy``   class/subcategory domain model, validation, JSON persistence
- ``llm``        two-stage LLM taxonomy construction with deterministic replay
- ``embeddings`` binary embedding container and the provider HTTP client
- ``matching``   cross-modal matching into a filtered dataset manifest
- ``metrics``    Fréchet distance, pairwise MSD, Welch's t-test
- ``fusion``     label lookup table and fused conditioning vectors
- ``cli``        the ``divesound`` command-line entry point
"""

from .embeddings import (
    EmbeddingSet,
    FrameRef,
    Modality,
    fetch_embeddings,
    l2_normalize,
    read_embeddings,
    write_embeddings,
)
from .fusion import ConditioningVector, LabelTable, build_label_table, export_conditioning, fuse
from .llm import LlmConfig, run_taxonomy_pipeline
from .matching import (
    DatasetManifest,
    MatchRecord,
    build_dataset,
    classify_audio,
    classify_frames,
    cosine_similarity,
    filter_subclasses,
    load_manifest,
    save_manifest,
)
from .metrics import (
    GaussianStats,
    fit_gaussian,
    frechet_distance,
    msd_report,
    pairwise_msd,
    welch_ttest,
)
from .taxonomy import (
    SoundClass,
    SourceLabel,
    Subcategory,
    Taxonomy,
    load_taxonomy,
    save_taxonomy,
    taxonomy_stats,
    validate_taxonomy,
)

__version__ = "0.1.0"
