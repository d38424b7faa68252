"""Conditioning vectors: label lookup table plus optional modality features.

Base mode conditions a generator on the class label vector alone; text and
image modes concatenate the subcategory text feature or the representative
image feature after it. The table is seeded, so every export is reproducible
bit for bit.
"""

import tempfile
from pathlib import Path

import numpy as np

from divesound.embeddings import read_embeddings
from divesound.fusion import build_label_table, export_conditioning, fuse
from divesound.matching import (
    DatasetManifest,
    ManifestClass,
    ManifestSubcategory,
)


def main():
    table = build_label_table(["dog", "drum"], label_dim=8, seed=42)
    print("label table entries (seed 42):")
    for name in table.class_names:
        print(f"  {name}: {np.round(table.vector(name), 4)}")
    again = build_label_table(["dog", "drum"], label_dim=8, seed=42)
    print("rebuild is bit-identical:", table.entries.tobytes() == again.entries.tobytes())

    feature = np.linspace(0, 1, 4, dtype=np.float32)
    base = fuse("base", "dog", table)
    text = fuse("text", "dog", table, feature)
    print(f"\nbase vector length {base.values.size}; text-fused length {text.values.size}")
    print("fused prefix equals label entry:", text.values[:8].tobytes() == base.values.tobytes())

    # A tiny hand-rolled manifest: 2 clips of one subcategory.
    from divesound.embeddings import EmbeddingSet, Modality

    manifest = DatasetManifest(
        taxonomy_version=1,
        classes=(
            ManifestClass(
                "dog",
                (
                    ManifestSubcategory(
                        "small dog", ("dog/c1", "dog/c2"), "dog/c1#frame0", 0.98
                    ),
                    ManifestSubcategory(
                        "large dog", ("dog/c3", "dog/c4"), "dog/c3#frame0", 0.97
                    ),
                ),
            ),
        ),
        dropped_subcategories=(),
        unmatched_clips=(),
    )
    text_set = EmbeddingSet(
        Modality.TEXT,
        4,
        ["dog/small dog", "dog/large dog"],
        np.array([[1, 0, 0, 0], [0, 1, 0, 0]], dtype=np.float32),
    )
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "fused.emb"
        count = export_conditioning(manifest, table, text_set, None, "text", out)
        fused = read_embeddings(out)
        print(f"\nexported {count} fused vectors, dim {fused.dim} (8 label + 4 text)")
        print("clip ids:", fused.ids)


if __name__ == "__main__":
    main()
