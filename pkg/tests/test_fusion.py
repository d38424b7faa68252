import numpy as np
import pytest

from divesound.embeddings import EmbeddingSet, Modality, read_embeddings
from divesound.fusion import (
    FusionError,
    build_label_table,
    export_conditioning,
    fuse,
)
from divesound.matching import build_dataset
from helpers import make_planted_fixture


class TestLabelTable:
    def test_bit_identical_regeneration(self):
        names = [f"class{i}" for i in range(35)]
        t1 = build_label_table(names, 128, seed=42)
        t2 = build_label_table(names, 128, seed=42)
        assert t1.entries.tobytes() == t2.entries.tobytes()

    def test_seed_sensitivity(self):
        names = ["a", "b"]
        assert (
            build_label_table(names, 16, seed=1).entries.tobytes()
            != build_label_table(names, 16, seed=2).entries.tobytes()
        )

    def test_shape_for_35_classes(self):
        table = build_label_table([f"c{i}" for i in range(35)], 128, seed=0)
        assert table.entries.shape == (35, 128)
        assert table.entries.dtype == np.float32

    def test_order_matters(self):
        t1 = build_label_table(["a", "b"], 8, seed=3)
        t2 = build_label_table(["b", "a"], 8, seed=3)
        assert np.array_equal(t1.vector("a"), t2.vector("b"))

    def test_init_scale(self):
        table = build_label_table([f"c{i}" for i in range(200)], 64, seed=5)
        std = table.entries.std()
        assert 0.015 < std < 0.025  # normal(0, 0.02^2)

    def test_duplicate_names_rejected(self):
        with pytest.raises(FusionError):
            build_label_table(["a", "a"], 8, seed=0)


class TestFuse:
    def setup_method(self):
        self.table = build_label_table(["dog", "bird"], 128, seed=9)

    def test_base_is_exact_table_entry(self):
        vec = fuse("base", "dog", self.table)
        assert vec.values.tobytes() == self.table.vector("dog").tobytes()

    def test_text_concatenation_layout(self):
        feature = np.arange(512, dtype=np.float32)
        vec = fuse("text", "dog", self.table, feature)
        assert vec.values.shape == (640,)
        assert vec.values[:128].tobytes() == self.table.vector("dog").tobytes()
        assert vec.values[128:].tobytes() == feature.tobytes()

    def test_missing_feature_rejected(self):
        with pytest.raises(FusionError, match="requires a feature"):
            fuse("text", "dog", self.table)

    def test_extra_feature_rejected(self):
        with pytest.raises(FusionError, match="no feature"):
            fuse("base", "dog", self.table, np.ones(4, dtype=np.float32))

    def test_unknown_class(self):
        with pytest.raises(FusionError, match="cat"):
            fuse("base", "cat", self.table)

    def test_unknown_mode(self):
        with pytest.raises(FusionError, match="mode"):
            fuse("audio", "dog", self.table)


@pytest.fixture(scope="module")
def planted_manifest():
    taxonomy, audio, frames, text, aug, _ = make_planted_fixture()
    manifest = build_dataset(taxonomy, audio, frames, text, aug)
    return manifest, frames, text


class TestExport:
    def test_base_count_and_shape(self, planted_manifest, tmp_path):
        manifest, frames, text = planted_manifest
        table = build_label_table([c.class_name for c in manifest.classes], 32, seed=1)
        out = tmp_path / "base.emb"
        count = export_conditioning(manifest, table, None, None, "base", out)
        assert count == manifest.retained_clip_count()
        fused = read_embeddings(out)
        assert fused.modality == Modality.FUSED
        assert fused.dim == 32
        assert len(fused) == count
        # every clip's vector is exactly its class's label entry
        for clip_id in fused.ids[:10]:
            cls = clip_id.split("/")[0]
            assert fused.vector(clip_id).tobytes() == table.vector(cls).tobytes()

    def test_image_mode_shares_representative_suffix(self, planted_manifest, tmp_path):
        manifest, frames, text = planted_manifest
        table = build_label_table([c.class_name for c in manifest.classes], 16, seed=2)
        out = tmp_path / "image.emb"
        count = export_conditioning(manifest, table, None, frames, "image", out)
        fused = read_embeddings(out)
        assert fused.dim == 16 + frames.dim
        assert count == len(fused)
        for cls in manifest.classes:
            label = table.vector(cls.class_name)
            for sub in cls.subcategories:
                rep = frames.vector(sub.representative_frame)
                for clip_id in sub.clip_ids:
                    values = fused.vector(clip_id)
                    assert values[:16].tobytes() == label.tobytes()
                    assert values[16:].tobytes() == rep.tobytes()

    def test_text_mode_appends_subcategory_vector(self, planted_manifest, tmp_path):
        manifest, frames, text = planted_manifest
        table = build_label_table([c.class_name for c in manifest.classes], 8, seed=3)
        out = tmp_path / "text.emb"
        export_conditioning(manifest, table, text, None, "text", out)
        fused = read_embeddings(out)
        cls = manifest.classes[0]
        sub = cls.subcategories[0]
        expected_suffix = text.vector(f"{cls.class_name}/{sub.name}")
        got = fused.vector(sub.clip_ids[0])
        assert got[8:].tobytes() == expected_suffix.tobytes()

    def test_export_bytes_deterministic(self, planted_manifest, tmp_path):
        manifest, frames, text = planted_manifest
        table = build_label_table([c.class_name for c in manifest.classes], 8, seed=4)
        blobs = set()
        for run in range(2):
            out = tmp_path / f"run{run}.emb"
            export_conditioning(manifest, table, text, None, "text", out)
            blobs.add(out.read_bytes())
        assert len(blobs) == 1

    def test_missing_image_feature_named(self, planted_manifest, tmp_path):
        manifest, frames, text = planted_manifest
        table = build_label_table([c.class_name for c in manifest.classes], 8, seed=5)
        victim = manifest.classes[0].subcategories[0].representative_frame
        kept = [i for i in frames.ids if i != victim]
        pruned = EmbeddingSet(
            Modality.IMAGE, frames.dim, kept, np.vstack([frames.vector(i) for i in kept])
        )
        with pytest.raises(FusionError, match="missing"):
            export_conditioning(manifest, table, None, pruned, "image", tmp_path / "x.emb")

    def test_only_retained_clips_exported(self, planted_manifest, tmp_path):
        manifest, frames, text = planted_manifest
        table = build_label_table([c.class_name for c in manifest.classes], 8, seed=6)
        out = tmp_path / "base.emb"
        export_conditioning(manifest, table, None, None, "base", out)
        fused = read_embeddings(out)
        retained = {
            clip_id
            for cls in manifest.classes
            for sub in cls.subcategories
            for clip_id in sub.clip_ids
        }
        assert set(fused.ids) == retained
        assert list(fused.ids) == sorted(fused.ids)
