"""The binary embedding container: layout, round trips, normalization.

Files start with a 19-byte header (magic "DVSE", version, modality byte,
dim, count, all little-endian) followed by streamed records. Float32 bit
patterns survive a round trip exactly, and any header/payload inconsistency
is a hard read error.
"""

import tempfile
from pathlib import Path

import numpy as np

from divesound.embeddings import (
    EmbeddingFormatError,
    EmbeddingSet,
    Modality,
    l2_normalize,
    read_embeddings,
    write_embeddings,
)


def main():
    rng = np.random.default_rng(0)
    vectors = rng.normal(size=(3, 4)).astype(np.float32)
    vectors[0, 0] = np.float32(1.4e-45)  # subnormals survive too
    es = EmbeddingSet(Modality.AUDIO, 4, ["clip-a", "clip-b", "clip-c"], vectors)

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "demo.emb"
        n = write_embeddings(es, path)
        print(f"wrote {len(es)} vectors, {n} bytes")
        print("header bytes:", path.read_bytes()[:19].hex(" "))

        loaded = read_embeddings(path)
        print("bit-exact round trip:", loaded.vectors.tobytes() == vectors.tobytes())

        corrupted = bytearray(path.read_bytes())
        corrupted[0] ^= 0xFF
        bad = Path(tmp) / "bad.emb"
        bad.write_bytes(bytes(corrupted))
        try:
            read_embeddings(bad)
        except EmbeddingFormatError as exc:
            print("corrupted header rejected:", exc)

    mixed = EmbeddingSet(
        Modality.TEXT, 2, ["x", "zero"], np.array([[3, 4], [0, 0]], dtype=np.float32)
    )
    normalized, warnings = l2_normalize(mixed)
    print("\n[3,4] normalized ->", normalized.vector("x"))
    print("zero-vector warnings:", warnings)


if __name__ == "__main__":
    main()
