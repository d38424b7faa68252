"""Encoder backends for the provider service.

An encoder turns a batch of items into fixed-dimension vectors. The stub
backend needs no model weights: each vector is a seeded pseudo-random unit
vector derived from (modality, item id, seed), so responses are fully
deterministic and stable across processes. Real pretrained encoders plug in
through the same ``Encoder`` protocol (see the README for a transformers
recipe); the service never cares which backend it is running.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np


class EncoderError(RuntimeError):
    """Inference failed inside an encoder backend."""


class Encoder(Protocol):
    model_id: str
    dim: int

    def embed(self, items: Sequence[dict]) -> np.ndarray:
        """Return a float32 (len(items), dim) matrix, one row per item in order."""
        ...


def _stub_vector(modality: str, item_id: str, seed: int, dim: int) -> np.ndarray:
    digest = hashlib.sha256(f"{modality}:{item_id}:{seed}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    vector = rng.normal(size=dim)
    return (vector / np.linalg.norm(vector)).astype(np.float32)


@dataclass
class StubEncoder:
    """Deterministic weight-free encoder: unit vectors keyed by (id, seed)."""

    modality: str
    dim: int
    seed: int = 0

    @property
    def model_id(self) -> str:
        return f"stub-{self.modality}-seed{self.seed}"

    def embed(self, items: Sequence[dict]) -> np.ndarray:
        rows = [_stub_vector(self.modality, item["id"], self.seed, self.dim) for item in items]
        return np.vstack(rows) if rows else np.empty((0, self.dim), dtype=np.float32)


def pool_mean_over_time(features: np.ndarray) -> np.ndarray:
    """Collapse time-varying (T, d) encoder features to one d-vector.

    This is the pooling policy declared in the provider manifest
    ("mean-over-time"); clip-level audio features for diversity metrics are
    produced this way.
    """
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2 or features.shape[0] < 1:
        raise EncoderError(f"expected a (T, d) feature matrix, got shape {features.shape}")
    return features.mean(axis=0)
