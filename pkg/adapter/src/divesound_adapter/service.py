"""The embedding-provider HTTP service.

Protocol:

- ``GET /v1/health`` -> ``{"status": "ok"}``
- ``POST /v1/embed`` with ``{"modality": "text|audio|image",
  "items": [{"id": ..., "text"?: ..., "uri"?: ...}]}`` ->
  ``{"dim": ..., "model": ..., "vectors": [{"id": ..., "values": [...]}]}``

Malformed requests get 400, unknown modalities 422, inference failures 500
with an error body. Vectors echo the requested ids in request order, and the
declared dim always matches the emitted vector lengths.
"""

from __future__ import annotations

import argparse
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .encoders import Encoder, EncoderError, StubEncoder

MODALITIES = ("text", "audio", "image")


@dataclass(frozen=True)
class ProviderManifest:
    """What this provider instance is serving, for reproducibility records."""

    models: Mapping[str, str]  # modality -> model id
    dims: Mapping[str, int]  # modality -> declared dim
    pooling: str  # audio feature pooling policy
    frame_seed: int

    def to_dict(self) -> dict:
        return {
            "models": dict(self.models),
            "dims": dict(self.dims),
            "pooling": self.pooling,
            "frame_seed": self.frame_seed,
        }


@dataclass
class AdapterConfig:
    stub: bool = True
    seed: int = 0
    frame_seed: int = 0
    frames_per_clip: int = 3
    pooling: str = "mean-over-time"
    dims: dict = field(default_factory=lambda: {"text": 512, "audio": 512, "image": 512})


def build_encoders(config: AdapterConfig) -> dict[str, Encoder]:
    if not config.stub:
        raise EncoderError(
            "no pretrained encoders configured; run in stub mode or inject "
            "Encoder backends via create_app(encoders=...)"
        )
    return {
        modality: StubEncoder(modality=modality, dim=config.dims[modality], seed=config.seed)
        for modality in MODALITIES
    }


def _validate_embed_request(body) -> Optional[str]:
    """Return an error message for a malformed body, None when well-formed."""
    if not isinstance(body, dict):
        return "request body must be a JSON object"
    if "modality" not in body or "items" not in body:
        return "request needs 'modality' and 'items'"
    if not isinstance(body["modality"], str):
        return "'modality' must be a string"
    items = body["items"]
    if not isinstance(items, list) or not items:
        return "'items' must be a non-empty list"
    seen = set()
    for item in items:
        if not isinstance(item, dict) or "id" not in item or not isinstance(item["id"], str):
            return f"every item needs a string 'id': {item!r}"
        if item["id"] in seen:
            return f"duplicate item id {item['id']!r}"
        seen.add(item["id"])
    return None


def create_app(
    config: Optional[AdapterConfig] = None,
    encoders: Optional[dict[str, Encoder]] = None,
) -> FastAPI:
    config = config or AdapterConfig()
    encoders = encoders if encoders is not None else build_encoders(config)
    manifest = ProviderManifest(
        models={m: e.model_id for m, e in encoders.items()},
        dims={m: e.dim for m, e in encoders.items()},
        pooling=config.pooling,
        frame_seed=config.frame_seed,
    )

    app = FastAPI(title="divesound-adapter", docs_url=None, redoc_url=None)
    app.state.manifest = manifest
    app.state.config = config

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.post("/v1/embed")
    async def embed(request: Request):
        try:
            body = json.loads(await request.body())
        except json.JSONDecodeError as exc:
            return JSONResponse({"error": f"invalid JSON: {exc}"}, status_code=400)
        problem = _validate_embed_request(body)
        if problem is not None:
            return JSONResponse({"error": problem}, status_code=400)
        modality = body["modality"]
        if modality not in encoders:
            return JSONResponse(
                {"error": f"unknown modality {modality!r}; supported: {sorted(encoders)}"},
                status_code=422,
            )
        encoder = encoders[modality]
        try:
            matrix = encoder.embed(body["items"])
        except Exception as exc:
            return JSONResponse({"error": f"inference failed: {exc}"}, status_code=500)
        if matrix.shape != (len(body["items"]), encoder.dim):
            return JSONResponse(
                {
                    "error": (
                        f"encoder emitted shape {matrix.shape}, declared "
                        f"dim {encoder.dim} for {len(body['items'])} items"
                    )
                },
                status_code=500,
            )
        return {
            "dim": encoder.dim,
            "model": encoder.model_id,
            "vectors": [
                {"id": item["id"], "values": [float(x) for x in row]}
                for item, row in zip(body["items"], matrix)
            ],
        }

    return app


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="divesound-adapter", description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8089)
    parser.add_argument("--seed", type=int, default=0, help="stub encoder seed")
    parser.add_argument("--dim", type=int, default=512, help="stub vector dimension")
    args = parser.parse_args(argv)

    import uvicorn

    config = AdapterConfig(seed=args.seed, dims={m: args.dim for m in MODALITIES})
    uvicorn.run(create_app(config), host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
