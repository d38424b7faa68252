"""Provider protocol conformance: golden pairs, error codes, schema shape."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from divesound_adapter import AdapterConfig, create_app


@pytest.fixture
def client():
    config = AdapterConfig(seed=0, dims={"text": 8, "audio": 8, "image": 8})
    return TestClient(create_app(config))


#: Golden response for {"modality": "text", "items": [a, b, c]} at dim 8 / seed 0.
GOLDEN_REQUEST = {
    "modality": "text",
    "items": [
        {"id": "a", "text": "x"},
        {"id": "b", "text": "y"},
        {"id": "c", "text": "z"},
    ],
}
GOLDEN_VECTORS = {
    "a": [
        -0.37708961963653564, -0.2450551688671112, -0.2115575522184372,
        -0.02746192179620266, 0.6320090889930725, -0.5860065221786499,
        -0.08199290931224823, -0.0517558827996254,
    ],
    "b": [
        -0.4708009660243988, -0.19610612094402313, -0.13297002017498016,
        0.19062402844429016, 0.01817547343671322, 0.27104270458221436,
        -0.7787342071533203, 0.07515888661146164,
    ],
    "c": [
        -0.11240318417549133, -0.28684094548225403, 0.21585378050804138,
        -0.2805439829826355, -0.5126272439956665, -0.6675406694412231,
        0.002567010698840022, -0.26718202233314514,
    ],
}


class TestHealth:
    def test_health_ok(self, client):
        response = client.get("/v1/health")
        assert response.status_code == 200
        assert response.json() == {"status": "ok"}


class TestEmbed:
    def test_golden_pair(self, client):
        response = client.post("/v1/embed", json=GOLDEN_REQUEST)
        assert response.status_code == 200
        doc = response.json()
        assert doc["dim"] == 8
        assert doc["model"] == "stub-text-seed0"
        assert [v["id"] for v in doc["vectors"]] == ["a", "b", "c"]
        for entry in doc["vectors"]:
            assert entry["values"] == pytest.approx(GOLDEN_VECTORS[entry["id"]], abs=1e-12)

    def test_ids_echo_request_order(self, client):
        items = [{"id": f"item-{k}", "text": "t"} for k in (5, 1, 9, 3)]
        doc = client.post("/v1/embed", json={"modality": "audio", "items": items}).json()
        assert [v["id"] for v in doc["vectors"]] == [i["id"] for i in items]

    def test_declared_dim_matches_vector_lengths(self, client):
        doc = client.post("/v1/embed", json=GOLDEN_REQUEST).json()
        assert all(len(v["values"]) == doc["dim"] for v in doc["vectors"])

    def test_vectors_are_unit_norm(self, client):
        doc = client.post("/v1/embed", json=GOLDEN_REQUEST).json()
        for entry in doc["vectors"]:
            assert np.linalg.norm(entry["values"]) == pytest.approx(1.0, abs=1e-6)

    def test_unknown_modality_is_422(self, client):
        response = client.post(
            "/v1/embed", json={"modality": "video", "items": [{"id": "a"}]}
        )
        assert response.status_code == 422
        assert "video" in response.json()["error"]

    def test_malformed_request_is_400(self, client):
        for body in (
            {"items": [{"id": "a"}]},  # missing modality
            {"modality": "text"},  # missing items
            {"modality": "text", "items": []},  # empty items
            {"modality": "text", "items": [{"text": "no id"}]},
            {"modality": "text", "items": [{"id": "a"}, {"id": "a"}]},  # duplicate
            ["not", "an", "object"],
        ):
            response = client.post("/v1/embed", json=body)
            assert response.status_code == 400, body
            assert "error" in response.json()

    def test_invalid_json_is_400(self, client):
        response = client.post(
            "/v1/embed", content=b"{not json", headers={"Content-Type": "application/json"}
        )
        assert response.status_code == 400

    def test_inference_failure_is_500_with_error_body(self):
        class ExplodingEncoder:
            model_id = "boom"
            dim = 4

            def embed(self, items):
                raise RuntimeError("device on fire")

        app = create_app(AdapterConfig(), encoders={"text": ExplodingEncoder()})
        client = TestClient(app)
        response = client.post(
            "/v1/embed", json={"modality": "text", "items": [{"id": "a"}]}
        )
        assert response.status_code == 500
        assert "device on fire" in response.json()["error"]

    def test_shape_violation_is_500(self):
        class WrongShapeEncoder:
            model_id = "bad-shape"
            dim = 4

            def embed(self, items):
                return np.zeros((len(items), 3), dtype=np.float32)

        client = TestClient(create_app(AdapterConfig(), encoders={"text": WrongShapeEncoder()}))
        response = client.post(
            "/v1/embed", json={"modality": "text", "items": [{"id": "a"}]}
        )
        assert response.status_code == 500


class TestManifest:
    def test_declared_dims_match_encoders(self):
        config = AdapterConfig(seed=3, dims={"text": 16, "audio": 24, "image": 32})
        app = create_app(config)
        manifest = app.state.manifest
        assert manifest.dims == {"text": 16, "audio": 24, "image": 32}
        assert manifest.pooling == "mean-over-time"
        client = TestClient(app)
        for modality in ("text", "audio", "image"):
            doc = client.post(
                "/v1/embed", json={"modality": modality, "items": [{"id": "x"}]}
            ).json()
            assert doc["dim"] == manifest.dims[modality]
            assert len(doc["vectors"][0]["values"]) == manifest.dims[modality]
            assert doc["model"] == manifest.models[modality]
