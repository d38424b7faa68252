import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

import helpers
from divesound.llm import (
    HttpLlmClient,
    LlmConfig,
    LlmParseError,
    LlmTranscript,
    LlmValidationError,
    PromptTemplate,
    ReplayLlmClient,
    ReplayMissError,
    TranscriptStore,
    TransportError,
    build_cluster_prompt,
    build_subcategory_prompt,
    canonical_request,
    extract_first_json,
    parse_cluster_response,
    parse_subcategory_response,
    request_hash,
    run_taxonomy_pipeline,
)
from divesound.taxonomy import SoundClass, save_taxonomy


class TestPrompts:
    def test_cluster_prompt_contains_labels_verbatim(self):
        labels = ["dog barking", "dog howling", "cat purring"]
        messages = build_cluster_prompt("animals", labels)
        assert [m["role"] for m in messages] == ["system", "user"]
        for label in labels:
            assert label in messages[1]["content"]
        assert "animals" in messages[1]["content"]

    def test_cluster_prompt_states_the_filtering_rules(self):
        messages = build_cluster_prompt("animals", ["dog barking"])
        system = messages[0]["content"].lower()
        assert "overly specific" in system
        assert "single source" in system
        assert "visual" in system

    def test_cluster_prompt_deterministic(self):
        labels = ["dog barking", "dog howling"]
        first = build_cluster_prompt("animals", labels)
        second = build_cluster_prompt("animals", labels)
        assert json.dumps(first) == json.dumps(second)

    def test_cluster_prompt_rejects_empty_labels(self):
        with pytest.raises(LlmValidationError):
            build_cluster_prompt("animals", [])

    def test_cluster_prompt_rejects_unknown_category(self):
        with pytest.raises(LlmValidationError):
            build_cluster_prompt("pets", ["dog barking"])

    def test_subcategory_prompt_requires_dual_distinguishability(self):
        cls = SoundClass("dog", ("dog barking", "dog howling"))
        messages = build_subcategory_prompt(cls)
        system = messages[0]["content"].lower()
        assert "visually" in system
        assert "auditorily" in system or "audibly" in system
        assert "dog" in messages[1]["content"]

    def test_subcategory_prompt_deterministic(self):
        cls = SoundClass("dog", ("dog barking",))
        assert build_subcategory_prompt(cls) == build_subcategory_prompt(cls)

    def test_subcategory_prompt_rejects_empty_name(self):
        with pytest.raises(LlmValidationError):
            build_subcategory_prompt(SoundClass("", ("label",)))

    def test_template_placeholder_validation(self):
        with pytest.raises(LlmParseError, match="placeholder"):
            PromptTemplate(stage="cluster", template_text="no placeholders\n=== user ===\nx")

    def test_template_from_file(self, tmp_path):
        path = tmp_path / "cluster.txt"
        path.write_text("sys {category}\n=== user ===\n{labels}", encoding="utf-8")
        template = PromptTemplate.load("cluster", path)
        messages = build_cluster_prompt("animals", ["dog barking"], template)
        assert messages[0]["content"] == "sys animals"


class TestExtractJson:
    def test_plain_object(self):
        assert extract_first_json('{"a": 1}') == {"a": 1}

    def test_fenced_with_prose(self):
        raw = 'Sure! Here you go:\n```json\n{"a": {"b": [1, 2]}}\n```\nanything else?'
        assert extract_first_json(raw) == {"a": {"b": [1, 2]}}

    def test_braces_in_strings(self):
        raw = 'prefix {"a": "curly } inside"} suffix'
        assert extract_first_json(raw) == {"a": "curly } inside"}

    def test_skips_invalid_candidates(self):
        raw = "broken {not json} but then {\"ok\": true}"
        assert extract_first_json(raw) == {"ok": True}

    def test_no_json_raises(self):
        with pytest.raises(LlmParseError, match="no JSON"):
            extract_first_json("I cannot help with that.")


class TestParseCluster:
    LABELS = ["dog barking", "dog howling", "cat meowing"]

    def test_fixture_grouping(self):
        raw = json.dumps(
            {
                "clusters": [
                    {"class_name": "dog", "member_labels": ["dog barking", "dog howling", "cat meowing"]}
                ],
                "discarded_labels": [],
            }
        )
        result = parse_cluster_response(raw, self.LABELS, category="animals")
        assert len(result.clusters) == 1
        assert result.clusters[0].member_labels == tuple(self.LABELS)

    def test_hallucinated_label_rejected(self):
        raw = json.dumps(
            {"clusters": [{"class_name": "dog", "member_labels": ["wolf howling"]}]}
        )
        with pytest.raises(LlmValidationError, match="wolf howling"):
            parse_cluster_response(raw, self.LABELS)

    def test_label_in_two_clusters_rejected(self):
        raw = json.dumps(
            {
                "clusters": [
                    {"class_name": "dog", "member_labels": ["dog barking"]},
                    {"class_name": "hound", "member_labels": ["dog barking"]},
                ]
            }
        )
        with pytest.raises(LlmValidationError, match="dog barking"):
            parse_cluster_response(raw, self.LABELS)

    def test_unknown_discarded_label_rejected(self):
        raw = json.dumps(
            {
                "clusters": [{"class_name": "dog", "member_labels": ["dog barking"]}],
                "discarded_labels": ["whale song"],
            }
        )
        with pytest.raises(LlmValidationError, match="whale song"):
            parse_cluster_response(raw, self.LABELS)

    def test_no_json(self):
        with pytest.raises(LlmParseError):
            parse_cluster_response("nope", self.LABELS)

    def test_randomized_responses_never_double_assign(self):
        import random

        rng = random.Random(42)
        labels = [f"label-{i}" for i in range(12)]
        for _ in range(50):
            shuffled = labels[:]
            rng.shuffle(shuffled)
            cut = rng.randrange(1, len(shuffled))
            cluster_count = rng.randrange(1, 4)
            clusters = [
                {"class_name": f"class-{k}", "member_labels": []} for k in range(cluster_count)
            ]
            for label in shuffled[:cut]:
                clusters[rng.randrange(cluster_count)]["member_labels"].append(label)
            clusters = [c for c in clusters if c["member_labels"]]
            raw = json.dumps({"clusters": clusters, "discarded_labels": shuffled[cut:]})
            result = parse_cluster_response(raw, labels)
            seen = [m for c in result.clusters for m in c.member_labels]
            assert len(seen) == len(set(seen))
            assert set(seen) | set(result.discarded_labels) <= set(labels)


class TestParseSubcategories:
    def test_valid_fixture(self):
        raw = json.dumps(
            {
                "subcategories": [
                    {"name": "small dog", "adjectives": ["yappy", "high-pitched"]},
                    {"name": "large dog", "adjectives": ["deep", "booming"]},
                ]
            }
        )
        subs, violations = parse_subcategory_response(raw)
        assert violations == []
        assert [s.name for s in subs] == ["small dog", "large dog"]
        assert subs[0].adjectives == ("yappy", "high-pitched")

    def test_one_adjective_reported_per_item(self):
        raw = json.dumps(
            {
                "subcategories": [
                    {"name": "ok dog", "adjectives": ["a", "b"]},
                    {"name": "bad dog", "adjectives": ["loud"]},
                ]
            }
        )
        subs, violations = parse_subcategory_response(raw)
        assert [s.name for s in subs] == ["ok dog"]
        assert len(violations) == 1 and "bad dog" in violations[0]

    def test_five_adjectives_violate(self):
        raw = json.dumps(
            {"subcategories": [{"name": "x", "adjectives": ["a", "b", "c", "d", "e"]}]}
        )
        subs, violations = parse_subcategory_response(raw)
        assert subs == [] and "x" in violations[0]

    def test_duplicate_names_violate(self):
        raw = json.dumps(
            {
                "subcategories": [
                    {"name": "dup", "adjectives": ["a", "b"]},
                    {"name": "dup", "adjectives": ["c", "d"]},
                ]
            }
        )
        subs, violations = parse_subcategory_response(raw)
        assert len(subs) == 1
        assert any("duplicate" in v for v in violations)

    def test_randomized_adjective_counts_enforced(self):
        import random

        rng = random.Random(7)
        for _ in range(50):
            counts = [rng.randrange(0, 7) for _ in range(5)]
            raw = json.dumps(
                {
                    "subcategories": [
                        {"name": f"s{i}", "adjectives": [f"a{i}-{j}" for j in range(c)]}
                        for i, c in enumerate(counts)
                    ]
                }
            )
            subs, violations = parse_subcategory_response(raw)
            assert all(2 <= len(s.adjectives) <= 4 for s in subs)
            assert len(subs) == sum(1 for c in counts if 2 <= c <= 4)
            assert len(violations) == sum(1 for c in counts if not 2 <= c <= 4)


class TestTranscriptStore:
    def test_round_trip_and_verify(self, tmp_path):
        config = LlmConfig(model="m")
        canonical = canonical_request(config, [{"role": "user", "content": "hi"}])
        transcript = LlmTranscript(
            request_hash=request_hash(canonical),
            request=canonical,
            response="hello",
            model_id="m",
        )
        store = TranscriptStore(tmp_path)
        store.put(transcript)
        loaded = store.get(transcript.request_hash)
        assert loaded.response == "hello"
        assert loaded.verify()

    def test_corrupt_transcript_detected(self, tmp_path):
        store = TranscriptStore(tmp_path)
        bad = LlmTranscript(
            request_hash="0" * 64, request="{}", response="x", model_id="m"
        )
        store.put(bad)
        with pytest.raises(LlmParseError, match="corrupt"):
            store.get("0" * 64)

    def test_hash_is_stable_under_key_order(self):
        config = LlmConfig(model="m", temperature=0.0)
        messages = [{"role": "user", "content": "hi"}]
        assert canonical_request(config, messages) == canonical_request(config, messages)
        digest = request_hash(canonical_request(config, messages))
        assert len(digest) == 64 and int(digest, 16) >= 0


class TestReplayPipeline:
    def test_replay_produces_expected_taxonomy(self, tmp_path):
        config = helpers.build_replay_store(tmp_path / "replay")
        taxonomy = run_taxonomy_pipeline(helpers.REPLAY_LABELS, config)
        got = {
            cls.name: [s.name for s in cls.subcategories] for cls in taxonomy.classes
        }
        assert got == helpers.REPLAY_EXPECTED
        assert taxonomy.provenance["model_id"] == "fixture-model"
        assert len(taxonomy.provenance["transcript_hashes"]) == 5  # 2 cluster + 3 subcat

    def test_replay_is_byte_deterministic(self, tmp_path):
        config = helpers.build_replay_store(tmp_path / "replay")
        paths = []
        for run in range(2):
            taxonomy = run_taxonomy_pipeline(helpers.REPLAY_LABELS, config)
            path = tmp_path / f"tax-{run}.json"
            save_taxonomy(taxonomy, path)
            paths.append(path.read_bytes())
        assert paths[0] == paths[1]

    def test_replay_deterministic_across_parallelism(self, tmp_path):
        config = helpers.build_replay_store(tmp_path / "replay")
        results = {
            json.dumps(
                {
                    cls.name: [s.name for s in cls.subcategories]
                    for cls in run_taxonomy_pipeline(
                        helpers.REPLAY_LABELS, config, parallelism=p
                    ).classes
                },
                sort_keys=True,
            )
            for p in (1, 4)
        }
        assert len(results) == 1

    def test_replay_miss_names_the_hash(self, tmp_path):
        config = helpers.build_replay_store(tmp_path / "replay")
        missing = helpers.REPLAY_LABELS + [
            type(helpers.REPLAY_LABELS[0])("thunder", "nature")
        ]
        with pytest.raises(ReplayMissError) as exc_info:
            run_taxonomy_pipeline(missing, config)
        assert exc_info.value.request_hash in str(exc_info.value)

    def test_replay_client_miss_direct(self, tmp_path):
        client = ReplayLlmClient(LlmConfig(model="m", replay_dir=str(tmp_path)))
        with pytest.raises(ReplayMissError):
            client.complete([{"role": "user", "content": "unrecorded"}])


class _FlakyChatHandler(BaseHTTPRequestHandler):
    failures_left = 0
    seen_bodies = []

    def log_message(self, *args):
        pass

    def do_POST(self):
        cls = type(self)
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        cls.seen_bodies.append((body, self.headers.get("Authorization")))
        if cls.failures_left > 0:
            cls.failures_left -= 1
            self.send_response(503)
            self.end_headers()
            return
        payload = json.dumps(
            {
                "model": "served-model",
                "choices": [{"message": {"role": "assistant", "content": '{"ok": true}'}}],
            }
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)


@pytest.fixture
def chat_server():
    class Handler(_FlakyChatHandler):
        failures_left = 0
        seen_bodies = []

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}", Handler
    server.shutdown()


class TestHttpClient:
    def test_success_and_recording(self, chat_server, tmp_path, monkeypatch):
        url, handler = chat_server
        monkeypatch.setenv("DIVESOUND_LLM_API_KEY", "secret-key")
        config = LlmConfig(model="m", base_url=url, record_dir=str(tmp_path / "rec"))
        client = HttpLlmClient(config, sleep=lambda s: None)
        reply = client.complete([{"role": "user", "content": "hi"}])
        assert reply.text == '{"ok": true}'
        assert reply.model_id == "served-model"
        body, auth = handler.seen_bodies[0]
        assert auth == "Bearer secret-key"
        assert body["temperature"] == 0.0
        recorded = TranscriptStore(tmp_path / "rec").get(reply.request_hash)
        assert recorded.response == reply.text

    def test_retries_then_succeeds(self, chat_server):
        url, handler = chat_server
        handler.failures_left = 2
        sleeps = []
        config = LlmConfig(model="m", base_url=url)
        client = HttpLlmClient(config, api_key="", sleep=sleeps.append)
        reply = client.complete([{"role": "user", "content": "hi"}])
        assert reply.text == '{"ok": true}'
        assert sleeps == [1.0, 2.0]  # exponential backoff schedule

    def test_unreachable_endpoint_exhausts_retries(self):
        sleeps = []
        config = LlmConfig(model="m", base_url="http://127.0.0.1:9", timeout=0.2)
        client = HttpLlmClient(config, api_key="", sleep=sleeps.append)
        with pytest.raises(TransportError, match="4 attempts"):
            client.complete([{"role": "user", "content": "hi"}])
        assert sleeps == [1.0, 2.0, 4.0]

    def test_seed_included_when_set(self, chat_server):
        url, handler = chat_server
        config = LlmConfig(model="m", base_url=url, seed=11)
        HttpLlmClient(config, api_key="", sleep=lambda s: None).complete(
            [{"role": "user", "content": "hi"}]
        )
        body, _ = handler.seen_bodies[-1]
        assert body["seed"] == 11
