"""Two-stage taxonomy construction against an OpenAI-compatible chat API.

Stage 1 clusters the source labels of each overarching category into merged
sound event classes; stage 2 asks for visually/auditorily distinguishable
subcategories of each class. Every request is canonicalized and hashed so
recorded transcripts can replay a whole run bit-for-bit without network
access.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import requests

from .taxonomy import (
    CATEGORIES,
    MAX_ADJECTIVES,
    MIN_ADJECTIVES,
    SoundClass,
    SourceLabel,
    Subcategory,
    Taxonomy,
    validate_taxonomy,
)

API_KEY_ENV = "DIVESOUND_LLM_API_KEY"

_USER_SEPARATOR = "=== user ==="

_STAGE_PLACEHOLDERS = {
    "cluster": ("{category}", "{labels}"),
    "subcategorize": ("{class_name}", "{labels}"),
}


class LlmError(RuntimeError):
    """Base class for orchestration failures."""


class TransportError(LlmError):
    """The chat endpoint stayed unreachable after the retry budget."""


class ReplayMissError(LlmError):
    """Replay store has no transcript for a request hash."""

    def __init__(self, request_hash: str):
        super().__init__(f"no recorded transcript for request hash {request_hash}")
        self.request_hash = request_hash


class LlmParseError(LlmError, ValueError):
    """Completion text carries no parsable JSON or the wrong shape."""


class LlmValidationError(LlmError, ValueError):
    """Parsed response violates input constraints (e.g. hallucinated labels)."""


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptTemplate:
    """A two-part (system/user) template with literal {placeholder} tokens.

    Substitution is literal string replacement, so JSON braces in the
    template body are safe.
    """

    stage: str
    template_text: str

    def __post_init__(self):
        if self.stage not in _STAGE_PLACEHOLDERS:
            raise LlmParseError(f"unknown prompt stage {self.stage!r}")
        if _USER_SEPARATOR not in self.template_text:
            raise LlmParseError(f"template for {self.stage!r} lacks '{_USER_SEPARATOR}' line")
        missing = [
            ph for ph in _STAGE_PLACEHOLDERS[self.stage] if ph not in self.template_text
        ]
        if missing:
            raise LlmParseError(
                f"template for {self.stage!r} is missing placeholders: {missing}"
            )

    @classmethod
    def load_default(cls, stage: str) -> "PromptTemplate":
        text = (resources.files("divesound") / "prompts" / f"{stage}.txt").read_text(
            encoding="utf-8"
        )
        return cls(stage=stage, template_text=text)

    @classmethod
    def load(cls, stage: str, path) -> "PromptTemplate":
        return cls(stage=stage, template_text=Path(path).read_text(encoding="utf-8"))

    def render(self, **values: str) -> list[dict]:
        text = self.template_text
        for key, value in values.items():
            text = text.replace("{" + key + "}", value)
        system_part, _, user_part = text.partition(_USER_SEPARATOR)
        return [
            {"role": "system", "content": system_part.strip()},
            {"role": "user", "content": user_part.strip()},
        ]


def build_cluster_prompt(
    category: str,
    labels: Sequence[str],
    template: Optional[PromptTemplate] = None,
) -> list[dict]:
    """Messages asking to merge/filter one category's labels into classes."""
    if not labels:
        raise LlmValidationError("cannot build a cluster prompt from an empty label list")
    if category not in CATEGORIES:
        raise LlmValidationError(f"unknown category {category!r}")
    template = template or PromptTemplate.load_default("cluster")
    return template.render(
        category=category, labels="\n".join(f"- {label}" for label in labels)
    )


def build_subcategory_prompt(
    sound_class: SoundClass,
    template: Optional[PromptTemplate] = None,
) -> list[dict]:
    """Messages asking for 2-4-adjective subcategories of one class."""
    if not sound_class.name:
        raise LlmValidationError("sound class has an empty name")
    if not sound_class.source_labels:
        raise LlmValidationError(f"class {sound_class.name!r} has no source labels")
    template = template or PromptTemplate.load_default("subcategorize")
    return template.render(
        class_name=sound_class.name, labels=", ".join(sound_class.source_labels)
    )


# ---------------------------------------------------------------------------
# Response parsing
# ---------------------------------------------------------------------------


def extract_first_json(text: str) -> dict:
    """First balanced JSON object in the text, tolerating prose and fences."""
    decoder = json.JSONDecoder()
    index = text.find("{")
    while index != -1:
        try:
            value, _ = decoder.raw_decode(text, index)
        except json.JSONDecodeError:
            index = text.find("{", index + 1)
            continue
        if isinstance(value, dict):
            return value
        index = text.find("{", index + 1)
    raise LlmParseError("no JSON object found in completion text")


@dataclass(frozen=True)
class ClusterEntry:
    class_name: str
    member_labels: tuple[str, ...]


@dataclass(frozen=True)
class ClusterResult:
    category: str
    clusters: tuple[ClusterEntry, ...]
    discarded_labels: tuple[str, ...]


def parse_cluster_response(
    raw: str, input_labels: Sequence[str], category: str = ""
) -> ClusterResult:
    """Parse and validate a clustering completion.

    Every member and discarded label must come verbatim from input_labels and
    a label may belong to at most one cluster; anything else is treated as a
    hallucination and rejected.
    """
    doc = extract_first_json(raw)
    if "clusters" not in doc or not isinstance(doc["clusters"], list):
        raise LlmParseError("response lacks a 'clusters' list")
    known = set(input_labels)
    seen: dict[str, str] = {}
    cluster_names = set()
    clusters = []
    for entry in doc["clusters"]:
        if not isinstance(entry, dict):
            raise LlmParseError(f"cluster entry is not an object: {entry!r}")
        name = entry.get("class_name")
        members = entry.get("member_labels")
        if not isinstance(name, str) or not name:
            raise LlmParseError(f"cluster entry has no usable class_name: {entry!r}")
        if name in cluster_names:
            raise LlmValidationError(f"duplicate cluster name {name!r} in one response")
        cluster_names.add(name)
        if not isinstance(members, list) or not members:
            raise LlmParseError(f"cluster {name!r} has no member_labels")
        for label in members:
            if label not in known:
                raise LlmValidationError(
                    f"cluster {name!r} names label {label!r} absent from the input"
                )
            if label in seen:
                raise LlmValidationError(
                    f"label {label!r} assigned to both {seen[label]!r} and {name!r}"
                )
            seen[label] = name
        clusters.append(ClusterEntry(class_name=name, member_labels=tuple(members)))
    discarded = doc.get("discarded_labels", [])
    if not isinstance(discarded, list):
        raise LlmParseError("'discarded_labels' must be a list")
    for label in discarded:
        if label not in known:
            raise LlmValidationError(f"discarded label {label!r} absent from the input")
    return ClusterResult(
        category=category, clusters=tuple(clusters), discarded_labels=tuple(discarded)
    )


def parse_subcategory_response(raw: str) -> tuple[list[Subcategory], list[str]]:
    """Parse a subcategory completion into (valid subcategories, violations).

    Items breaking the 2-4 adjective rule, duplicating a sibling name, or
    missing fields are excluded and reported in the violation list instead of
    failing the whole response.
    """
    doc = extract_first_json(raw)
    items = doc.get("subcategories")
    if not isinstance(items, list):
        raise LlmParseError("response lacks a 'subcategories' list")
    valid: list[Subcategory] = []
    violations: list[str] = []
    names = set()
    for i, item in enumerate(items):
        label = f"subcategories[{i}]"
        if not isinstance(item, dict):
            violations.append(f"{label}: not an object")
            continue
        name = item.get("name")
        adjectives = item.get("adjectives")
        if not isinstance(name, str) or not name:
            violations.append(f"{label}: missing or empty name")
            continue
        if not isinstance(adjectives, list) or not all(
            isinstance(a, str) and a for a in adjectives
        ):
            violations.append(f"{name!r}: adjectives must be non-empty strings")
            continue
        if not (MIN_ADJECTIVES <= len(adjectives) <= MAX_ADJECTIVES):
            violations.append(
                f"{name!r}: {len(adjectives)} adjectives "
                f"(need {MIN_ADJECTIVES}-{MAX_ADJECTIVES})"
            )
            continue
        if name in names:
            violations.append(f"{name!r}: duplicate subcategory name")
            continue
        description = item.get("description")
        if description is not None and not isinstance(description, str):
            violations.append(f"{name!r}: description must be a string or null")
            continue
        names.add(name)
        valid.append(
            Subcategory(name=name, adjectives=tuple(adjectives), description=description)
        )
    return valid, violations


# ---------------------------------------------------------------------------
# Clients, transcripts, and the replay store
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LlmConfig:
    model: str = "gpt-4"
    base_url: str = "https://api.openai.com/v1"
    temperature: float = 0.0
    seed: Optional[int] = None
    parallelism: int = 4
    replay_dir: Optional[str] = None
    record_dir: Optional[str] = None
    max_retries: int = 3
    backoff: tuple[float, ...] = (1.0, 2.0, 4.0)
    timeout: float = 120.0


def canonical_request(config: LlmConfig, messages: Sequence[dict]) -> str:
    body = {
        "model": config.model,
        "messages": list(messages),
        "temperature": config.temperature,
    }
    if config.seed is not None:
        body["seed"] = config.seed
    return json.dumps(body, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def request_hash(canonical: str) -> str:
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LlmTranscript:
    request_hash: str
    request: str
    response: str
    model_id: str
    timestamp: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat()
    )

    def verify(self) -> bool:
        return request_hash(self.request) == self.request_hash


class TranscriptStore:
    """Directory of <request_hash>.json transcripts; append-only, atomic."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def get(self, digest: str) -> Optional[LlmTranscript]:
        path = self.path_for(digest)
        if not path.exists():
            return None
        doc = json.loads(path.read_text(encoding="utf-8"))
        transcript = LlmTranscript(
            request_hash=doc["request_hash"],
            request=doc["request"],
            response=doc["response"],
            model_id=doc.get("model_id", ""),
            timestamp=doc.get("timestamp", ""),
        )
        if not transcript.verify():
            raise LlmParseError(
                f"transcript {path} is corrupt: stored hash does not match its request"
            )
        return transcript

    def put(self, transcript: LlmTranscript) -> Path:
        import tempfile

        path = self.path_for(transcript.request_hash)
        payload = json.dumps(
            {
                "request_hash": transcript.request_hash,
                "request": transcript.request,
                "response": transcript.response,
                "model_id": transcript.model_id,
                "timestamp": transcript.timestamp,
            },
            ensure_ascii=False,
            indent=2,
        )
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        with open(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
        Path(tmp).replace(path)
        return path


@dataclass(frozen=True)
class LlmReply:
    text: str
    model_id: str
    request_hash: str


class ReplayLlmClient:
    """Serves completions from recorded transcripts; no network involved."""

    def __init__(self, config: LlmConfig):
        if not config.replay_dir:
            raise LlmError("replay client needs a replay_dir")
        self.config = config
        self.store = TranscriptStore(config.replay_dir)

    def complete(self, messages: Sequence[dict]) -> LlmReply:
        canonical = canonical_request(self.config, messages)
        digest = request_hash(canonical)
        transcript = self.store.get(digest)
        if transcript is None:
            raise ReplayMissError(digest)
        return LlmReply(
            text=transcript.response, model_id=transcript.model_id, request_hash=digest
        )


class HttpLlmClient:
    """Minimal chat-completions client with bounded exponential-backoff retries."""

    def __init__(
        self,
        config: LlmConfig,
        api_key: Optional[str] = None,
        session=None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        import os

        self.config = config
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self._http = session or requests.Session()
        self._sleep = sleep
        self._record = TranscriptStore(config.record_dir) if config.record_dir else None

    def complete(self, messages: Sequence[dict]) -> LlmReply:
        canonical = canonical_request(self.config, messages)
        digest = request_hash(canonical)
        body = json.loads(canonical)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        url = f"{self.config.base_url.rstrip('/')}/chat/completions"
        last_error: Optional[Exception] = None
        attempts = self.config.max_retries + 1
        for attempt in range(attempts):
            try:
                resp = self._http.post(
                    url, json=body, headers=headers, timeout=self.config.timeout
                )
                resp.raise_for_status()
                doc = resp.json()
                text = doc["choices"][0]["message"]["content"]
                model_id = doc.get("model", self.config.model)
                break
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < attempts:
                    backoff = self.config.backoff[min(attempt, len(self.config.backoff) - 1)]
                    self._sleep(backoff)
        else:
            raise TransportError(
                f"chat completion failed after {attempts} attempts: {last_error}"
            )

        if self._record is not None:
            self._record.put(
                LlmTranscript(
                    request_hash=digest, request=canonical, response=text, model_id=model_id
                )
            )
        return LlmReply(text=text, model_id=model_id, request_hash=digest)


def make_llm_client(config: LlmConfig, **kwargs):
    if config.replay_dir:
        return ReplayLlmClient(config)
    return HttpLlmClient(config, **kwargs)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def group_labels(labels: Sequence[SourceLabel]) -> dict[str, list[str]]:
    """Group label texts by category, keeping first-appearance order of both."""
    grouped: dict[str, list[str]] = {}
    for label in labels:
        bucket = grouped.setdefault(label.category, [])
        if label.text not in bucket:
            bucket.append(label.text)
    return grouped


def run_taxonomy_pipeline(
    labels: Sequence[SourceLabel],
    client_or_config,
    parallelism: Optional[int] = None,
    cluster_template: Optional[PromptTemplate] = None,
    subcategory_template: Optional[PromptTemplate] = None,
) -> Taxonomy:
    """Cluster labels per category, subcategorize each class, assemble a taxonomy.

    Classes whose subcategory generation yields fewer than 2 valid
    subcategories are dropped. Results merge in the stable order of input
    categories and response clusters regardless of completion order, so a
    replayed run is deterministic end to end.
    """
    if not labels:
        raise LlmValidationError("no source labels given")
    if isinstance(client_or_config, LlmConfig):
        client = make_llm_client(client_or_config)
        parallelism = parallelism or client_or_config.parallelism
    else:
        client = client_or_config
        parallelism = parallelism or 1

    cluster_template = cluster_template or PromptTemplate.load_default("cluster")
    subcategory_template = subcategory_template or PromptTemplate.load_default("subcategorize")

    grouped = group_labels(labels)
    transcript_hashes: list[str] = []
    model_ids: set[str] = set()

    def cluster_one(item: tuple[str, list[str]]) -> tuple[ClusterResult, str, str]:
        category, texts = item
        reply = client.complete(build_cluster_prompt(category, texts, cluster_template))
        result = parse_cluster_response(reply.text, texts, category=category)
        return result, reply.request_hash, reply.model_id

    cluster_results = _ordered_map(cluster_one, list(grouped.items()), parallelism)

    candidate_classes: list[SoundClass] = []
    class_owner: dict[str, str] = {}
    for result, digest, model_id in cluster_results:
        transcript_hashes.append(digest)
        model_ids.add(model_id)
        for entry in result.clusters:
            if entry.class_name in class_owner:
                raise LlmValidationError(
                    f"class name {entry.class_name!r} produced by both categories "
                    f"{class_owner[entry.class_name]!r} and {result.category!r}"
                )
            class_owner[entry.class_name] = result.category
            candidate_classes.append(
                SoundClass(name=entry.class_name, source_labels=entry.member_labels)
            )

    def subcategorize_one(cls: SoundClass):
        reply = client.complete(build_subcategory_prompt(cls, subcategory_template))
        subcats, violations = parse_subcategory_response(reply.text)
        return cls, subcats, violations, reply.request_hash, reply.model_id

    final_classes: list[SoundClass] = []
    for cls, subcats, _violations, digest, model_id in _ordered_map(
        subcategorize_one, candidate_classes, parallelism
    ):
        transcript_hashes.append(digest)
        model_ids.add(model_id)
        if len(subcats) < 2:
            continue  # not a diversity class
        final_classes.append(
            SoundClass(
                name=cls.name,
                source_labels=cls.source_labels,
                subcategories=tuple(subcats),
            )
        )

    taxonomy = Taxonomy(
        version=1,
        classes=tuple(final_classes),
        provenance={
            "model_id": sorted(model_ids)[0] if len(model_ids) == 1 else sorted(model_ids),
            "transcript_hashes": transcript_hashes,
        },
    )
    problems = validate_taxonomy(taxonomy)
    if problems:
        raise LlmValidationError(
            "pipeline produced an invalid taxonomy: " + "; ".join(problems)
        )
    return taxonomy


def _ordered_map(fn, items, parallelism: int):
    if parallelism and parallelism > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]
