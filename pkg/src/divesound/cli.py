"""Command-line entry point for the pipeline.

Subcommands: taxonomy {build,validate,stats}, match run,
metrics {fad,msd,ttest}, fuse export, embed {pack,fetch}.

Exit codes: 0 success, 1 validation failure, 2 I/O or file-format error,
3 network failure or replay miss. All stdout reports are JSON. Secrets are
only ever read from the environment (DIVESOUND_LLM_API_KEY).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional

from . import fusion, llm, matching, metrics, taxonomy
from .embeddings import (
    EmbeddingFormatError,
    EmbeddingProviderClient,
    EmbeddingSet,
    Modality,
    ProviderError,
    read_embeddings,
    write_embeddings,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_NETWORK = 3


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class LlmSection:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4"
    parallelism: int = 4
    replay_dir: Optional[str] = None


@dataclasses.dataclass
class MatchingSection:
    min_clips: int = 20
    softmax_scale: float = 100.0
    frame_agg: str = "mean"
    frames_per_clip: int = 3
    keep_singleton_classes: bool = False


@dataclasses.dataclass
class FusionSection:
    label_dim: int = 128
    seed: int = 0


@dataclasses.dataclass
class PathsSection:
    taxonomy: str = "taxonomy.json"
    embeddings: str = "embeddings"
    manifest: str = "manifest.jsonl"
    reports: str = "reports"


@dataclasses.dataclass
class PipelineConfig:
    llm: LlmSection = dataclasses.field(default_factory=LlmSection)
    matching: MatchingSection = dataclasses.field(default_factory=MatchingSection)
    fusion: FusionSection = dataclasses.field(default_factory=FusionSection)
    paths: PathsSection = dataclasses.field(default_factory=PathsSection)

    def validate(self) -> None:
        if self.matching.min_clips < 1:
            raise matching.MatchInputError("config: matching.min_clips must be >= 1")
        if self.matching.softmax_scale <= 0:
            raise matching.MatchInputError("config: matching.softmax_scale must be > 0")
        if self.fusion.label_dim < 1:
            raise fusion.FusionError("config: fusion.label_dim must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path: Optional[str]) -> PipelineConfig:
    config = PipelineConfig()
    if path is None:
        return config
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    for section_name in ("llm", "matching", "fusion", "paths"):
        section = getattr(config, section_name)
        for key, value in doc.get(section_name, {}).items():
            if not hasattr(section, key):
                raise matching.MatchInputError(
                    f"config: unknown key {section_name}.{key}"
                )
            setattr(section, key, value)
    return config


# ---------------------------------------------------------------------------
# Small input formats
# ---------------------------------------------------------------------------


def read_labels_file(path) -> list[taxonomy.SourceLabel]:
    """Parse 'category<TAB>label' lines; '#' comments and blanks are skipped."""
    labels = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        category, sep, text = line.partition("\t")
        if not sep:
            raise taxonomy.TaxonomyParseError(
                f"{path}:{lineno}: expected 'category<TAB>label', got {line!r}"
            )
        labels.append(taxonomy.SourceLabel(text=text.strip(), category=category.strip()))
    if not labels:
        raise taxonomy.TaxonomyParseError(f"{path}: no labels found")
    return labels


def read_samples_file(path) -> list[float]:
    """One float per line; '#' comments and blanks are skipped."""
    values = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise metrics.MetricsError(f"{path}:{lineno}: not a number: {line!r}") from None
    return values


def read_vectors_jsonl(path) -> list[dict]:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise EmbeddingFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    return records


def emit_report(report: dict, out: Optional[str]) -> None:
    text = json.dumps(report, ensure_ascii=False, indent=2)
    print(text)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------------


def cmd_taxonomy_build(args, config: PipelineConfig) -> int:
    labels = read_labels_file(args.labels)
    llm_config = llm.LlmConfig(
        model=args.model or config.llm.model,
        base_url=args.base_url or config.llm.base_url,
        parallelism=config.llm.parallelism,
        replay_dir=args.replay or config.llm.replay_dir,
        record_dir=args.record,
    )
    result = llm.run_taxonomy_pipeline(labels, llm_config)
    out = args.out or config.paths.taxonomy
    taxonomy.save_taxonomy(result, out)
    emit_report({"taxonomy": {"out": str(out), **taxonomy.taxonomy_stats(result)}}, None)
    return EXIT_OK


def cmd_taxonomy_validate(args, config: PipelineConfig) -> int:
    t = taxonomy.load_taxonomy(args.file)
    violations = taxonomy.validate_taxonomy(t)
    warnings = taxonomy.taxonomy_warnings(t)
    emit_report(
        {"valid": not violations, "violations": violations, "warnings": warnings}, None
    )
    for message in violations:
        print(f"violation: {message}", file=sys.stderr)
    for message in warnings:
        print(f"warning: {message}", file=sys.stderr)
    return EXIT_VALIDATION if violations else EXIT_OK


def cmd_taxonomy_stats(args, config: PipelineConfig) -> int:
    t = taxonomy.load_taxonomy(args.file)
    stats = taxonomy.taxonomy_stats(t)
    stats["subcategory_histogram"] = {
        str(k): v for k, v in stats["subcategory_histogram"].items()
    }
    emit_report(stats, args.out)
    return EXIT_OK


def cmd_match_run(args, config: PipelineConfig) -> int:
    t = taxonomy.load_taxonomy(args.taxonomy)
    manifest = matching.build_dataset(
        t,
        audio_set=read_embeddings(args.audio),
        frame_set=read_embeddings(args.frames),
        text_set=read_embeddings(args.text),
        augmented_text_set=read_embeddings(args.augmented_text),
        min_clips=args.min_clips if args.min_clips is not None else config.matching.min_clips,
        scale=args.scale if args.scale is not None else config.matching.softmax_scale,
        frame_agg=args.frame_agg or config.matching.frame_agg,
        keep_singleton_classes=args.keep_singleton_classes
        or config.matching.keep_singleton_classes,
        workers=args.workers,
    )
    out = args.out or config.paths.manifest
    matching.save_manifest(manifest, out)
    emit_report({"manifest": {"out": str(out), **matching.manifest_summary(manifest)}}, None)
    return EXIT_OK


def cmd_metrics_fad(args, config: PipelineConfig) -> int:
    real = read_embeddings(args.real)
    generated = read_embeddings(args.gen)
    g_real = metrics.fit_gaussian(real)
    g_gen = metrics.fit_gaussian(generated)
    value, regularized = metrics.frechet_distance_details(g_real, g_gen)
    emit_report(
        {
            "fad": {
                "value": value,
                "regularization_applied": regularized,
                "real": {"path": str(args.real), "n": len(real), "dim": real.dim},
                "generated": {
                    "path": str(args.gen),
                    "n": len(generated),
                    "dim": generated.dim,
                },
            }
        },
        args.out,
    )
    return EXIT_OK


def cmd_metrics_msd(args, config: PipelineConfig) -> int:
    embeddings = read_embeddings(args.emb)
    manifest = matching.load_manifest(args.manifest)
    per_class = {}
    for cls in manifest.classes:
        vectors = []
        for sub in cls.subcategories:
            for clip_id in sub.clip_ids:
                if clip_id not in embeddings:
                    raise metrics.MetricsError(
                        f"clip {clip_id!r} from class {cls.class_name!r} "
                        f"has no embedding in {args.emb}"
                    )
                vectors.append(embeddings.vector(clip_id))
        per_class[cls.class_name] = vectors
    report = metrics.msd_report(per_class)
    emit_report(
        {
            "msd": {
                "per_class": report.per_class,
                "mean_over_classes": report.mean_over_classes,
                "pair_counts": report.pair_counts,
                "inputs": {
                    "embeddings": str(args.emb),
                    "manifest": str(args.manifest),
                    "n": len(embeddings),
                    "dim": embeddings.dim,
                },
            }
        },
        args.out,
    )
    return EXIT_OK


def cmd_metrics_ttest(args, config: PipelineConfig) -> int:
    a = read_samples_file(args.a)
    b = read_samples_file(args.b)
    result = metrics.welch_ttest(a, b)
    emit_report(
        {
            "ttest": {
                "t": result.t,
                "df": result.df,
                "p_two_sided": result.p_two_sided,
                "inputs": {"a": str(args.a), "b": str(args.b), "n_a": len(a), "n_b": len(b)},
            }
        },
        args.out,
    )
    return EXIT_OK


def cmd_fuse_export(args, config: PipelineConfig) -> int:
    manifest = matching.load_manifest(args.manifest)
    label_dim = args.label_dim or config.fusion.label_dim
    seed = args.seed if args.seed is not None else config.fusion.seed
    table = fusion.build_label_table(
        [cls.class_name for cls in manifest.classes], label_dim, seed
    )
    text_set = read_embeddings(args.text_emb) if args.text_emb else None
    image_set = read_embeddings(args.image_emb) if args.image_emb else None
    count = fusion.export_conditioning(
        manifest, table, text_set, image_set, args.mode, args.out
    )
    fused_dim = label_dim
    if args.mode == "text":
        fused_dim += text_set.dim
    elif args.mode == "image":
        fused_dim += image_set.dim
    emit_report(
        {
            "fused": {
                "count": count,
                "mode": args.mode,
                "label_dim": label_dim,
                "dim": fused_dim,
                "seed": seed,
                "out": str(args.out),
            }
        },
        None,
    )
    return EXIT_OK


def cmd_embed_pack(args, config: PipelineConfig) -> int:
    records = read_vectors_jsonl(args.infile)
    if not records:
        raise EmbeddingFormatError(f"{args.infile}: no records")
    ids = [r["id"] for r in records]
    vectors = [r["values"] for r in records]
    dims = {len(v) for v in vectors}
    if len(dims) != 1:
        raise EmbeddingFormatError(f"{args.infile}: inconsistent vector lengths {sorted(dims)}")
    es = EmbeddingSet(Modality[args.modality.upper()], dims.pop(), ids, vectors)
    byte_count = write_embeddings(es, args.out)
    emit_report(
        {"packed": {"count": len(es), "dim": es.dim, "bytes": byte_count, "out": str(args.out)}},
        None,
    )
    return EXIT_OK


def cmd_embed_fetch(args, config: PipelineConfig) -> int:
    items = read_vectors_jsonl(args.items)
    client = EmbeddingProviderClient(args.provider)
    es = client.fetch(Modality[args.modality.upper()], items, batch_size=args.batch_size)
    byte_count = write_embeddings(es, args.out)
    emit_report(
        {"fetched": {"count": len(es), "dim": es.dim, "bytes": byte_count, "out": str(args.out)}},
        None,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divesound", description=__doc__)
    parser.add_argument("--config", help="pipeline config JSON file")
    parser.add_argument("--seed", type=int, default=None, help="override fusion seed")
    parser.add_argument(
        "--print-config", action="store_true", help="print the effective config and exit"
    )
    sub = parser.add_subparsers(dest="command")

    tax = sub.add_parser("taxonomy", help="taxonomy construction and inspection")
    tax_sub = tax.add_subparsers(dest="subcommand", required=True)
    build = tax_sub.add_parser("build", help="run the LLM pipeline over a label file")
    build.add_argument("--labels", required=True, help="category<TAB>label lines")
    build.add_argument("--replay", help="replay transcripts from this directory")
    build.add_argument("--record", help="record transcripts into this directory")
    build.add_argument("--out", help="output taxonomy JSON path")
    build.add_argument("--base-url", help="chat endpoint base URL")
    build.add_argument("--model", help="chat model id")
    build.set_defaults(handler=cmd_taxonomy_build)
    validate = tax_sub.add_parser("validate", help="check taxonomy invariants")
    validate.add_argument("file")
    validate.set_defaults(handler=cmd_taxonomy_validate)
    stats = tax_sub.add_parser("stats", help="class/subcategory statistics")
    stats.add_argument("file")
    stats.add_argument("--out")
    stats.set_defaults(handler=cmd_taxonomy_stats)

    match = sub.add_parser("match", help="cross-modal matching")
    match_sub = match.add_subparsers(dest="subcommand", required=True)
    run = match_sub.add_parser("run", help="build a dataset manifest")
    run.add_argument("--taxonomy", required=True)
    run.add_argument("--audio", required=True, help="audio embedding file")
    run.add_argument("--frames", required=True, help="frame image embedding file")
    run.add_argument("--text", required=True, help="plain subcategory text embeddings")
    run.add_argument("--augmented-text", required=True, help="augmented text embeddings")
    run.add_argument("--out")
    run.add_argument("--min-clips", type=int, default=None)
    run.add_argument("--scale", type=float, default=None)
    run.add_argument("--frame-agg", choices=list(matching.FRAME_AGGREGATIONS))
    run.add_argument("--keep-singleton-classes", action="store_true")
    run.add_argument("--workers", type=int, default=1)
    run.set_defaults(handler=cmd_match_run)

    met = sub.add_parser("metrics", help="objective quality/diversity metrics")
    met_sub = met.add_subparsers(dest="subcommand", required=True)
    fad = met_sub.add_parser("fad", help="Fréchet distance between embedding sets")
    fad.add_argument("--real", required=True)
    fad.add_argument("--gen", required=True)
    fad.add_argument("--out")
    fad.set_defaults(handler=cmd_metrics_fad)
    msd = met_sub.add_parser("msd", help="per-class mean squared pairwise distance")
    msd.add_argument("--emb", required=True)
    msd.add_argument("--manifest", required=True)
    msd.add_argument("--out")
    msd.set_defaults(handler=cmd_metrics_msd)
    ttest = met_sub.add_parser("ttest", help="Welch t-test over two sample files")
    ttest.add_argument("--a", required=True)
    ttest.add_argument("--b", required=True)
    ttest.add_argument("--out")
    ttest.set_defaults(handler=cmd_metrics_ttest)

    fuse_cmd = sub.add_parser("fuse", help="conditioning vector export")
    fuse_sub = fuse_cmd.add_subparsers(dest="subcommand", required=True)
    export = fuse_sub.add_parser("export", help="write fused vectors for retained clips")
    export.add_argument("--manifest", required=True)
    export.add_argument("--mode", required=True, choices=list(fusion.MODES))
    export.add_argument("--label-dim", type=int, default=None)
    export.add_argument("--seed", type=int, default=None)
    export.add_argument("--text-emb")
    export.add_argument("--image-emb")
    export.add_argument("--out", required=True)
    export.set_defaults(handler=cmd_fuse_export)

    embed = sub.add_parser("embed", help="embedding container utilities")
    embed_sub = embed.add_subparsers(dest="subcommand", required=True)
    pack = embed_sub.add_parser("pack", help="pack JSONL vectors into the binary container")
    pack.add_argument("--modality", required=True, choices=["text", "audio", "image"])
    pack.add_argument("--in", dest="infile", required=True)
    pack.add_argument("--out", required=True)
    pack.set_defaults(handler=cmd_embed_pack)
    fetch = embed_sub.add_parser("fetch", help="fetch vectors from a provider service")
    fetch.add_argument("--provider", required=True)
    fetch.add_argument("--modality", required=True, choices=["text", "audio", "image"])
    fetch.add_argument("--items", required=True, help="JSONL items with id and text/uri")
    fetch.add_argument("--out", required=True)
    fetch.add_argument("--batch-size", type=int, default=None)
    fetch.set_defaults(handler=cmd_embed_fetch)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.fusion.seed = args.seed
        config.validate()
        if args.print_config:
            print(json.dumps(config.to_dict(), ensure_ascii=False, indent=2))
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_VALIDATION
        return args.handler(args, config)
    except (llm.TransportError, llm.ReplayMissError, ProviderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except (
        taxonomy.TaxonomyParseError,
        taxonomy.TaxonomyVersionError,
        EmbeddingFormatError,
        json.JSONDecodeError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (
        taxonomy.TaxonomyError,
        matching.MatchInputError,
        metrics.MetricsError,
        fusion.FusionError,
        llm.LlmError,
        KeyError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
