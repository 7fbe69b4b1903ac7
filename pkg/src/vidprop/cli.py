"""Command-line entry point.

One executable, subcommand per pipeline stage. A TOML config file
supplies defaults (``--config`` or the VIDPROP_CONFIG environment
variable); flags override. Every command is deterministic given config
and seed, at any ``--threads`` value.

Exit codes: 0 success, 2 config/usage error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields as dataclass_fields
from datetime import date
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .align import AlignmentError, ScalingFactors, fit_factors
from .annotate import AnnotationError, LevelCriteria, label_corpus
from .encode import EncodeError, FeatureCache, FileProvider, StubProvider
from .instruct import (
    InstructError,
    TokenBudget,
    export_sidecar,
    render_pair,
    truncate,
    write_instructions,
)
from .pipeline import (
    PipelineError,
    TrainConfig,
    emit_report,
    evaluate,
    period_breakdown,
    predict,
    train_stage1,
    write_convergence,
    write_train_log,
)
from .propgraph import AblationMask, GraphError, PropagationGraph, apply_ablation, build_graph
from .records import (
    ParseError,
    ValidationError,
    corpus_stats,
    dedup_min_gap,
    parse_corpus,
    split_by_date,
    write_corpus,
    write_stats,
)
from .rgcn import NumericError, RgcnConfig, ShapeError, init_params, load_params, save_params
from .sampler import SamplerConfig, SamplerError
from .synth import SynthConfig, SynthError, generate_corpus
from .tokens import count_tokens

ENV_CONFIG = "VIDPROP_CONFIG"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_DATA_ERRORS = (
    ParseError, ValidationError, AlignmentError, AnnotationError, GraphError,
    SamplerError, SynthError, EncodeError, InstructError, PipelineError,
    ShapeError, FileNotFoundError,
)

_ABLATIONS = {
    "v": AblationMask(zero_video_features=True),
    "vv": AblationMask(drop_video_video_edges=True),
    "iv": AblationMask(drop_interactive_edges=True),
    "cv": AblationMask(drop_comment_edges=True),
}


class ConfigError(ValueError):
    pass


def _load_config(path: str | None) -> dict:
    if path is None:
        path = os.environ.get(ENV_CONFIG)
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad config file {path}: {exc}") from None


class Settings:
    """Merged config sections with flag overrides applied."""

    def __init__(self, raw: dict, args: argparse.Namespace):
        self.raw = raw
        self.seed_override = args.seed
        self.threads = args.threads
        self.out_dir = Path(args.output_dir)
        self.mask = _ABLATIONS.get(args.ablation, AblationMask()) if args.ablation else AblationMask()

    def section(self, name: str) -> dict:
        sec = dict(self.raw.get(name, {}))
        if self.seed_override is not None and "seed" in _SECTION_SEEDS.get(name, ()):
            sec["seed"] = self.seed_override
        return sec

    def get(self, name: str, key: str, default):
        sec = self.section(name)
        return sec.get(key, default)

    def seeded(self, name: str, default: int = 0) -> int:
        if self.seed_override is not None:
            return self.seed_override
        return int(self.get(name, "seed", default))


_SECTION_SEEDS = {
    "synth": ("seed",),
    "train": ("seed",),
    "sampler": ("seed",),
    "model": ("seed",),
    "instruct": ("seed",),
}


def _synth_config(settings: Settings) -> SynthConfig:
    sec = settings.section("synth")
    allowed = {f.name for f in dataclass_fields(SynthConfig)}
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown [synth] keys: {sorted(unknown)}")
    for key in ("samples_per_video_probs", "platform_probs", "level_probs", "duration_mix"):
        if key in sec:
            sec[key] = tuple(sec[key])
    if settings.seed_override is not None:
        sec["seed"] = settings.seed_override
    return SynthConfig(**sec)


def _sampler_config(settings: Settings) -> SamplerConfig:
    return SamplerConfig(
        fanout=int(settings.get("sampler", "fanout", 50)),
        depth=int(settings.get("sampler", "depth", 2)),
        comment_cap=int(settings.get("sampler", "comment_cap", 50)),
        seed=settings.seeded("sampler"),
    )


def _rgcn_config(settings: Settings) -> RgcnConfig:
    return RgcnConfig(
        d_g=int(settings.get("model", "d_g", 1024)),
        layers=int(settings.get("model", "layers", 2)),
        seed=settings.seeded("model"),
        dtype=str(settings.get("model", "dtype", "float64")),
    )


def _train_config(settings: Settings) -> TrainConfig:
    return TrainConfig(
        epochs=int(settings.get("train", "epochs", 10)),
        batch_size=int(settings.get("train", "batch_size", 64)),
        lr=float(settings.get("train", "lr", 1e-3)),
        eval_every=int(settings.get("train", "eval_every", 200)),
        beta=float(settings.get("train", "beta", 1.0)),
        seed=settings.seeded("train"),
        threads=settings.threads,
    )


def _provider(settings: Settings):
    sidecar = settings.get("model", "embedding_sidecar", "")
    if sidecar:
        return FileProvider(sidecar)
    return StubProvider(int(settings.get("model", "provider_seed", settings.seeded("model"))))


def _criteria(settings: Settings) -> LevelCriteria:
    path = settings.get("annotate", "criteria", "")
    return LevelCriteria.load(path) if path else LevelCriteria()


def _cutoff(settings: Settings) -> date:
    return date.fromisoformat(str(settings.get("split", "cutoff", "2024-12-20")))


def _load_graph(settings: Settings, corpus_path: str):
    corpus = parse_corpus(corpus_path, strict=bool(settings.get("ingest", "strict", False)))
    graph = build_graph(corpus)
    return apply_ablation(graph, settings.mask) if settings.mask != AblationMask() else graph


# -- commands -----------------------------------------------------------


def _cmd_synth(args, settings: Settings) -> int:
    corpus, truth = generate_corpus(_synth_config(settings), threads=settings.threads)
    settings.out_dir.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, settings.out_dir / "corpus.jsonl")
    truth.save(settings.out_dir / "manifest.json")
    print(f"wrote {len(corpus)} samples to {settings.out_dir / 'corpus.jsonl'}")
    return EXIT_OK


def _cmd_ingest(args, settings: Settings) -> int:
    corpus = parse_corpus(args.corpus, strict=True)
    deduped = dedup_min_gap(corpus, gap_days=int(settings.get("dedup", "gap_days", 2)))
    settings.out_dir.mkdir(parents=True, exist_ok=True)
    write_corpus(deduped, settings.out_dir / "corpus_ingested.jsonl")
    report = {
        "records_in": len(corpus),
        "records_out": len(deduped),
        "dropped": len(corpus) - len(deduped),
    }
    with open(settings.out_dir / "ingest_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"kept {len(deduped)}/{len(corpus)} samples")
    return EXIT_OK


def _cmd_build_graph(args, settings: Settings) -> int:
    corpus = parse_corpus(args.corpus, strict=True)
    graph = build_graph(corpus)
    settings.out_dir.mkdir(parents=True, exist_ok=True)
    graph.save(settings.out_dir / "graph.bin")
    view = apply_ablation(graph, settings.mask)
    counts = {rel.name: n for rel, n in view.count_edges().items()}
    counts["total"] = sum(counts.values())
    with open(settings.out_dir / "edge_counts.json", "w", encoding="utf-8") as fh:
        json.dump({"nodes": graph.n_nodes, "edges": counts}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"graph: {graph.n_nodes} nodes, {counts['total']} edges")
    return EXIT_OK


def _cmd_align(args, settings: Settings) -> int:
    corpus = parse_corpus(args.corpus)
    factors = fit_factors(corpus)
    settings.out_dir.mkdir(parents=True, exist_ok=True)
    factors.save(settings.out_dir / "factors.json")
    print(f"fit {len(list(factors.items()))} scaling factors")
    return EXIT_OK


def _cmd_annotate(args, settings: Settings) -> int:
    corpus = parse_corpus(args.corpus)
    factors = ScalingFactors.load(args.factors)
    labeled = label_corpus(corpus, factors, _criteria(settings))
    settings.out_dir.mkdir(parents=True, exist_ok=True)
    write_corpus(labeled, settings.out_dir / "corpus_labeled.jsonl")
    print(f"labeled {len(labeled.index)} videos")
    return EXIT_OK


def _cmd_train(args, settings: Settings) -> int:
    graph = _load_graph(settings, args.corpus)
    split = split_by_date(graph.corpus, _cutoff(settings))
    rgcn_config = _rgcn_config(settings)
    params = init_params(rgcn_config)
    features = FeatureCache(graph, _provider(settings), settings.mask,
                            dtype=rgcn_config.np_dtype())
    params, log = train_stage1(
        graph, split, params, features, rgcn_config, _sampler_config(settings),
        _train_config(settings),
    )
    settings.out_dir.mkdir(parents=True, exist_ok=True)
    save_params(params, settings.out_dir / "params.bin")
    write_train_log(log, settings.out_dir / "train_log.jsonl")
    write_convergence(log, settings.out_dir)
    print(f"trained on {len(split.train_ids)} samples; params -> {settings.out_dir / 'params.bin'}")
    return EXIT_OK


def _cmd_eval(args, settings: Settings) -> int:
    graph = _load_graph(settings, args.corpus)
    split = split_by_date(graph.corpus, _cutoff(settings))
    rgcn_config = _rgcn_config(settings)
    params = load_params(args.params, d_g=rgcn_config.d_g)
    features = FeatureCache(graph, _provider(settings), settings.mask,
                            dtype=rgcn_config.np_dtype())
    test_ids = sorted(split.test_ids)
    if not test_ids:
        raise PipelineError("empty test split")
    preds = predict(graph, test_ids, params, features, rgcn_config,
                    _sampler_config(settings), threads=settings.threads)
    result = evaluate(preds, slices="platform")
    period = period_breakdown(preds)
    emit_report(result, settings.out_dir, period=period)
    print(f"test n={result.n} acc={result.acc:.4f} mse={result.mse:.4f} mae={result.mae:.4f}")
    return EXIT_OK


def _cmd_export_instructions(args, settings: Settings) -> int:
    graph = _load_graph(settings, args.corpus)
    rgcn_config = _rgcn_config(settings)
    params = load_params(args.params, d_g=rgcn_config.d_g)
    features = FeatureCache(graph, _provider(settings), settings.mask,
                            dtype=rgcn_config.np_dtype())
    comment_cap = int(settings.get("instruct", "comment_cap", 50))
    budget = TokenBudget(max_tokens=int(settings.get("instruct", "max_tokens", 4000)),
                         counter=count_tokens)
    seed = settings.seeded("instruct")
    sample_ids = [rec.sample_id for rec in graph.corpus.records]
    pairs = []
    for sid in sample_ids:
        rec = graph.corpus.record(sid)
        if rec.influence_level is None:
            raise AnnotationError(f"sample {sid} is unlabeled; annotate the corpus first")
        pairs.append(truncate(render_pair(rec, rec.influence_level, comment_cap, seed), budget))
    settings.out_dir.mkdir(parents=True, exist_ok=True)
    write_instructions(pairs, settings.out_dir / "instructions.jsonl")
    n = export_sidecar(
        graph, params, sample_ids, settings.out_dir / "sidecar.bin", features,
        rgcn_config, _sampler_config(settings), threads=settings.threads,
    )
    print(f"exported {len(pairs)} pairs and {n} sidecar entries")
    return EXIT_OK


def _cmd_stats(args, settings: Settings) -> int:
    corpus = parse_corpus(args.corpus)
    stats = corpus_stats(corpus)
    write_stats(stats, settings.out_dir)
    print(f"stats for {stats['n_records']} records -> {settings.out_dir / 'stats.json'}")
    return EXIT_OK


_COMMANDS = {
    "synth": (_cmd_synth, ()),
    "ingest": (_cmd_ingest, ("corpus",)),
    "build-graph": (_cmd_build_graph, ("corpus",)),
    "align": (_cmd_align, ("corpus",)),
    "annotate": (_cmd_annotate, ("corpus", "factors")),
    "train": (_cmd_train, ("corpus",)),
    "eval": (_cmd_eval, ("corpus", "params")),
    "export-instructions": (_cmd_export_instructions, ("corpus", "params")),
    "stats": (_cmd_stats, ("corpus",)),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vidprop",
        description="Short-video propagation graph toolkit",
    )
    parser.add_argument("--version", action="version", version=f"vidprop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, positionals) in _COMMANDS.items():
        p = sub.add_parser(name)
        for positional in positionals:
            p.add_argument(positional)
        p.add_argument("--config", default=None,
                       help=f"TOML config file (default: ${ENV_CONFIG})")
        p.add_argument("--seed", type=int, default=None, help="override every configured seed")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--ablation", choices=sorted(_ABLATIONS), default=None)
        p.add_argument("--output-dir", default="out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler, _ = _COMMANDS[args.command]
    try:
        settings = Settings(_load_config(args.config), args)
        return handler(args, settings)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
