"""Stage-1 training and evaluation.

Metrics follow the benchmark definitions: ACC is the fraction of
predictions whose rounded value (half away from zero) equals the label,
MSE and MAE are plain regression errors over the raw predictions.
Slices are reported per platform and per observation-period bucket
(sample age <= 3 days, (3, 7], > 7).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .encode import EmbeddingProvider, FeatureCache
from .propgraph import AblationMask, GraphView, PropagationGraph
from .records import SECONDS_PER_DAY, SplitSpec
from .rgcn import (
    ModelParams,
    NumericError,
    OptimizerState,
    RgcnConfig,
    forward,
    head_predict,
    loss_and_grad,
    step,
)
from .sampler import SamplerConfig, Subgraph, batch_iterator, sample_subgraph

PERIOD_BUCKETS = ("<=3d", "3-7d", ">7d")


class PipelineError(ValueError):
    pass


def rounding(value: float) -> int:
    """Round half away from zero."""
    return int(math.floor(value + 0.5)) if value >= 0 else -int(math.floor(-value + 0.5))


@dataclass(frozen=True)
class Prediction:
    y_hat: float
    y: int
    platform: str = ""
    post_time: int = 0
    sample_time: int = 0

    def period_bucket(self) -> str:
        days = (self.sample_time - self.post_time) / SECONDS_PER_DAY
        if days <= 3:
            return PERIOD_BUCKETS[0]
        if days <= 7:
            return PERIOD_BUCKETS[1]
        return PERIOD_BUCKETS[2]


@dataclass(frozen=True)
class EvalResult:
    acc: float
    mse: float
    mae: float
    n: int
    slices: dict[str, "EvalResult"] = field(default_factory=dict)

    def __post_init__(self):
        if self.n > 0 and self.mae * self.mae > self.mse + 1e-9:
            raise PipelineError(f"inconsistent metrics: mae^2={self.mae**2} > mse={self.mse}")

    def to_obj(self) -> dict:
        obj = {"acc": self.acc, "mse": self.mse, "mae": self.mae, "n": self.n}
        if self.slices:
            obj["slices"] = {k: v.to_obj() for k, v in sorted(self.slices.items())}
        return obj


def _metrics(predictions: Sequence[Prediction]) -> tuple[float, float, float]:
    # fsum keeps the sums exactly rounded, so metric values are independent
    # of accumulation order and reproducible against naive recomputation.
    n = len(predictions)
    acc = sum(1 for p in predictions if rounding(p.y_hat) == p.y) / n
    mse = math.fsum((p.y - p.y_hat) ** 2 for p in predictions) / n
    mae = math.fsum(abs(p.y - p.y_hat) for p in predictions) / n
    return acc, mse, mae


def evaluate(predictions: Sequence[Prediction], slices: Optional[str] = None) -> EvalResult:
    """ACC/MSE/MAE over predictions; ``slices`` in {None, 'platform', 'period'}."""
    if not predictions:
        raise PipelineError("empty prediction set")
    for p in predictions:
        if not 0.0 < p.y_hat < 9.0:
            raise PipelineError(f"prediction {p.y_hat} outside (0, 9)")
        if not 0 <= p.y <= 9:
            raise PipelineError(f"label {p.y} outside [0, 9]")
    acc, mse, mae = _metrics(predictions)
    sliced: dict[str, EvalResult] = {}
    if slices == "platform":
        groups: dict[str, list[Prediction]] = {}
        for p in predictions:
            groups.setdefault(p.platform, []).append(p)
        sliced = {k: evaluate(v) for k, v in sorted(groups.items())}
    elif slices == "period":
        sliced = {k: v for k, v in period_breakdown(predictions).items()}
    elif slices is not None:
        raise PipelineError(f"unknown slice key {slices!r}")
    return EvalResult(acc, mse, mae, len(predictions), sliced)


def period_breakdown(predictions: Sequence[Prediction]) -> dict[str, EvalResult]:
    """Evaluate per observation-period bucket; buckets partition the input."""
    groups: dict[str, list[Prediction]] = {b: [] for b in PERIOD_BUCKETS}
    for p in predictions:
        groups[p.period_bucket()].append(p)
    return {b: evaluate(g) for b, g in groups.items() if g}


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    eval_every: int = 200
    beta: float = 1.0
    seed: int = 0
    threads: int = 1


@dataclass
class TrainLogEntry:
    step: int
    epoch: int
    loss: float
    platform_metrics: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_obj(self) -> dict:
        obj = {"step": self.step, "epoch": self.epoch, "loss": self.loss}
        if self.platform_metrics:
            obj["platforms"] = self.platform_metrics
        return obj


def _predictions_for_batch(
    graph: PropagationGraph | GraphView, sample_ids: Sequence[str], y_hat: np.ndarray
) -> list[Prediction]:
    preds = []
    for sid, value in zip(sample_ids, y_hat):
        rec = graph.corpus.record(sid)
        preds.append(
            Prediction(
                y_hat=float(value),
                y=int(rec.influence_level),
                platform=rec.platform,
                post_time=rec.post_time,
                sample_time=rec.sample_time,
            )
        )
    return preds


def train_stage1(
    graph: PropagationGraph | GraphView,
    split: SplitSpec,
    params: ModelParams,
    features: FeatureCache,
    rgcn_config: RgcnConfig,
    sampler_config: SamplerConfig,
    train_config: TrainConfig,
) -> tuple[ModelParams, list[TrainLogEntry]]:
    """Minibatch loop: sample subgraph, forward, Smooth L1, backward, Adam step.

    Logs training-batch per-platform ACC/MSE every ``eval_every`` steps
    (metrics are over the batches seen since the previous log entry).
    """
    train_ids = sorted(
        sid for sid in split.train_ids
        if graph.corpus.record(sid).influence_level is not None
    )
    if not train_ids and train_config.epochs > 0:
        raise PipelineError("no labeled training samples")
    state = OptimizerState(lr=train_config.lr)
    log: list[TrainLogEntry] = []
    window: list[Prediction] = []
    global_step = 0
    for epoch in range(train_config.epochs):
        for batch_ids in batch_iterator(
            split, train_config.batch_size, train_config.seed, epoch=epoch, ids=train_ids
        ):
            nodes = [graph.video_node_of_sample(sid) for sid in batch_ids]
            subgraph = sample_subgraph(
                graph, nodes, sampler_config, epoch=epoch, threads=train_config.threads
            )
            feats = features.by_kind(subgraph.node_ids, subgraph.kinds)
            loss, grads, y_hat = loss_and_grad(
                subgraph, feats, params, rgcn_config, beta=train_config.beta
            )
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at step {global_step}")
            step(params, grads, state)
            global_step += 1
            window.extend(_predictions_for_batch(graph, batch_ids, y_hat))
            if global_step % train_config.eval_every == 0:
                log.append(_log_entry(global_step, epoch, loss, window))
                window = []
    if window:
        log.append(_log_entry(global_step, train_config.epochs - 1, log[-1].loss if log else 0.0, window))
    return params, log


def _log_entry(step_no: int, epoch: int, loss: float, window: Sequence[Prediction]) -> TrainLogEntry:
    result = evaluate(window, slices="platform")
    platforms = {
        name: {"acc": r.acc, "mse": r.mse, "n": r.n} for name, r in result.slices.items()
    }
    return TrainLogEntry(step=step_no, epoch=epoch, loss=loss, platform_metrics=platforms)


def predict(
    graph: PropagationGraph | GraphView,
    sample_ids: Sequence[str],
    params: ModelParams,
    features: FeatureCache,
    rgcn_config: RgcnConfig,
    sampler_config: SamplerConfig,
    batch_size: int = 256,
    threads: int = 1,
) -> list[Prediction]:
    """Deterministic inference over the given samples (fixed evaluation epoch)."""
    preds: list[Prediction] = []
    ordered = list(sample_ids)
    for start in range(0, len(ordered), batch_size):
        chunk = ordered[start:start + batch_size]
        nodes = [graph.video_node_of_sample(sid) for sid in chunk]
        subgraph = sample_subgraph(graph, nodes, sampler_config, epoch=0, threads=threads)
        feats = features.by_kind(subgraph.node_ids, subgraph.kinds)
        h = forward(subgraph, feats, params, rgcn_config)
        y_hat = head_predict(h[subgraph.batch_locals], params)
        preds.extend(_predictions_for_batch(graph, chunk, y_hat))
    return preds


def fprime_for_samples(
    graph: PropagationGraph | GraphView,
    sample_ids: Sequence[str],
    params: ModelParams,
    features: FeatureCache,
    rgcn_config: RgcnConfig,
    sampler_config: SamplerConfig,
    batch_size: int = 256,
    threads: int = 1,
) -> dict[str, np.ndarray]:
    """Top-layer graph states for the samples' video nodes (evaluation-seeded)."""
    out: dict[str, np.ndarray] = {}
    ordered = list(sample_ids)
    for start in range(0, len(ordered), batch_size):
        chunk = ordered[start:start + batch_size]
        nodes = [graph.video_node_of_sample(sid) for sid in chunk]
        subgraph = sample_subgraph(graph, nodes, sampler_config, epoch=0, threads=threads)
        feats = features.by_kind(subgraph.node_ids, subgraph.kinds)
        h = forward(subgraph, feats, params, rgcn_config)
        for sid, local in zip(chunk, subgraph.batch_locals):
            out[sid] = h[local].copy()
    return out


def _format_float(x: float) -> str:
    return repr(float(x))


def emit_report(
    result: EvalResult,
    out_dir: str | Path,
    log: Optional[Sequence[TrainLogEntry]] = None,
    period: Optional[dict[str, EvalResult]] = None,
) -> list[Path]:
    """Write report.json, metrics.csv, per-platform convergence CSVs, and
    the period-breakdown CSV; all outputs are deterministic."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    report_path = out / "report.json"
    obj = {"overall": result.to_obj()}
    if period:
        obj["period"] = {k: v.to_obj() for k, v in period.items()}
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(report_path)

    metrics_path = out / "metrics.csv"
    with open(metrics_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slice", "acc", "mse", "mae", "n"])
        writer.writerow(["overall", _format_float(result.acc), _format_float(result.mse),
                         _format_float(result.mae), result.n])
        for name, r in sorted(result.slices.items()):
            writer.writerow([name, _format_float(r.acc), _format_float(r.mse),
                             _format_float(r.mae), r.n])
    written.append(metrics_path)

    if period:
        period_path = out / "period_breakdown.csv"
        with open(period_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bucket", "acc", "mse", "mae", "n"])
            for bucket in PERIOD_BUCKETS:
                if bucket in period:
                    r = period[bucket]
                    writer.writerow([bucket, _format_float(r.acc), _format_float(r.mse),
                                     _format_float(r.mae), r.n])
        written.append(period_path)

    if log:
        written.extend(write_convergence(log, out))
    return written


def write_convergence(log: Sequence[TrainLogEntry], out_dir: str | Path) -> list[Path]:
    """One CSV of training-batch (step, acc, mse) per platform, Figure-6 style."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    platforms = sorted({p for entry in log for p in entry.platform_metrics})
    for platform in platforms:
        conv_path = out / f"convergence_{platform}.csv"
        with open(conv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "acc", "mse", "n"])
            for entry in log:
                m = entry.platform_metrics.get(platform)
                if m:
                    writer.writerow([entry.step, _format_float(m["acc"]),
                                     _format_float(m["mse"]), m["n"]])
        written.append(conv_path)
    return written


def write_train_log(log: Sequence[TrainLogEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry.to_obj(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")
