"""Sample corpus parsing, validation, deduplication, and date splitting.

The on-disk format is newline-delimited JSON, UTF-8, one sample per line.
Field names are fixed (see ``RECORD_FIELDS``); serialization through
``write_corpus`` is canonical, so parse -> write -> parse is a fixed point.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import INDICATORS, PLATFORMS
from .tokens import count_tokens

SECONDS_PER_DAY = 86_400

RECORD_FIELDS = (
    "video_id", "sample_id", "platform", "topic", "title", "description",
    "post_time", "sample_time", "duration_s", "author_id", "fans",
    "likes", "collects", "views", "shares", "comments_count", "comments",
    "video_ref", "final_indicators", "influence_level", "content_id",
)

_COUNTER_FIELDS = ("fans", "likes", "collects", "views", "shares", "comments_count")


class ParseError(ValueError):
    """Malformed input file (bad JSON, wrong types, duplicate ids)."""


class ValidationError(ValueError):
    """A record violates a domain invariant."""


@dataclass(frozen=True)
class Comment:
    text: str
    time: int


@dataclass(frozen=True)
class SampleRecord:
    """One timestamped observation of a short-video."""

    video_id: str
    sample_id: str
    platform: str
    topic: str
    title: str
    description: str
    post_time: int
    sample_time: int
    duration_s: int
    author_id: str
    fans: int
    likes: int
    collects: int
    views: int
    shares: int
    comments_count: int
    comments: tuple[Comment, ...] = ()
    video_ref: Optional[str] = None
    final_indicators: Optional[tuple[int, int, int, int, int]] = None
    influence_level: Optional[int] = None
    content_id: Optional[str] = None

    def indicators(self) -> tuple[int, int, int, int, int]:
        """Current interactive indicators in canonical order (views, likes, shares, collects, comments)."""
        return (self.views, self.likes, self.shares, self.collects, self.comments_count)


def validate_record(rec: SampleRecord) -> None:
    """Raise ``ValidationError`` naming the offending field."""
    if rec.platform not in PLATFORMS:
        raise ValidationError(f"platform: unknown platform {rec.platform!r} in sample {rec.sample_id}")
    if rec.sample_time < rec.post_time:
        raise ValidationError(
            f"sample_time: sample_time {rec.sample_time} earlier than post_time "
            f"{rec.post_time} in sample {rec.sample_id}"
        )
    if not 1 <= rec.duration_s <= 300:
        raise ValidationError(f"duration_s: {rec.duration_s} outside [1, 300] in sample {rec.sample_id}")
    for name in _COUNTER_FIELDS:
        if getattr(rec, name) < 0:
            raise ValidationError(f"{name}: negative value in sample {rec.sample_id}")
    if rec.comments_count < len(rec.comments):
        raise ValidationError(
            f"comments_count: {rec.comments_count} smaller than captured comment "
            f"count {len(rec.comments)} in sample {rec.sample_id}"
        )
    if rec.final_indicators is not None:
        if len(rec.final_indicators) != 5 or any(v < 0 for v in rec.final_indicators):
            raise ValidationError(f"final_indicators: need five non-negative values in sample {rec.sample_id}")
    if rec.influence_level is not None and not 0 <= rec.influence_level <= 9:
        raise ValidationError(f"influence_level: {rec.influence_level} outside [0, 9] in sample {rec.sample_id}")


@dataclass(frozen=True)
class Corpus:
    """Immutable record collection with per-video and per-topic time indices.

    ``index`` orders sample_ids of one video by (sample_time, sample_id);
    ``topic_index`` orders by (post_time, sample_time, sample_id), the
    ordering used for implicit same-topic adjacency.
    """

    records: tuple[SampleRecord, ...]
    index: dict[str, tuple[str, ...]] = field(repr=False, default_factory=dict)
    topic_index: dict[str, tuple[str, ...]] = field(repr=False, default_factory=dict)
    by_sample_id: dict[str, int] = field(repr=False, default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, sample_id: str) -> SampleRecord:
        return self.records[self.by_sample_id[sample_id]]


def build_corpus(records: Sequence[SampleRecord]) -> Corpus:
    by_sample_id: dict[str, int] = {}
    for i, rec in enumerate(records):
        if rec.sample_id in by_sample_id:
            raise ParseError(f"duplicate sample_id {rec.sample_id!r}")
        by_sample_id[rec.sample_id] = i

    video_groups: dict[str, list[SampleRecord]] = {}
    topic_groups: dict[str, list[SampleRecord]] = {}
    for rec in records:
        video_groups.setdefault(rec.video_id, []).append(rec)
        topic_groups.setdefault(rec.topic, []).append(rec)

    index = {
        vid: tuple(r.sample_id for r in sorted(group, key=lambda r: (r.sample_time, r.sample_id)))
        for vid, group in video_groups.items()
    }
    topic_index = {
        topic: tuple(
            r.sample_id
            for r in sorted(group, key=lambda r: (r.post_time, r.sample_time, r.sample_id))
        )
        for topic, group in topic_groups.items()
    }
    return Corpus(tuple(records), index, topic_index, by_sample_id)


def _record_from_obj(obj: dict, lineno: int) -> SampleRecord:
    try:
        comments = tuple(Comment(text=str(c["text"]), time=int(c["time"])) for c in obj.get("comments") or ())
        final = obj.get("final_indicators")
        if final is not None:
            final = tuple(int(v) for v in final)
        level = obj.get("influence_level")
        return SampleRecord(
            video_id=str(obj["video_id"]),
            sample_id=str(obj["sample_id"]),
            platform=str(obj["platform"]),
            topic=str(obj["topic"]),
            title=str(obj["title"]),
            description=str(obj["description"]),
            post_time=int(obj["post_time"]),
            sample_time=int(obj["sample_time"]),
            duration_s=int(obj["duration_s"]),
            author_id=str(obj["author_id"]),
            fans=int(obj["fans"]),
            likes=int(obj["likes"]),
            collects=int(obj["collects"]),
            views=int(obj["views"]),
            shares=int(obj["shares"]),
            comments_count=int(obj["comments_count"]),
            comments=comments,
            video_ref=None if obj.get("video_ref") is None else str(obj["video_ref"]),
            final_indicators=final,
            influence_level=None if level is None else int(level),
            content_id=None if obj.get("content_id") is None else str(obj["content_id"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"line {lineno}: bad record: {exc}") from exc


def parse_corpus(path: str | Path, strict: bool = False) -> Corpus:
    """Parse a newline-delimited JSON corpus file.

    In strict mode every record must pass ``validate_record``; errors
    report the source line number.
    """
    records: list[SampleRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
            rec = _record_from_obj(obj, lineno)
            if strict:
                try:
                    validate_record(rec)
                except ValidationError as exc:
                    raise ValidationError(f"line {lineno}: {exc}") from exc
            records.append(rec)
    return build_corpus(records)


def record_to_obj(rec: SampleRecord) -> dict:
    """Canonical JSON object for one record; optional fields omitted when unset."""
    obj = {
        "video_id": rec.video_id,
        "sample_id": rec.sample_id,
        "platform": rec.platform,
        "topic": rec.topic,
        "title": rec.title,
        "description": rec.description,
        "post_time": rec.post_time,
        "sample_time": rec.sample_time,
        "duration_s": rec.duration_s,
        "author_id": rec.author_id,
        "fans": rec.fans,
        "likes": rec.likes,
        "collects": rec.collects,
        "views": rec.views,
        "shares": rec.shares,
        "comments_count": rec.comments_count,
        "comments": [{"text": c.text, "time": c.time} for c in rec.comments],
    }
    if rec.video_ref is not None:
        obj["video_ref"] = rec.video_ref
    if rec.final_indicators is not None:
        obj["final_indicators"] = list(rec.final_indicators)
    if rec.influence_level is not None:
        obj["influence_level"] = rec.influence_level
    if rec.content_id is not None:
        obj["content_id"] = rec.content_id
    return obj


def record_to_json(rec: SampleRecord) -> str:
    return json.dumps(record_to_obj(rec), ensure_ascii=False, separators=(",", ":"))


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus.records:
            fh.write(record_to_json(rec))
            fh.write("\n")


def format_time(t: int) -> str:
    """Unix seconds -> 'YYYY-MM-DD HH:MM:SS' in UTC."""
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%d %H:%M:%S")


def post_date(rec: SampleRecord) -> date:
    return datetime.fromtimestamp(rec.post_time, tz=timezone.utc).date()


def sample_info_obj(rec: SampleRecord, comments: Optional[Sequence[Comment]] = None) -> dict:
    """Prompt-facing JSON info for one sample: everything observable at
    sample time, never the influence level or the long-horizon indicators."""
    shown = rec.comments if comments is None else tuple(comments)
    return {
        "video_id": rec.video_id,
        "sample_id": rec.sample_id,
        "platform": rec.platform,
        "topic": rec.topic,
        "title": rec.title,
        "description": rec.description,
        "post_time": format_time(rec.post_time),
        "current_time": format_time(rec.sample_time),
        "duration_s": rec.duration_s,
        "author_id": rec.author_id,
        "fans": rec.fans,
        "likes": rec.likes,
        "collects": rec.collects,
        "views": rec.views,
        "shares": rec.shares,
        "comments_count": rec.comments_count,
        "comments": [{"text": c.text, "time": format_time(c.time)} for c in shown],
    }


def sample_info_json(rec: SampleRecord, comments: Optional[Sequence[Comment]] = None) -> str:
    return json.dumps(sample_info_obj(rec, comments), ensure_ascii=False, separators=(", ", ": "))


def dedup_min_gap(corpus: Corpus, gap_days: int = 2) -> Corpus:
    """Drop same-video samples closer than ``gap_days`` to the last kept one.

    Greedy from the earliest sample per video; idempotent.
    """
    gap = gap_days * SECONDS_PER_DAY
    keep: set[str] = set()
    for sample_ids in corpus.index.values():
        last_kept = None
        for sid in sample_ids:
            t = corpus.record(sid).sample_time
            if last_kept is None or t - last_kept >= gap:
                keep.add(sid)
                last_kept = t
    return build_corpus([r for r in corpus.records if r.sample_id in keep])


@dataclass(frozen=True)
class SplitSpec:
    """Date-cutoff partition: post date <= cutoff goes to train."""

    cutoff: date
    train_ids: frozenset[str]
    test_ids: frozenset[str]


def split_by_date(corpus: Corpus, cutoff: date) -> SplitSpec:
    train, test = [], []
    for rec in corpus.records:
        (train if post_date(rec) <= cutoff else test).append(rec.sample_id)
    return SplitSpec(cutoff, frozenset(train), frozenset(test))


def corpus_stats(corpus: Corpus) -> dict:
    """Summary histograms: durations, topic popularity, platforms, levels,
    approximate token lengths of the prompt-facing sample info."""
    duration_hist = Counter(r.duration_s for r in corpus.records)
    topic_counts = Counter(r.topic for r in corpus.records)
    platform_counts = Counter(r.platform for r in corpus.records)
    level_hist = Counter(
        r.influence_level for r in corpus.records if r.influence_level is not None
    )
    token_hist: Counter[int] = Counter()
    for rec in corpus.records:
        n = count_tokens(sample_info_json(rec))
        token_hist[(n // 100) * 100] += 1
    return {
        "n_records": len(corpus.records),
        "n_videos": len(corpus.index),
        "n_topics": len(corpus.topic_index),
        "platform_counts": dict(sorted(platform_counts.items())),
        "duration_hist": {str(k): v for k, v in sorted(duration_hist.items())},
        "duration_mode": max(sorted(duration_hist), key=duration_hist.get) if duration_hist else None,
        "topic_ranking": [t for t, _ in topic_counts.most_common()],
        "level_hist": {str(k): v for k, v in sorted(level_hist.items())},
        "token_hist": {str(k): v for k, v in sorted(token_hist.items())},
    }


def write_stats(stats: dict, out_dir: str | Path) -> list[Path]:
    """Emit the JSON report plus one CSV per histogram; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "stats.json"]
    with open(written[0], "w", encoding="utf-8") as fh:
        json.dump(stats, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    for name, col in (
        ("duration_hist", "duration_s"),
        ("level_hist", "level"),
        ("token_hist", "token_bucket"),
        ("platform_counts", "platform"),
    ):
        path = out / f"{name}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([col, "count"])
            for key, value in stats[name].items():
                writer.writerow([key, value])
        written.append(path)
    return written
