"""Influence-level annotation from aligned long-horizon indicators.

Level 0 is reserved for videos with every indicator at zero. A video
reaches level L in [1, 9] when any one of the five aligned indicators
strictly exceeds that level's threshold; the assigned level is the
maximum level reached. Default thresholds are compiled in and can be
overridden from a JSON file with the same shape.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from . import INDICATORS
from .align import ScalingFactors, align_indicators
from .records import Corpus, SampleRecord, build_corpus


class AnnotationError(ValueError):
    pass


# Strict lower bounds per level 1..9, columns (views, likes, shares, collects, comments).
DEFAULT_THRESHOLDS: tuple[tuple[int, int, int, int, int], ...] = (
    (0, 0, 0, 0, 0),
    (100, 10, 10, 10, 10),
    (100_000, 20, 20, 20, 20),
    (1_000_000, 80, 80, 80, 80),
    (1_000_000, 300, 300, 300, 300),
    (1_000_000, 1_000, 1_000, 1_000, 1_000),
    (10_000_000, 3_000, 3_000, 3_000, 3_000),
    (100_000_000, 10_000, 10_000, 10_000, 10_000),
    (200_000_000, 50_000, 50_000, 50_000, 50_000),
)


@dataclass(frozen=True)
class LevelCriteria:
    """Per-level strict thresholds; row index l-1 holds level l."""

    thresholds: tuple[tuple[int, int, int, int, int], ...] = DEFAULT_THRESHOLDS

    def __post_init__(self):
        if len(self.thresholds) != 9 or any(len(row) != 5 for row in self.thresholds):
            raise AnnotationError("criteria need 9 levels x 5 indicator thresholds")
        for col in range(5):
            column = [row[col] for row in self.thresholds]
            if any(b < a for a, b in zip(column, column[1:])):
                raise AnnotationError(f"threshold column {INDICATORS[col]} must be non-decreasing in level")

    @classmethod
    def from_json_obj(cls, obj: dict) -> "LevelCriteria":
        rows = []
        for level in range(1, 10):
            row = obj[str(level)]
            rows.append(tuple(int(row[ind]) for ind in INDICATORS))
        return cls(tuple(rows))

    @classmethod
    def load(cls, path: str | Path) -> "LevelCriteria":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_obj(json.load(fh))

    def to_json_obj(self) -> dict:
        return {
            str(level + 1): dict(zip(INDICATORS, row))
            for level, row in enumerate(self.thresholds)
        }


def influence_level(aligned: Sequence[float], criteria: LevelCriteria = LevelCriteria()) -> int:
    """Level in [0, 9] for five aligned indicator values."""
    if len(aligned) != 5:
        raise AnnotationError(f"need five aligned values, got {len(aligned)}")
    if any(v < 0 for v in aligned):
        raise AnnotationError(f"negative aligned indicator in {tuple(aligned)}")
    if all(v == 0 for v in aligned):
        return 0
    # Non-zero input is at least level 1 even under overridden criteria
    # whose level-1 thresholds are positive.
    level = 1
    for l, row in enumerate(criteria.thresholds, start=1):
        if any(v > t for v, t in zip(aligned, row)):
            level = l
    return level


def _video_final_indicators(corpus: Corpus, video_id: str) -> tuple[SampleRecord, tuple[int, ...]]:
    """Latest sample of the video that carries the long-horizon measurement."""
    chosen = None
    for sid in corpus.index[video_id]:
        rec = corpus.record(sid)
        if rec.final_indicators is not None:
            chosen = rec
    if chosen is None:
        raise AnnotationError(f"video {video_id}: no sample carries final_indicators")
    return chosen, chosen.final_indicators


def label_corpus(
    corpus: Corpus,
    factors: ScalingFactors,
    criteria: LevelCriteria = LevelCriteria(),
) -> Corpus:
    """Return a corpus where every sample of a video carries the video's level."""
    level_by_video: dict[str, int] = {}
    for video_id in corpus.index:
        rec, final = _video_final_indicators(corpus, video_id)
        aligned = align_indicators(final, factors, platform=rec.platform)
        level_by_video[video_id] = influence_level(aligned, criteria)
    return build_corpus(
        [replace(rec, influence_level=level_by_video[rec.video_id]) for rec in corpus.records]
    )


@dataclass(frozen=True)
class LikesSeries:
    """Like counts per whole day offset since post, strictly increasing in day."""

    points: tuple[tuple[int, int], ...]

    def __post_init__(self):
        days = [d for d, _ in self.points]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise AnnotationError("day offsets must be strictly increasing")

    def value_at(self, day: int) -> Optional[int]:
        for d, v in self.points:
            if d == day:
                return v
        return None


def lip_series(series_set: Sequence[LikesSeries], t: int) -> float:
    """Mean daily likes-increase percentage at day t:
    E[(Likes(t) - Likes(t-1)) / (Likes(t) + 1)] over the given videos."""
    if t < 1:
        raise AnnotationError("t must be >= 1")
    if not series_set:
        raise AnnotationError("empty series set")
    ratios = []
    for s in series_set:
        now, prev = s.value_at(t), s.value_at(t - 1)
        if now is None or prev is None:
            raise AnnotationError(f"series missing day {t} or {t - 1}")
        ratios.append((now - prev) / (now + 1.0))
    return sum(ratios) / len(ratios)


def lip_report(series_set: Sequence[LikesSeries], t_max: int = 21) -> list[tuple[int, float]]:
    """LIP(t) for t = 1..t_max over the videos possessing both days."""
    rows = []
    for t in range(1, t_max + 1):
        qualifying = [
            s for s in series_set if s.value_at(t) is not None and s.value_at(t - 1) is not None
        ]
        if qualifying:
            rows.append((t, lip_series(qualifying, t)))
    return rows


def write_lip_csv(rows: Sequence[tuple[int, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "lip"])
        for t, value in rows:
            writer.writerow([t, repr(value)])
