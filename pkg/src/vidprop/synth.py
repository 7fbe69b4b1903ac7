"""Labeled synthetic corpora for desk-scale end-to-end runs.

Each video draws an intended influence level; its central-scale final
indicators are placed log-uniformly inside that level's threshold band
with enough margin that per-platform scaling, integer rounding, and the
multiplicative noise cannot move the video across a band edge. Earlier
samples follow a saturating logistic growth curve (stable well before
day 14), platform-raw values divide out a configured ground-truth alpha,
and labels come from the annotation module with that true alpha, so
alignment and annotation are checkable end to end. Title/description
text encodes the topic and a coarse popularity bucket, giving the hashed
text embeddings a learnable (weak) signal; the interactive scalar nodes
carry the strong signal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import CENTRAL_PLATFORM, INDICATORS, PLATFORMS
from .align import ScalingFactors
from .annotate import DEFAULT_THRESHOLDS, LevelCriteria, label_corpus
from .parallel import ordered_map
from .records import Comment, Corpus, SampleRecord, build_corpus

SECONDS_PER_DAY = 86_400


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_videos: int = 2000
    samples_per_video_probs: tuple[float, ...] = (0.2, 0.3, 0.3, 0.2)  # 1..4 samples
    n_topics: int = 40
    topic_zipf: float = 1.2
    platform_probs: tuple[float, ...] = (0.55, 0.20, 0.12, 0.08, 0.05)  # PLATFORMS order
    level_probs: tuple[float, ...] = (
        0.02, 0.08, 0.18, 0.30, 0.18, 0.10, 0.06, 0.04, 0.025, 0.015,
    )
    duration_mix: tuple[float, float, float] = (0.6, 0.3, 0.1)  # 7 s mode, 38 s mode, uniform
    growth_t0_days: float = 4.0
    growth_tau_days: float = 1.2
    noise_scale: float = 0.05
    n_anchor_contents: int = 30
    n_influencers: int = 10
    post_start: str = "2024-11-25"
    post_end: str = "2025-01-02"
    cutoff: str = "2024-12-20"
    train_fraction: float = 0.8
    max_captured_comments: int = 5
    seed: int = 0

    def __post_init__(self):
        for probs in (self.samples_per_video_probs, self.platform_probs, self.level_probs, self.duration_mix):
            if abs(sum(probs) - 1.0) > 1e-9 or any(p < 0 for p in probs):
                raise SynthError("probability vectors must be non-negative and sum to 1")
        if not 0.0 <= self.noise_scale < 0.1:
            raise SynthError("noise_scale must be in [0, 0.1) to keep levels inside their bands")
        if self.n_videos < 1 or self.n_topics < 1:
            raise SynthError("n_videos and n_topics must be positive")


# Ground-truth scaling: base per platform times a small per-indicator tweak.
# Values stay in (0.36, 4.4]; the band margins below assume alpha <= 4.4.
_ALPHA_BASE = {"Douyin": 0.5, "Xigua": 2.0, "Toutiao": 3.0, "Bilibili": 4.0}
_ALPHA_INDICATOR_MULT = {"views": 1.0, "likes": 1.1, "shares": 0.9, "collects": 1.05, "comments": 0.95}


def true_alpha() -> ScalingFactors:
    factors = ScalingFactors()
    for platform, base in _ALPHA_BASE.items():
        for ind in INDICATORS:
            factors.set(platform, ind, base * _ALPHA_INDICATOR_MULT[ind])
    return factors


def growth_fraction(t_days: float, config: SynthConfig) -> float:
    """Fraction of the final indicator value reached t days after post."""
    def g(t: float) -> float:
        return 1.0 / (1.0 + math.exp(-(t - config.growth_t0_days) / config.growth_tau_days))

    return g(t_days) / g(14.0)


_ENGAGEMENT_THRESHOLDS = [row[1] for row in DEFAULT_THRESHOLDS]  # identical for the four engagement dims
_VIEWS_THRESHOLDS = [row[0] for row in DEFAULT_THRESHOLDS]


def _band_interior(lo: float, hi: Optional[float], rng: np.random.Generator) -> int:
    """Integer drawn log-uniformly well inside (lo, hi]; margins keep the value
    in band after *5% noise, division by alpha <= 4.4, and rounding."""
    a = max(3.0, lo * 1.3)
    b = 3.0 * max(lo, 1.0) if hi is None else hi * 0.85
    if b < a:
        b = a
    value = math.exp(rng.uniform(math.log(a), math.log(b)))
    return max(3, round(value))


def _central_finals(level: int, rng: np.random.Generator) -> tuple[int, int, int, int, int]:
    """Central-platform final indicators whose annotated level is exactly ``level``."""
    if level == 0:
        return (0, 0, 0, 0, 0)
    eng_lo = _ENGAGEMENT_THRESHOLDS[level - 1]
    eng_hi = _ENGAGEMENT_THRESHOLDS[level] if level < 9 else None
    engagement = [_band_interior(eng_lo, eng_hi, rng) for _ in range(4)]
    # The views column repeats 1e6 across levels 4-6, so views can only
    # assert levels {1,2,3,6,7,8,9}; for 4 and 5 it sits in the level-3 band
    # and the engagement dims carry the level.
    views_level = level if level not in (4, 5) else 3
    v_lo = _VIEWS_THRESHOLDS[views_level - 1]
    distinct = sorted(set(_VIEWS_THRESHOLDS))
    pos = distinct.index(v_lo)
    v_hi = distinct[pos + 1] if pos + 1 < len(distinct) else None
    views = _band_interior(v_lo, v_hi, rng)
    likes, shares, collects, comments = engagement
    return (views, likes, shares, collects, comments)


def _platform_raw(
    central: Sequence[int], platform: str, eta: np.ndarray, frac: float, alpha: ScalingFactors
) -> tuple[int, ...]:
    out = []
    for j, ind in enumerate(INDICATORS):
        a = alpha.get(platform, ind)
        out.append(int(round(central[j] * eta[j] * frac / a)))
    return tuple(out)


def _duration(rng: np.random.Generator, config: SynthConfig) -> int:
    which = rng.choice(3, p=np.array(config.duration_mix))
    if which == 0:
        d = 7 + rng.laplace(0.0, 2.0)
    elif which == 1:
        d = 38 + rng.laplace(0.0, 6.0)
    else:
        d = rng.uniform(1, 300)
    return int(min(300, max(1, round(d))))


def _popularity_bucket(level: int) -> int:
    return 0 if level <= 4 else 1


@dataclass
class VideoTruth:
    video_id: str
    intended_level: int
    central_finals: tuple[int, int, int, int, int]
    platform: str


@dataclass
class SynthTruth:
    alpha: ScalingFactors
    videos: dict[str, VideoTruth] = field(default_factory=dict)

    def to_obj(self) -> dict:
        return {
            "alpha": self.alpha.to_json_obj(),
            "videos": {
                vid: {
                    "intended_level": t.intended_level,
                    "central_finals": list(t.central_finals),
                    "platform": t.platform,
                }
                for vid, t in sorted(self.videos.items())
            },
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_obj(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _date_seconds(day: str) -> int:
    d = date.fromisoformat(day)
    return int(datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp())


def _video_records(
    video_id: str,
    content_id: Optional[str],
    author_id: str,
    platform: str,
    topic: str,
    level: int,
    central: tuple[int, int, int, int, int],
    post_time: int,
    config: SynthConfig,
    rng: np.random.Generator,
    alpha: ScalingFactors,
) -> list[SampleRecord]:
    noise = config.noise_scale
    eta = rng.uniform(1.0 - noise, 1.0 + noise, size=5)
    bucket = _popularity_bucket(level)
    title = f"{topic} tier {bucket} clip"
    description = f"{topic} tier {bucket} description"
    duration = _duration(rng, config)
    fans = int(math.exp(rng.normal(8.0, 2.0)))
    final = _platform_raw(central, platform, eta, 1.0, alpha)

    n_samples = 1 + int(rng.choice(len(config.samples_per_video_probs),
                                   p=np.array(config.samples_per_video_probs)))
    offsets = []
    t = rng.uniform(0.5, 2.0)
    for _ in range(n_samples):
        if t > 13.5:
            break
        offsets.append(t)
        t += rng.uniform(2.05, 4.0)

    records = []
    for s_idx, offset in enumerate(offsets):
        sample_time = post_time + int(offset * SECONDS_PER_DAY)
        frac = growth_fraction(offset, config)
        views, likes, shares, collects, comments_count = _platform_raw(
            central, platform, eta, frac, alpha
        )
        n_captured = int(min(comments_count, rng.integers(0, config.max_captured_comments + 1)))
        comments = tuple(
            Comment(
                text=f"{topic} reaction {c}",
                time=post_time + int(rng.uniform(0.1, max(0.2, offset)) * SECONDS_PER_DAY),
            )
            for c in range(n_captured)
        )
        records.append(
            SampleRecord(
                video_id=video_id,
                sample_id=f"{video_id}-s{s_idx}",
                platform=platform,
                topic=topic,
                title=title,
                description=description,
                post_time=post_time,
                sample_time=sample_time,
                duration_s=duration,
                author_id=author_id,
                fans=fans,
                likes=likes,
                collects=collects,
                views=views,
                shares=shares,
                comments_count=comments_count,
                comments=comments,
                video_ref=f"video://{video_id}",
                final_indicators=final,
                content_id=content_id,
            )
        )
    return records


def _post_time(rng: np.random.Generator, config: SynthConfig) -> int:
    start = _date_seconds(config.post_start)
    cutoff_end = _date_seconds(config.cutoff) + SECONDS_PER_DAY  # through end of cutoff day
    end = _date_seconds(config.post_end) + SECONDS_PER_DAY
    if rng.uniform() < config.train_fraction:
        return int(rng.uniform(start, cutoff_end))
    return int(rng.uniform(cutoff_end, end))


def generate_corpus(
    config: SynthConfig = SynthConfig(), threads: int = 1
) -> tuple[Corpus, SynthTruth]:
    """Deterministic labeled corpus plus its ground-truth manifest."""
    alpha = true_alpha()
    truth = SynthTruth(alpha=alpha)
    topic_probs = np.array([1.0 / (r ** config.topic_zipf) for r in range(1, config.n_topics + 1)])
    topic_probs /= topic_probs.sum()
    n_authors = max(1, config.n_videos // 3)

    def make_video(v_idx: int) -> tuple[list[SampleRecord], list[VideoTruth]]:
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=(config.seed, 1, v_idx)))
        )
        video_id = f"v{v_idx:06d}"
        level = int(rng.choice(10, p=np.array(config.level_probs)))
        topic = f"topic-{int(rng.choice(config.n_topics, p=topic_probs)):03d}"
        platform = PLATFORMS[int(rng.choice(len(PLATFORMS), p=np.array(config.platform_probs)))]
        central = _central_finals(level, rng)
        records = _video_records(
            video_id, None, f"author-{int(rng.integers(0, n_authors))}", platform, topic,
            level, central, _post_time(rng, config), config, rng, alpha,
        )
        return records, [VideoTruth(video_id, level, central, platform)]

    def make_anchor(c_idx: int) -> tuple[list[SampleRecord], list[VideoTruth]]:
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=(config.seed, 2, c_idx)))
        )
        content_id = f"c{c_idx:04d}"
        # Influencer content sits high but below the extreme tail so the
        # corpus-wide level histogram stays unimodal at 3.
        level = int(rng.choice(np.arange(5, 9), p=np.array([0.3, 0.3, 0.25, 0.15])))
        topic = f"topic-{int(rng.choice(config.n_topics, p=topic_probs)):03d}"
        central = _central_finals(level, rng)
        author = f"influencer-{c_idx % config.n_influencers}"
        post_time = _post_time(rng, config)
        records, truths = [], []
        for p_idx, platform in enumerate(PLATFORMS):
            video_id = f"va{c_idx:04d}p{p_idx}"
            records.extend(
                _video_records(
                    video_id, content_id, author, platform, topic,
                    level, central, post_time, config, rng, alpha,
                )
            )
            truths.append(VideoTruth(video_id, level, central, platform))
        return records, truths

    video_batches = ordered_map(make_video, list(range(config.n_videos)), threads)
    anchor_batches = ordered_map(make_anchor, list(range(config.n_anchor_contents)), threads)

    records: list[SampleRecord] = []
    for batch, truths in video_batches + anchor_batches:
        records.extend(batch)
        for t in truths:
            truth.videos[t.video_id] = t
    corpus = build_corpus(records)
    labeled = label_corpus(corpus, alpha, LevelCriteria())
    return labeled, truth
