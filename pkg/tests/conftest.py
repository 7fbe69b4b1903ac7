import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vidprop.records import Comment, SampleRecord, build_corpus

DAY = 86_400
BASE_T = 1_732_492_800  # 2024-11-25 00:00:00 UTC


def make_record(
    video_id="v0",
    sample_id=None,
    platform="Kuaishou",
    topic="topic-000",
    post_day=0.0,
    sample_day=1.0,
    author_id="author-0",
    n_comments=0,
    indicators=(100, 10, 5, 5, 5),
    final=None,
    level=None,
    content_id=None,
    duration=30,
    fans=1000,
):
    post_time = BASE_T + int(post_day * DAY)
    sample_time = BASE_T + int(sample_day * DAY)
    views, likes, shares, collects, comments_count = indicators
    comments = tuple(
        Comment(text=f"{topic} reaction {i}", time=post_time + 3600 * (i + 1))
        for i in range(n_comments)
    )
    return SampleRecord(
        video_id=video_id,
        sample_id=sample_id or f"{video_id}-s{sample_day}",
        platform=platform,
        topic=topic,
        title=f"{topic} title of {video_id}",
        description=f"{topic} description of {video_id}",
        post_time=post_time,
        sample_time=sample_time,
        duration_s=duration,
        author_id=author_id,
        fans=fans,
        likes=likes,
        collects=collects,
        views=views,
        shares=shares,
        comments_count=max(comments_count, n_comments),
        comments=comments,
        video_ref=f"video://{video_id}",
        final_indicators=final,
        influence_level=level,
        content_id=content_id,
    )


@pytest.fixture
def tiny_corpus():
    records = [
        make_record("v0", post_day=0, sample_day=1, topic="topic-000", author_id="a0",
                    n_comments=3, final=(150, 5, 0, 0, 0)),
        make_record("v0", post_day=0, sample_day=4, topic="topic-000", author_id="a0",
                    final=(150, 5, 0, 0, 0)),
        make_record("v1", post_day=1, sample_day=2, topic="topic-000", author_id="a0",
                    final=(50, 1, 1, 1, 1)),
        make_record("v2", post_day=2, sample_day=3, topic="topic-001", author_id="a1",
                    final=(0, 0, 0, 0, 0)),
    ]
    return build_corpus(records)


def random_corpus(rng: np.random.Generator, n_samples: int, n_videos=None, n_topics=5,
                  n_authors=4, with_comments=True):
    """Randomized corpus for oracle comparisons; ids/time structure arbitrary."""
    n_videos = n_videos or max(1, n_samples // 2)
    video_meta = {}
    records = []
    sample_count = {}
    for i in range(n_samples):
        vid = f"v{int(rng.integers(0, n_videos)):04d}"
        if vid not in video_meta:
            video_meta[vid] = {
                "topic": f"topic-{int(rng.integers(0, n_topics)):03d}",
                "author": f"a{int(rng.integers(0, n_authors))}",
                "post_day": float(rng.uniform(0, 20)),
                "platform": ["Douyin", "Kuaishou", "Xigua", "Toutiao", "Bilibili"][int(rng.integers(0, 5))],
            }
        meta = video_meta[vid]
        k = sample_count.get(vid, 0)
        sample_count[vid] = k + 1
        records.append(
            make_record(
                video_id=vid,
                sample_id=f"{vid}-s{k}",
                platform=meta["platform"],
                topic=meta["topic"],
                author_id=meta["author"],
                post_day=meta["post_day"],
                sample_day=meta["post_day"] + 0.5 + 2.2 * k,
                n_comments=int(rng.integers(0, 4)) if with_comments else 0,
                indicators=tuple(int(v) for v in rng.integers(0, 1000, size=5)),
            )
        )
    return build_corpus(records)
