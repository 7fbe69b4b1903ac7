import json
import re
from pathlib import Path

import numpy as np
import pytest

from conftest import make_record
from vidprop import encode, propgraph, rgcn, synth
from vidprop.instruct import (
    GRAPH_PAD,
    InstructError,
    TokenBudget,
    export_sidecar,
    render_pair,
    sidecar_key_bytes,
    truncate,
    write_instructions,
)
from vidprop.records import Comment, SampleRecord, build_corpus
from vidprop.sampler import SamplerConfig
from vidprop.tokens import count_tokens

GOLDEN = Path(__file__).parent / "golden" / "prompt_sample.txt"


def golden_record():
    return SampleRecord(
        video_id="v000042",
        sample_id="v000042-s0",
        platform="Douyin",
        topic="topic-007",
        title="topic-007 tier 1 clip",
        description="topic-007 tier 1 description",
        post_time=1_732_500_000,
        sample_time=1_732_700_000,
        duration_s=7,
        author_id="author-3",
        fans=26_572_246,
        likes=2_336,
        collects=243,
        views=12_563,
        shares=260,
        comments_count=645,
        comments=(
            Comment("topic-007 reaction 0", 1_732_510_000),
            Comment("topic-007 reaction 1", 1_732_520_000),
        ),
        video_ref="video://v000042",
    )


def test_prompt_matches_golden_bytes():
    pair = render_pair(golden_record(), label=7)
    assert pair.prompt.encode("utf-8") == GOLDEN.read_bytes()


def test_response_template():
    pair = render_pair(golden_record(), label=7)
    assert pair.response == "The influence level of this short-video is 7"
    assert pair.response.endswith("is 7")
    with pytest.raises(InstructError):
        render_pair(golden_record(), label=10)


def test_prompt_structure_invariants():
    pair = render_pair(golden_record(), label=7)
    assert pair.prompt.count(GRAPH_PAD) == 1
    assert "influence level of this short-video is" not in pair.prompt
    assert "final_indicators" not in pair.prompt
    assert "influence_level" not in pair.prompt


def test_under_cap_comments_all_rendered():
    rec = make_record("v0", n_comments=3)
    pair = render_pair(rec, label=2)
    assert len(pair.kept_comments) == 3
    for c in rec.comments:
        assert c.text in pair.prompt


def test_comment_subsample_deterministic_and_ordered():
    rec = make_record("v0", n_comments=80, indicators=(10, 4, 1, 1, 80))
    a = render_pair(rec, label=2, comment_cap=50, seed=1)
    b = render_pair(rec, label=2, comment_cap=50, seed=1)
    c = render_pair(rec, label=2, comment_cap=50, seed=2)
    assert a.prompt == b.prompt
    assert a.prompt != c.prompt
    assert len(a.kept_comments) == 50
    times = [cm.time for cm in a.kept_comments]
    assert times == sorted(times)


def test_roundtrip_info_recovers_fields():
    pair = render_pair(golden_record(), label=7)
    start = pair.prompt.index("short-video: {") + len("short-video: ")
    end = pair.prompt.index("<|im_end|>\n<|im_start|>assistant")
    info = json.loads(pair.prompt[start:end])
    rec = golden_record()
    assert info["video_id"] == rec.video_id
    assert info["likes"] == rec.likes
    assert info["post_time"] == "2024-11-25 02:00:00"
    assert len(info["comments"]) == 2


def test_truncate_short_prompt_unchanged():
    pair = render_pair(golden_record(), label=7)
    assert truncate(pair, TokenBudget(max_tokens=4000)) is pair


def test_truncate_drops_comment_tail():
    comments = tuple(
        Comment(" ".join(f"w{i}-{j}" for j in range(40)), 1_732_500_000 + i) for i in range(500)
    )
    rec = SampleRecord(
        **{**golden_record().__dict__, "comments": comments, "comments_count": 500}
    )
    pair = render_pair(rec, label=3, comment_cap=500)
    assert count_tokens(pair.prompt) > 4000
    cut = truncate(pair, TokenBudget(max_tokens=4000))
    assert count_tokens(cut.prompt) <= 4000
    # idempotent, keeps a prefix of the rendered list, preserves other fields
    assert truncate(cut, TokenBudget(max_tokens=4000)) is cut
    assert cut.kept_comments == pair.kept_comments[: len(cut.kept_comments)]
    assert GRAPH_PAD in cut.prompt
    assert rec.title in cut.prompt and rec.description in cut.prompt
    assert str(rec.views) in cut.prompt


def test_truncate_budget_too_small():
    pair = render_pair(golden_record(), label=7)
    with pytest.raises(InstructError, match="budget"):
        truncate(pair, TokenBudget(max_tokens=10))


def test_write_instructions_jsonl(tmp_path):
    pairs = [render_pair(golden_record(), label=7)]
    path = tmp_path / "instructions.jsonl"
    write_instructions(pairs, path)
    obj = json.loads(path.read_text().strip())
    assert set(obj) == {"prompt", "response", "sidecar_key"}
    assert obj["sidecar_key"] == pairs[0].sidecar_key
    assert len(bytes.fromhex(obj["sidecar_key"])) == 32


def _sidecar_setup():
    corpus, _ = synth.generate_corpus(synth.SynthConfig(n_videos=15, n_anchor_contents=2, seed=2))
    graph = propgraph.build_graph(corpus)
    config = rgcn.RgcnConfig(d_g=8, seed=0)
    params = rgcn.init_params(config)
    features = encode.FeatureCache(graph, encode.stub_provider(0))
    return corpus, graph, params, features, config


def test_export_sidecar_roundtrip(tmp_path):
    corpus, graph, params, features, config = _sidecar_setup()
    sample_ids = [corpus.records[i].sample_id for i in (0, 3, 7)]
    p1, p2 = tmp_path / "a.sidecar", tmp_path / "b.sidecar"
    n = export_sidecar(graph, params, sample_ids, p1, features, config,
                       SamplerConfig(fanout=5, seed=0))
    assert n == 3
    export_sidecar(graph, params, sample_ids, p2, features, config,
                   SamplerConfig(fanout=5, seed=0))
    assert p1.read_bytes() == p2.read_bytes()

    table = encode.read_sidecar(p1)
    assert len(table) == 3
    for sid in sample_ids:
        key = sidecar_key_bytes(sid)
        assert key in table
        assert table[key].shape == (8,)
    # key in the sidecar matches the key in the rendered pair
    rec = corpus.record(sample_ids[0])
    pair = render_pair(rec, label=rec.influence_level)
    assert bytes.fromhex(pair.sidecar_key) in table
