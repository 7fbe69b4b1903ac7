import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_record
from vidprop.encode import (
    COMMENT_DIM,
    FEATURE_DIMS,
    EncodeError,
    FeatureCache,
    FileProvider,
    StubProvider,
    content_key,
    encode_comment,
    encode_node,
    encode_scalar,
    encode_time,
    read_sidecar,
    stub_provider,
    write_sidecar,
)
from vidprop.propgraph import AblationMask, NodeKind, build_graph
from vidprop.records import build_corpus


def test_time_zero():
    f = encode_time(0)
    assert f.shape == (512,)
    assert np.all(f[0::2] == 0.0)
    assert np.all(f[1::2] == 1.0)


def test_time_pair_norms():
    f = encode_time(123_456_789)
    pair_norm = f[0::2] ** 2 + f[1::2] ** 2
    assert np.max(np.abs(pair_norm - 1.0)) < 1e-12


def test_time_known_component():
    # at i = 128 the denominator is 10000^(256/512) = 100, so t = 100 -> sin(1)
    f = encode_time(100)
    assert f[256] == pytest.approx(math.sin(1.0), abs=1e-12)
    assert f[257] == pytest.approx(math.cos(1.0), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(0, 2**20), st.integers(0, 2**20), st.integers(0, 2**18)
)
def test_time_translation_property(t1, t2, shift):
    # dot(f(t1), f(t2)) depends only on t1 - t2. Exact in reals; in floats the
    # t/w division rounding grows with t, so the tight bound applies to
    # moderate offsets and a looser one to epoch-scale timestamps below.
    d1 = float(encode_time(t1) @ encode_time(t2))
    d2 = float(encode_time(t1 + shift) @ encode_time(t2 + shift))
    assert abs(d1 - d2) < 1e-9


def test_time_translation_property_epoch_scale():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        t1, t2, s = (int(v) for v in rng.integers(0, 2_000_000_000, size=3))
        d1 = float(encode_time(t1) @ encode_time(t2))
        d2 = float(encode_time(t1 + s) @ encode_time(t2 + s))
        worst = max(worst, abs(d1 - d2))
    assert worst < 5e-6


def test_time_negative_rejected():
    with pytest.raises(EncodeError):
        encode_time(-1)


def test_scalar_values():
    assert encode_scalar(0)[0] == 0.0
    assert encode_scalar(2336)[0] == pytest.approx(math.log(2337), abs=1e-12)
    assert encode_scalar(2336)[0] == pytest.approx(7.75662, abs=1e-5)
    with pytest.raises(EncodeError):
        encode_scalar(-1)


def test_scalar_monotone():
    values = [0, 1, 5, 100, 10**6]
    feats = [encode_scalar(v)[0] for v in values]
    assert all(a < b for a, b in zip(feats, feats[1:]))


def test_comment_concatenation():
    provider = stub_provider(0)
    f = encode_comment("nice video", 5000, provider)
    assert f.shape == (COMMENT_DIM,)
    assert np.array_equal(f[:1024], provider.text_embed("nice video"))
    assert np.array_equal(f[1024:], encode_time(5000))
    g = encode_comment("nice video", 9000, provider)
    assert np.array_equal(f[:1024], g[:1024])
    assert not np.array_equal(f[1024:], g[1024:])


def test_stub_provider_properties():
    p1, p2 = stub_provider(0), stub_provider(1)
    a = p1.text_embed("hello")
    assert a.shape == (1024,)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-9
    assert np.array_equal(a, stub_provider(0).text_embed("hello"))
    assert not np.array_equal(a, p2.text_embed("hello"))
    v = p1.video_embed("video://x")
    assert v.shape == (3584,)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-9


def graph_of(record):
    return build_graph(build_corpus([record]))


def node_of_kind(graph, kind):
    return next(i for i in range(graph.n_nodes) if graph.node_kind(i) is kind)


def test_encode_node_dispatch():
    rec = make_record("v0", indicators=(12563, 2336, 260, 243, 645), n_comments=1)
    graph = graph_of(rec)
    provider = stub_provider(0)

    for kind, dim in FEATURE_DIMS.items():
        node = node_of_kind(graph, kind)
        assert encode_node(graph, node, provider).shape == (dim,)

    likes = node_of_kind(graph, NodeKind.likes)
    assert encode_node(graph, likes, provider)[0] == pytest.approx(math.log(2337))
    topic = node_of_kind(graph, NodeKind.topic)
    assert np.array_equal(encode_node(graph, topic, provider), provider.text_embed("topic-000"))
    time_node = node_of_kind(graph, NodeKind.time)
    assert np.array_equal(encode_node(graph, time_node, provider), encode_time(rec.post_time))
    ctime_node = node_of_kind(graph, NodeKind.ctime)
    assert np.array_equal(encode_node(graph, ctime_node, provider), encode_time(rec.sample_time))
    duration = node_of_kind(graph, NodeKind.video_time)
    assert encode_node(graph, duration, provider)[0] == pytest.approx(math.log(31))
    comment = node_of_kind(graph, NodeKind.comment)
    expected = encode_comment(rec.comments[0].text, rec.comments[0].time, provider)
    assert np.array_equal(encode_node(graph, comment, provider), expected)


def test_encode_node_video_mask_and_missing_ref():
    provider = stub_provider(0)
    rec = make_record("v0")
    graph = graph_of(rec)
    video = node_of_kind(graph, NodeKind.video)
    feat = encode_node(graph, video, provider)
    assert np.array_equal(feat, provider.video_embed("video://v0"))
    masked = encode_node(graph, video, provider, AblationMask(zero_video_features=True))
    assert np.linalg.norm(masked) == 0.0

    bare = type(rec)(**{**rec.__dict__, "video_ref": None})
    graph2 = graph_of(bare)
    video2 = node_of_kind(graph2, NodeKind.video)
    assert np.linalg.norm(encode_node(graph2, video2, provider)) == 0.0


def test_sidecar_roundtrip_and_file_provider(tmp_path):
    provider = stub_provider(3)
    texts = ["topic-000 title of v0", "短视频 text"]
    refs = ["video://v0"]
    entries = [(content_key(t), provider.text_embed(t)) for t in texts]
    entries += [(content_key(r), provider.video_embed(r)) for r in refs]
    path = tmp_path / "emb.sidecar"
    assert write_sidecar(path, entries) == 3
    table = read_sidecar(path)
    assert len(table) == 3
    np.testing.assert_allclose(
        table[content_key(texts[0])], provider.text_embed(texts[0]).astype(np.float32), rtol=0, atol=0
    )

    fp = FileProvider(path)
    got = fp.text_embed(texts[1])
    assert got.shape == (1024,)
    with pytest.raises(EncodeError, match="no sidecar embedding"):
        fp.text_embed("unknown text")


def test_sidecar_truncation_detected(tmp_path):
    provider = stub_provider(0)
    path = tmp_path / "emb.sidecar"
    write_sidecar(path, [(content_key("a"), provider.text_embed("a"))])
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(EncodeError, match="truncated"):
        read_sidecar(path)


def test_feature_cache_shares_payloads():
    rec1 = make_record("v0", sample_id="s0", topic="t")
    rec2 = make_record("v1", sample_id="s1", topic="t", post_day=1, sample_day=2)
    graph = build_graph(build_corpus([rec1, rec2]))
    cache = FeatureCache(graph, stub_provider(0))
    topic_nodes = [i for i in range(graph.n_nodes) if graph.node_kind(i) is NodeKind.topic]
    assert len(topic_nodes) == 1
    f = cache.feature(topic_nodes[0])
    assert cache.feature(topic_nodes[0]) is f  # memoized

    ids = np.arange(graph.n_nodes, dtype=np.int64)
    by_kind = cache.by_kind(ids, graph._kinds)
    total = sum(locals_.size for locals_, _ in by_kind.values())
    assert total == graph.n_nodes
    for kind, (locals_, mat) in by_kind.items():
        assert mat.shape == (locals_.size, FEATURE_DIMS[kind])
