import math

import numpy as np
import pytest

from oracles import finite_difference
from vidprop import encode, propgraph, rgcn, sampler, synth
from vidprop.propgraph import NodeKind, RelationKind
from vidprop.sampler import Subgraph


def make_subgraph(kinds, edges, batch, labels):
    return Subgraph(
        graph=None,
        node_ids=np.arange(len(kinds), dtype=np.int64) + 1000,
        kinds=np.array([k.value for k in kinds], dtype=np.uint8),
        edges={rel: (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64))
               for rel, (src, dst) in edges.items()},
        batch_locals=np.array(batch, dtype=np.int64),
        labels=np.array(labels, dtype=np.float64),
    )


def zeroed_params(d_g=4, seed=0):
    params = rgcn.init_params(rgcn.RgcnConfig(d_g=d_g, seed=seed))
    for _, arr in params.tensors():
        arr[...] = 0.0
    return params


def scalar_identity_proj(params, kind):
    params.proj_w[kind][...] = 0.0
    params.proj_w[kind][0, 0] = 1.0
    params.proj_b[kind][...] = 0.0


def test_forward_isolated_node_identity():
    config = rgcn.RgcnConfig(d_g=4, seed=0)
    params = zeroed_params()
    scalar_identity_proj(params, NodeKind.likes)
    for layer in range(2):
        params.self_w[layer][...] = np.eye(4)
    sg = make_subgraph([NodeKind.likes], {}, batch=[0], labels=[0.0])
    feats = {NodeKind.likes: (np.array([0]), np.array([[2.5]]))}
    out = rgcn.forward(sg, feats, params, config)
    np.testing.assert_allclose(out, [[2.5, 0.0, 0.0, 0.0]])


def test_forward_single_neighbor_hand_trace():
    # layer 1 passes states through self-loops; layer 2 has only the relation
    # weight, so the batch node's output is act of the neighbor's layer-1 state
    config = rgcn.RgcnConfig(d_g=4, seed=0)
    params = zeroed_params()
    scalar_identity_proj(params, NodeKind.likes)
    params.self_w[0][...] = np.eye(4)
    params.rel_w[1][RelationKind.is_likes_of][...] = np.eye(4)
    sg = make_subgraph(
        [NodeKind.video, NodeKind.likes],
        {RelationKind.is_likes_of: ([1], [0])},
        batch=[0],
        labels=[3.0],
    )
    feats = {
        NodeKind.video: (np.array([0]), np.zeros((1, 3584))),
        NodeKind.likes: (np.array([1]), np.array([[2.5]])),
    }
    out = rgcn.forward(sg, feats, params, config)
    np.testing.assert_allclose(out[0], [2.5, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(out[1], [0.0, 0.0, 0.0, 0.0])


def test_forward_mean_normalization():
    config = rgcn.RgcnConfig(d_g=4, seed=0)
    params = zeroed_params()
    scalar_identity_proj(params, NodeKind.likes)
    params.self_w[0][...] = np.eye(4)
    params.rel_w[1][RelationKind.is_likes_of][...] = np.eye(4)
    sg = make_subgraph(
        [NodeKind.video, NodeKind.likes, NodeKind.likes],
        {RelationKind.is_likes_of: ([1, 2], [0, 0])},
        batch=[0],
        labels=[3.0],
    )
    feats = {
        NodeKind.video: (np.array([0]), np.zeros((1, 3584))),
        NodeKind.likes: (np.array([1, 2]), np.array([[2.0], [4.0]])),
    }
    out = rgcn.forward(sg, feats, params, config)
    np.testing.assert_allclose(out[0], [3.0, 0.0, 0.0, 0.0])  # mean of 2 and 4


def test_forward_output_width_and_permutation_invariance():
    corpus, _ = synth.generate_corpus(synth.SynthConfig(n_videos=20, n_anchor_contents=2, seed=3))
    graph = propgraph.build_graph(corpus)
    config = rgcn.RgcnConfig(d_g=8, seed=1)
    params = rgcn.init_params(config)
    cache = encode.FeatureCache(graph, encode.stub_provider(0))
    batch = [graph.video_node_of_sample(corpus.records[i].sample_id) for i in (0, 5, 9)]
    sg = sampler.sample_subgraph(graph, batch, sampler.SamplerConfig(fanout=5, seed=2))
    feats = cache.by_kind(sg.node_ids, sg.kinds)
    out = rgcn.forward(sg, feats, params, config)
    assert out.shape == (sg.n_nodes, 8)

    rng = np.random.default_rng(0)
    shuffled = {}
    for rel, (src, dst) in sg.edges.items():
        perm = rng.permutation(src.size)
        shuffled[rel] = (src[perm], dst[perm])
    sg2 = Subgraph(sg.graph, sg.node_ids, sg.kinds, shuffled, sg.batch_locals, sg.labels)
    out2 = rgcn.forward(sg2, feats, params, config)
    np.testing.assert_allclose(out, out2, rtol=0, atol=1e-12)


def test_head_predict_examples():
    params = zeroed_params(d_g=4)
    assert rgcn.head_predict(np.zeros(4), params) == pytest.approx(4.5)
    params.head_b[...] = math.log(3)
    assert rgcn.head_predict(np.zeros(4), params) == pytest.approx(6.75)
    params.head_b[...] = 50.0
    y = float(rgcn.head_predict(np.zeros(4), params))
    assert y < 9.0
    params.head_b[...] = -50.0
    assert float(rgcn.head_predict(np.zeros(4), params)) > 0.0


def test_smooth_l1_examples():
    assert rgcn.smooth_l1(3.0, 3.0) == 0.0
    assert rgcn.smooth_l1(3.5, 3.0) == pytest.approx(0.125)
    assert rgcn.smooth_l1(6.0, 3.0) == pytest.approx(2.5)
    assert rgcn.smooth_l1(0.0, 3.0) == pytest.approx(2.5)
    # continuity at |d| = beta
    eps = 1e-9
    assert rgcn.smooth_l1(1.0 + eps, 0.0) == pytest.approx(rgcn.smooth_l1(1.0 - eps, 0.0), abs=1e-8)
    with pytest.raises(ValueError):
        rgcn.smooth_l1(1.0, 0.0, beta=0.0)


def test_zero_loss_head_gradients_zero():
    config = rgcn.RgcnConfig(d_g=4, seed=0)
    params = zeroed_params()
    sg = make_subgraph([NodeKind.video], {}, batch=[0], labels=[4.5])
    feats = {NodeKind.video: (np.array([0]), np.zeros((1, 3584)))}
    loss, grads, y_hat = rgcn.loss_and_grad(sg, feats, params, config)
    assert loss == 0.0 and y_hat[0] == pytest.approx(4.5)
    assert np.all(grads.head_w == 0.0) and grads.head_b == 0.0


def test_head_bias_gradient_hand_derivation():
    # single node, d_g=2: dL/db1 = smoothl1'(d) * 9 * s * (1 - s)
    config = rgcn.RgcnConfig(d_g=2, seed=0)
    params = zeroed_params(d_g=2)
    params.head_b[...] = 0.3
    sg = make_subgraph([NodeKind.video], {}, batch=[0], labels=[2.0])
    feats = {NodeKind.video: (np.array([0]), np.zeros((1, 3584)))}
    loss, grads, y_hat = rgcn.loss_and_grad(sg, feats, params, config)
    s = 1.0 / (1.0 + math.exp(-0.3))
    d = 9 * s - 2.0
    dl = d if abs(d) < 1.0 else math.copysign(1.0, d)
    assert grads.head_b == pytest.approx(dl * 9 * s * (1 - s), rel=1e-12)


def test_gradients_match_finite_differences_random_subgraph():
    corpus, _ = synth.generate_corpus(synth.SynthConfig(n_videos=15, n_anchor_contents=2, seed=5))
    graph = propgraph.build_graph(corpus)
    config = rgcn.RgcnConfig(d_g=5, seed=2)
    params = rgcn.init_params(config)
    cache = encode.FeatureCache(graph, encode.stub_provider(0))
    batch = [graph.video_node_of_sample(corpus.records[i].sample_id) for i in (0, 4, 8)]
    sg = sampler.sample_subgraph(graph, batch, sampler.SamplerConfig(fanout=3, comment_cap=2, seed=7))
    feats = cache.by_kind(sg.node_ids, sg.kinds)

    def loss_fn():
        return rgcn.loss_and_grad(sg, feats, params, config)[0]

    _, grads, _ = rgcn.loss_and_grad(sg, feats, params, config)
    rng = np.random.default_rng(1)
    for name, arr in params.tensors():
        flat_grad = grads.get(name).reshape(-1)
        idx = rng.choice(arr.size, size=min(6, arr.size), replace=False)
        numeric = finite_difference(loss_fn, arr, idx)
        analytic = flat_grad[idx]
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8, err_msg=name)


def test_optimizer_zero_gradient_is_noop():
    params = rgcn.init_params(rgcn.RgcnConfig(d_g=4, seed=0))
    before = {name: arr.copy() for name, arr in params.tensors()}
    rgcn.step(params, params.zeros_like(), rgcn.OptimizerState())
    for name, arr in params.tensors():
        np.testing.assert_array_equal(arr, before[name])


def test_optimizer_single_step_hand_computed():
    params = zeroed_params(d_g=1)
    params.head_b[...] = 1.0
    grads = params.zeros_like()
    grads.head_b[...] = 0.5
    state = rgcn.OptimizerState(lr=0.1)
    rgcn.step(params, grads, state)
    m_hat = (0.1 * 0.5) / (1 - 0.9)
    v_hat = (0.001 * 0.25) / (1 - 0.999)
    expected = 1.0 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert params.head_b == pytest.approx(expected, rel=1e-14)


def test_optimizer_descends_quadratic():
    params = zeroed_params(d_g=1)
    params.head_b[...] = 8.0
    state = rgcn.OptimizerState(lr=0.05)
    objective = lambda: float((params.head_b - 3.0) ** 2)
    history = [objective()]
    for _ in range(400):
        grads = params.zeros_like()
        grads.head_b[...] = 2.0 * (params.head_b - 3.0)
        rgcn.step(params, grads, state)
        history.append(objective())
    assert history[-1] < 1e-3
    warm = history[20:]
    assert all(b <= a + 1e-9 for a, b in zip(warm, warm[1:]))


def test_params_roundtrip_byte_exact(tmp_path):
    params = rgcn.init_params(rgcn.RgcnConfig(d_g=6, seed=4))
    p1, p2 = tmp_path / "a.params", tmp_path / "b.params"
    rgcn.save_params(params, p1)
    loaded = rgcn.load_params(p1)
    rgcn.save_params(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    for (n1, a1), (n2, a2) in zip(params.tensors(), loaded.tensors()):
        assert n1 == n2
        np.testing.assert_array_equal(a1, a2)


def test_params_corrupted_header(tmp_path):
    path = tmp_path / "bad.params"
    path.write_bytes(b"NOTPARMS" + b"\x00" * 32)
    with pytest.raises(rgcn.ShapeError, match="not a model parameter file"):
        rgcn.load_params(path)


def test_params_version_mismatch(tmp_path):
    params = rgcn.init_params(rgcn.RgcnConfig(d_g=4, seed=0))
    path = tmp_path / "v.params"
    rgcn.save_params(params, path)
    data = bytearray(path.read_bytes())
    data[8] = 99  # version field
    path.write_bytes(bytes(data))
    with pytest.raises(rgcn.ShapeError, match="version"):
        rgcn.load_params(path)


def test_params_d_g_mismatch(tmp_path):
    params = rgcn.init_params(rgcn.RgcnConfig(d_g=4, seed=0))
    path = tmp_path / "d.params"
    rgcn.save_params(params, path)
    with pytest.raises(rgcn.ShapeError, match="d_g"):
        rgcn.load_params(path, d_g=8)


def test_params_truncated_file(tmp_path):
    params = rgcn.init_params(rgcn.RgcnConfig(d_g=4, seed=0))
    path = tmp_path / "t.params"
    rgcn.save_params(params, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(rgcn.ShapeError, match="truncated"):
        rgcn.load_params(path)
