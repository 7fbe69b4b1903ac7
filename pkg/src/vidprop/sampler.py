"""Seeded fanout-limited subgraph extraction around batches of video nodes.

Per node and relation, up to 50 in-neighbors are kept (all of them when
fewer); comment in-neighbors are additionally capped. Video-video
in-neighbors pass a temporal guard: cross-video relations require a
strictly earlier post time, history edges an earlier sample of the same
video. Sampling randomness is keyed by (seed, epoch, node, relation), so
extraction is reproducible and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .parallel import ordered_map
from .propgraph import GraphView, NodeKind, PropagationGraph, RelationKind
from .records import SplitSpec

CROSS_VIDEO_RELATIONS = (RelationKind.has_same_author_as, RelationKind.has_same_topic_as)


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    fanout: int = 50
    depth: int = 2
    comment_cap: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.fanout < 1 or self.depth < 1 or self.comment_cap < 1:
            raise SamplerError("fanout, depth, and comment_cap must be >= 1")


@dataclass
class Subgraph:
    """Sampled neighborhood: local node table plus per-relation edge lists."""

    graph: PropagationGraph | GraphView
    node_ids: np.ndarray
    kinds: np.ndarray
    edges: dict[RelationKind, tuple[np.ndarray, np.ndarray]]
    batch_locals: np.ndarray
    labels: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.node_ids.size

    def to_debug_obj(self) -> dict:
        return {
            "nodes": [
                {"id": int(n), "kind": NodeKind(int(k)).name}
                for n, k in zip(self.node_ids, self.kinds)
            ],
            "edges": {
                rel.name: [[int(s), int(d)] for s, d in zip(src, dst)]
                for rel, (src, dst) in self.edges.items()
                if src.size
            },
            "batch": [int(i) for i in self.batch_locals],
        }


def _relation_rng(seed: int, epoch: int, node_id: int, relation: RelationKind) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=(seed, epoch, node_id, relation.value))
    return np.random.Generator(np.random.Philox(ss))


def _temporal_guard(
    graph: PropagationGraph | GraphView, node_id: int, relation: RelationKind, heads: np.ndarray
) -> np.ndarray:
    """Defensive re-check of the edge-time orderings the builder guarantees."""
    if heads.size == 0:
        return heads
    rec_idx = graph.node_record_index(node_id)
    head_recs = graph._node_rec[heads]
    if relation in CROSS_VIDEO_RELATIONS:
        return heads[graph._rec_post[head_recs] < graph._rec_post[rec_idx]]
    if relation is RelationKind.is_history_of:
        same_video = graph._video_codes[head_recs] == graph._video_codes[rec_idx]
        earlier = graph._rec_sample[head_recs] < graph._rec_sample[rec_idx]
        return heads[same_video & earlier]
    return heads


def sampled_in_neighbors(
    graph: PropagationGraph | GraphView,
    node_id: int,
    config: SamplerConfig,
    epoch: int = 0,
) -> list[tuple[RelationKind, np.ndarray]]:
    """Per-relation sampled in-neighbor lists for one video node."""
    out = []
    for relation in graph.relations():
        heads = graph.in_neighbors(node_id, relation)
        if heads.size == 0:
            continue
        if relation in CROSS_VIDEO_RELATIONS or relation is RelationKind.is_history_of:
            heads = _temporal_guard(graph, node_id, relation, heads)
        cap = config.fanout
        if relation is RelationKind.is_comment_of:
            cap = min(cap, config.comment_cap)
        if heads.size > cap:
            rng = _relation_rng(config.seed, epoch, node_id, relation)
            picked = rng.choice(heads.size, size=cap, replace=False)
            picked.sort()
            heads = heads[picked]
        if heads.size:
            out.append((relation, heads))
    return out


def sample_subgraph(
    graph: PropagationGraph | GraphView,
    batch: Sequence[int],
    config: SamplerConfig,
    epoch: int = 0,
    threads: int = 1,
) -> Subgraph:
    """Breadth-wise 2-hop expansion from the batch video nodes."""
    local_of: dict[int, int] = {}
    kinds: list[int] = []

    def add_node(node_id: int) -> int:
        local = local_of.get(node_id)
        if local is None:
            local = len(local_of)
            local_of[node_id] = local
            kinds.append(graph.node_kind(node_id).value)
        return local

    for node_id in batch:
        if not 0 <= node_id < graph.n_nodes:
            raise SamplerError(f"unknown node id {node_id}")
        if graph.node_kind(int(node_id)) is not NodeKind.video:
            raise SamplerError(f"batch node {node_id} is not a video node")
        add_node(int(node_id))

    edges: dict[RelationKind, tuple[list[int], list[int]]] = {}
    frontier = [int(n) for n in dict.fromkeys(int(b) for b in batch)]
    for _ in range(config.depth):
        expandable = [n for n in frontier if graph.node_kind(n) is NodeKind.video]
        neighbor_lists = ordered_map(
            lambda n: sampled_in_neighbors(graph, n, config, epoch), expandable, threads
        )
        next_frontier: list[int] = []
        for node_id, per_relation in zip(expandable, neighbor_lists):
            dst_local = local_of[node_id]
            for relation, heads in per_relation:
                src_list, dst_list = edges.setdefault(relation, ([], []))
                for head in heads:
                    head = int(head)
                    if head not in local_of:
                        add_node(head)
                        next_frontier.append(head)
                    src_list.append(local_of[head])
                    dst_list.append(dst_local)
        frontier = next_frontier

    node_ids = np.fromiter(local_of.keys(), dtype=np.int64, count=len(local_of))
    labels = np.array(
        [float(graph.labels.get(int(n), np.nan)) for n in batch], dtype=np.float64
    )
    return Subgraph(
        graph=graph,
        node_ids=node_ids,
        kinds=np.array(kinds, dtype=np.uint8),
        edges={
            rel: (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64))
            for rel, (src, dst) in edges.items()
        },
        batch_locals=np.array([local_of[int(n)] for n in batch], dtype=np.int64),
        labels=labels,
    )


def batch_iterator(
    split: SplitSpec,
    batch_size: int,
    seed: int,
    epoch: int = 0,
    ids: Optional[Sequence[str]] = None,
) -> Iterator[list[str]]:
    """Seeded per-epoch shuffle of the training sample ids; every id appears once."""
    if batch_size < 1:
        raise SamplerError("batch_size must be >= 1")
    pool = sorted(split.train_ids) if ids is None else sorted(ids)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=(seed, epoch))))
    order = rng.permutation(len(pool))
    for start in range(0, len(pool), batch_size):
        yield [pool[i] for i in order[start:start + batch_size]]
