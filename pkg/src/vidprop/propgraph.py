"""Heterogeneous propagation graph storage.

One video node per sample plus its attribute, interaction, and comment
nodes, with explicit in-adjacency for every sparse relation. The dense
same-topic relation (billions of edges at full scale) is never
materialized: per-topic post-time-sorted indices enumerate its
in-neighbors on demand and its edge count is computed arithmetically,
so memory stays linear in the number of samples.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .records import Comment, Corpus, SampleRecord, record_to_json


class GraphError(ValueError):
    pass


class NodeKind(IntEnum):
    video = 0
    platform = 1
    topic = 2
    title = 3
    description = 4
    time = 5
    ctime = 6
    video_time = 7
    comment = 8
    likes = 9
    collects = 10
    views = 11
    shares = 12
    comments = 13
    fans = 14


class RelationKind(IntEnum):
    is_platform_of = 0
    is_topic_of = 1
    is_title_of = 2
    is_description_of = 3
    is_post_time_of = 4
    is_current_time_of = 5
    is_duration_time_of = 6
    is_comment_of = 7
    is_likes_of = 8
    is_collects_of = 9
    is_views_of = 10
    is_shares_of = 11
    is_comments_of = 12
    is_fans_of = 13
    has_same_author_as = 14
    has_same_topic_as = 15
    is_history_of = 16


# (head kind, tail kind) per relation; every relation points into a video node.
RELATION_SIGNATURES: dict[RelationKind, tuple[NodeKind, NodeKind]] = {
    RelationKind.is_platform_of: (NodeKind.platform, NodeKind.video),
    RelationKind.is_topic_of: (NodeKind.topic, NodeKind.video),
    RelationKind.is_title_of: (NodeKind.title, NodeKind.video),
    RelationKind.is_description_of: (NodeKind.description, NodeKind.video),
    RelationKind.is_post_time_of: (NodeKind.time, NodeKind.video),
    RelationKind.is_current_time_of: (NodeKind.ctime, NodeKind.video),
    RelationKind.is_duration_time_of: (NodeKind.video_time, NodeKind.video),
    RelationKind.is_comment_of: (NodeKind.comment, NodeKind.video),
    RelationKind.is_likes_of: (NodeKind.likes, NodeKind.video),
    RelationKind.is_collects_of: (NodeKind.collects, NodeKind.video),
    RelationKind.is_views_of: (NodeKind.views, NodeKind.video),
    RelationKind.is_shares_of: (NodeKind.shares, NodeKind.video),
    RelationKind.is_comments_of: (NodeKind.comments, NodeKind.video),
    RelationKind.is_fans_of: (NodeKind.fans, NodeKind.video),
    RelationKind.has_same_author_as: (NodeKind.video, NodeKind.video),
    RelationKind.has_same_topic_as: (NodeKind.video, NodeKind.video),
    RelationKind.is_history_of: (NodeKind.video, NodeKind.video),
}

EXPLICIT_RELATIONS = tuple(r for r in RelationKind if r is not RelationKind.has_same_topic_as)

VIDEO_VIDEO_RELATIONS = (
    RelationKind.has_same_author_as,
    RelationKind.has_same_topic_as,
    RelationKind.is_history_of,
)

INTERACTIVE_RELATIONS = (
    RelationKind.is_current_time_of,
    RelationKind.is_fans_of,
    RelationKind.is_likes_of,
    RelationKind.is_comments_of,
    RelationKind.is_shares_of,
    RelationKind.is_views_of,
    RelationKind.is_collects_of,
)


@dataclass(frozen=True)
class AblationMask:
    """Model-variant switches; the all-false mask is the identity."""

    zero_video_features: bool = False
    drop_video_video_edges: bool = False
    drop_interactive_edges: bool = False
    drop_comment_edges: bool = False

    def dropped_relations(self) -> frozenset[RelationKind]:
        dropped: set[RelationKind] = set()
        if self.drop_video_video_edges:
            dropped.update(VIDEO_VIDEO_RELATIONS)
        if self.drop_interactive_edges:
            dropped.update(INTERACTIVE_RELATIONS)
        if self.drop_comment_edges:
            dropped.add(RelationKind.is_comment_of)
        return frozenset(dropped)


_SNAPSHOT_MAGIC = b"VPGRPH01"
_SNAPSHOT_VERSION = 1


def _strict_increase_pairs(sorted_values: np.ndarray) -> int:
    """Ordered pairs (a, b) with a before b and value[a] < value[b], for a sorted array."""
    if sorted_values.size < 2:
        return 0
    total = 0
    prefix = 0
    start = 0
    n = sorted_values.size
    for i in range(1, n + 1):
        if i == n or sorted_values[i] != sorted_values[start]:
            size = i - start
            total += prefix * size
            prefix += size
            start = i
    return total


class PropagationGraph:
    """Immutable typed-node / typed-edge store over a validated corpus."""

    def __init__(self, corpus: Corpus):
        self.corpus = corpus
        self._kinds = np.empty(0, dtype=np.uint8)
        self._payload_a = np.empty(0, dtype=np.int64)
        self._payload_b = np.empty(0, dtype=np.int64)
        self._node_rec = np.empty(0, dtype=np.int64)
        self._platforms: list[str] = []
        self._topics: list[str] = []
        self._adj: dict[RelationKind, tuple[np.ndarray, np.ndarray]] = {}
        self._topic_nodes: dict[str, np.ndarray] = {}
        self._topic_posts: dict[str, np.ndarray] = {}
        self._topic_video_codes: dict[str, np.ndarray] = {}
        self._video_codes = np.empty(0, dtype=np.int64)
        self.labels: dict[int, int] = {}
        self._sample_video_node: dict[str, int] = {}
        self._rec_post = np.array([r.post_time for r in corpus.records], dtype=np.int64)
        self._rec_sample = np.array([r.sample_time for r in corpus.records], dtype=np.int64)

    # -- node accessors -------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self._kinds.size

    def node_kind(self, node_id: int) -> NodeKind:
        return NodeKind(int(self._kinds[node_id]))

    def node_record(self, node_id: int) -> SampleRecord:
        rec_idx = int(self._node_rec[node_id])
        if rec_idx < 0:
            raise GraphError(f"node {node_id} ({self.node_kind(node_id).name}) has no backing record")
        return self.corpus.records[rec_idx]

    def node_record_index(self, node_id: int) -> int:
        return int(self._node_rec[node_id])

    def node_comment(self, node_id: int) -> Comment:
        if self.node_kind(node_id) is not NodeKind.comment:
            raise GraphError(f"node {node_id} is not a comment node")
        return self.node_record(node_id).comments[int(self._payload_b[node_id])]

    def platform_name(self, node_id: int) -> str:
        if self.node_kind(node_id) is not NodeKind.platform:
            raise GraphError(f"node {node_id} is not a platform node")
        return self._platforms[int(self._payload_a[node_id])]

    def topic_name(self, node_id: int) -> str:
        if self.node_kind(node_id) is not NodeKind.topic:
            raise GraphError(f"node {node_id} is not a topic node")
        return self._topics[int(self._payload_a[node_id])]

    def video_node_of_sample(self, sample_id: str) -> int:
        return self._sample_video_node[sample_id]

    def video_nodes(self) -> np.ndarray:
        return np.nonzero(self._kinds == NodeKind.video.value)[0].astype(np.int64)

    def node_post_time(self, node_id: int) -> int:
        return int(self._rec_post[self._node_rec[node_id]])

    def relations(self) -> tuple[RelationKind, ...]:
        return tuple(RelationKind)

    @property
    def mask(self) -> AblationMask:
        return AblationMask()

    # -- adjacency ------------------------------------------------------

    def _check_node(self, node_id: int) -> None:
        if not 0 <= node_id < self.n_nodes:
            raise GraphError(f"unknown node id {node_id}")

    def in_neighbors(self, node_id: int, relation: RelationKind) -> np.ndarray:
        """Heads pointing at ``node_id`` under ``relation``, ordered by
        (post_time, sample_time, node id)."""
        self._check_node(node_id)
        if relation is RelationKind.has_same_topic_as:
            return self._same_topic_in_neighbors(node_id)
        indptr, heads = self._adj[relation]
        return heads[indptr[node_id]:indptr[node_id + 1]]

    def _same_topic_in_neighbors(self, node_id: int) -> np.ndarray:
        if self.node_kind(node_id) is not NodeKind.video:
            return np.empty(0, dtype=np.int64)
        rec_idx = int(self._node_rec[node_id])
        rec = self.corpus.records[rec_idx]
        nodes = self._topic_nodes[rec.topic]
        posts = self._topic_posts[rec.topic]
        cut = int(np.searchsorted(posts, rec.post_time, side="left"))
        prefix = nodes[:cut]
        codes = self._topic_video_codes[rec.topic][:cut]
        return prefix[codes != self._video_codes[rec_idx]]

    def count_edges(self) -> dict[RelationKind, int]:
        counts = {rel: int(self._adj[rel][1].size) for rel in EXPLICIT_RELATIONS}
        counts[RelationKind.has_same_topic_as] = self._count_same_topic()
        return {rel: counts[rel] for rel in RelationKind}

    def _count_same_topic(self) -> int:
        total = 0
        for topic, posts in self._topic_posts.items():
            total += _strict_increase_pairs(posts)
            codes = self._topic_video_codes[topic]
            # Subtract same-video pairs; normally zero because samples of one
            # video share its post time, but dirty corpora may differ.
            for code in np.unique(codes):
                group = posts[codes == code]
                if group.size > 1:
                    total -= _strict_increase_pairs(group)
        return total

    # -- persistence ----------------------------------------------------

    def corpus_checksum(self) -> bytes:
        h = hashlib.sha256()
        for rec in self.corpus.records:
            h.update(record_to_json(rec).encode("utf-8"))
            h.update(b"\n")
        return h.digest()

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(_SNAPSHOT_MAGIC)
            fh.write(struct.pack("<II", _SNAPSHOT_VERSION, 0))
            fh.write(self.corpus_checksum())
            fh.write(
                struct.pack(
                    "<QQQQQ",
                    self.n_nodes,
                    len(self.corpus.records),
                    len(self._platforms),
                    len(self._topics),
                    len(self.labels),
                )
            )
            for name in self._platforms + self._topics:
                raw = name.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
            fh.write(self._kinds.tobytes())
            fh.write(self._payload_a.astype("<i8").tobytes())
            fh.write(self._payload_b.astype("<i8").tobytes())
            fh.write(self._node_rec.astype("<i8").tobytes())
            for rel in EXPLICIT_RELATIONS:
                indptr, heads = self._adj[rel]
                fh.write(struct.pack("<Q", heads.size))
                fh.write(indptr.astype("<u8").tobytes())
                fh.write(heads.astype("<i8").tobytes())
            for node_id, level in sorted(self.labels.items()):
                fh.write(struct.pack("<qB", node_id, level))

    @classmethod
    def load(cls, path: str | Path, corpus: Corpus) -> "PropagationGraph":
        graph = cls(corpus)
        with open(path, "rb") as fh:
            if fh.read(8) != _SNAPSHOT_MAGIC:
                raise GraphError("not a propagation-graph snapshot")
            version, _ = struct.unpack("<II", fh.read(8))
            if version != _SNAPSHOT_VERSION:
                raise GraphError(f"unsupported snapshot version {version}")
            checksum = fh.read(32)
            if checksum != graph.corpus_checksum():
                raise GraphError("snapshot was built from a different corpus")
            n_nodes, n_records, n_platforms, n_topics, n_labels = struct.unpack("<QQQQQ", fh.read(40))
            if n_records != len(corpus.records):
                raise GraphError("record count mismatch")
            names = []
            for _ in range(n_platforms + n_topics):
                (ln,) = struct.unpack("<I", fh.read(4))
                names.append(fh.read(ln).decode("utf-8"))
            graph._platforms = names[:n_platforms]
            graph._topics = names[n_platforms:]
            graph._kinds = np.frombuffer(fh.read(n_nodes), dtype=np.uint8).copy()
            graph._payload_a = np.frombuffer(fh.read(8 * n_nodes), dtype="<i8").copy()
            graph._payload_b = np.frombuffer(fh.read(8 * n_nodes), dtype="<i8").copy()
            graph._node_rec = np.frombuffer(fh.read(8 * n_nodes), dtype="<i8").copy()
            for rel in EXPLICIT_RELATIONS:
                (n_edges,) = struct.unpack("<Q", fh.read(8))
                indptr = np.frombuffer(fh.read(8 * (n_nodes + 1)), dtype="<u8").copy()
                heads = np.frombuffer(fh.read(8 * n_edges), dtype="<i8").copy()
                graph._adj[rel] = (indptr.astype(np.int64), heads)
            for _ in range(n_labels):
                node_id, level = struct.unpack("<qB", fh.read(9))
                graph.labels[node_id] = level
        graph._finalize_derived()
        return graph

    # -- construction helpers -------------------------------------------

    def _finalize_derived(self) -> None:
        """Rebuild corpus-derived lookups: topic indices, video codes, sample map."""
        code_of: dict[str, int] = {}
        codes = np.empty(len(self.corpus.records), dtype=np.int64)
        for i, rec in enumerate(self.corpus.records):
            codes[i] = code_of.setdefault(rec.video_id, len(code_of))
        self._video_codes = codes

        video_node_of_rec = np.full(len(self.corpus.records), -1, dtype=np.int64)
        for node_id in np.nonzero(self._kinds == NodeKind.video.value)[0]:
            video_node_of_rec[self._node_rec[node_id]] = node_id
        self._sample_video_node = {
            rec.sample_id: int(video_node_of_rec[i]) for i, rec in enumerate(self.corpus.records)
        }

        by_topic: dict[str, list[int]] = {}
        for i, rec in enumerate(self.corpus.records):
            by_topic.setdefault(rec.topic, []).append(i)
        for topic, rec_indexes in by_topic.items():
            entries = sorted(
                (self._rec_post[i], self._rec_sample[i], video_node_of_rec[i], i)
                for i in rec_indexes
            )
            self._topic_nodes[topic] = np.array([e[2] for e in entries], dtype=np.int64)
            self._topic_posts[topic] = np.array([e[0] for e in entries], dtype=np.int64)
            self._topic_video_codes[topic] = np.array([codes[e[3]] for e in entries], dtype=np.int64)


def _neighbor_sort_key(graph: PropagationGraph, head: int) -> tuple[int, int, int]:
    rec_idx = graph.node_record_index(head)
    if rec_idx < 0:
        return (-1, -1, head)
    return (int(graph._rec_post[rec_idx]), int(graph._rec_sample[rec_idx]), head)


def build_graph(corpus: Corpus) -> PropagationGraph:
    """Deterministically materialize nodes and explicit edges for a corpus.

    Per sample: 12 fresh attribute/interaction nodes plus one per captured
    comment, a shared platform node and a shared topic node, and 13
    attribute/interaction edges plus one per comment. Cross-sample edges:
    consecutive-sample history chains and strictly-earlier same-author
    pairs across distinct videos.
    """
    graph = PropagationGraph(corpus)
    kinds: list[int] = []
    payload_a: list[int] = []
    payload_b: list[int] = []
    node_rec: list[int] = []

    def new_node(kind: NodeKind, a: int, b: int, rec_idx: int) -> int:
        kinds.append(kind.value)
        payload_a.append(a)
        payload_b.append(b)
        node_rec.append(rec_idx)
        return len(kinds) - 1

    platform_node: dict[str, int] = {}
    topic_node: dict[str, int] = {}
    edges: dict[RelationKind, list[tuple[int, int]]] = {rel: [] for rel in EXPLICIT_RELATIONS}
    video_node_of_rec: list[int] = []

    scalar_kinds = (
        (NodeKind.likes, RelationKind.is_likes_of),
        (NodeKind.collects, RelationKind.is_collects_of),
        (NodeKind.views, RelationKind.is_views_of),
        (NodeKind.shares, RelationKind.is_shares_of),
        (NodeKind.comments, RelationKind.is_comments_of),
        (NodeKind.fans, RelationKind.is_fans_of),
    )

    for rec_idx, rec in enumerate(corpus.records):
        if rec.platform not in platform_node:
            platform_node[rec.platform] = new_node(NodeKind.platform, len(graph._platforms), -1, -1)
            graph._platforms.append(rec.platform)
        if rec.topic not in topic_node:
            topic_node[rec.topic] = new_node(NodeKind.topic, len(graph._topics), -1, -1)
            graph._topics.append(rec.topic)

        v = new_node(NodeKind.video, rec_idx, -1, rec_idx)
        video_node_of_rec.append(v)
        edges[RelationKind.is_platform_of].append((platform_node[rec.platform], v))
        edges[RelationKind.is_topic_of].append((topic_node[rec.topic], v))
        edges[RelationKind.is_title_of].append((new_node(NodeKind.title, rec_idx, -1, rec_idx), v))
        edges[RelationKind.is_description_of].append(
            (new_node(NodeKind.description, rec_idx, -1, rec_idx), v)
        )
        edges[RelationKind.is_post_time_of].append((new_node(NodeKind.time, rec_idx, -1, rec_idx), v))
        edges[RelationKind.is_current_time_of].append((new_node(NodeKind.ctime, rec_idx, -1, rec_idx), v))
        edges[RelationKind.is_duration_time_of].append(
            (new_node(NodeKind.video_time, rec_idx, -1, rec_idx), v)
        )
        for c_idx in range(len(rec.comments)):
            edges[RelationKind.is_comment_of].append(
                (new_node(NodeKind.comment, rec_idx, c_idx, rec_idx), v)
            )
        for kind, rel in scalar_kinds:
            edges[rel].append((new_node(kind, rec_idx, -1, rec_idx), v))

        if rec.influence_level is not None:
            graph.labels[v] = rec.influence_level

    # History chains: consecutive samples of one video in sample-time order.
    for video_id, sample_ids in corpus.index.items():
        chain = [video_node_of_rec[corpus.by_sample_id[sid]] for sid in sample_ids]
        for head, tail in zip(chain, chain[1:]):
            edges[RelationKind.is_history_of].append((head, tail))

    # Same-author pairs: strictly earlier post time, distinct videos.
    by_author: dict[str, list[int]] = {}
    for rec_idx, rec in enumerate(corpus.records):
        by_author.setdefault(rec.author_id, []).append(rec_idx)
    for rec_indexes in by_author.values():
        group = sorted(rec_indexes, key=lambda i: (corpus.records[i].post_time, i))
        for a_pos, a in enumerate(group):
            rec_a = corpus.records[a]
            for b in group[a_pos + 1:]:
                rec_b = corpus.records[b]
                if rec_a.post_time < rec_b.post_time and rec_a.video_id != rec_b.video_id:
                    edges[RelationKind.has_same_author_as].append(
                        (video_node_of_rec[a], video_node_of_rec[b])
                    )

    graph._kinds = np.array(kinds, dtype=np.uint8)
    graph._payload_a = np.array(payload_a, dtype=np.int64)
    graph._payload_b = np.array(payload_b, dtype=np.int64)
    graph._node_rec = np.array(node_rec, dtype=np.int64)
    graph._finalize_derived()

    n = graph.n_nodes
    for rel in EXPLICIT_RELATIONS:
        pairs = edges[rel]
        pairs.sort(key=lambda ht: (ht[1],) + _neighbor_sort_key(graph, ht[0]))
        heads = np.array([h for h, _ in pairs], dtype=np.int64)
        tails = np.array([t for _, t in pairs], dtype=np.int64)
        counts = np.bincount(tails, minlength=n) if tails.size else np.zeros(n, dtype=np.int64)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        graph._adj[rel] = (indptr, heads)

    _validate_schema(graph)
    return graph


def _validate_schema(graph: PropagationGraph) -> None:
    for rel in EXPLICIT_RELATIONS:
        head_kind, tail_kind = RELATION_SIGNATURES[rel]
        indptr, heads = graph._adj[rel]
        if heads.size == 0:
            continue
        if not np.all(graph._kinds[heads] == head_kind.value):
            raise GraphError(f"relation {rel.name}: head kind violates schema")
        tails = np.repeat(np.arange(graph.n_nodes), np.diff(indptr))
        if not np.all(graph._kinds[tails] == tail_kind.value):
            raise GraphError(f"relation {rel.name}: tail kind violates schema")


class GraphView:
    """Logical ablation view: identical read API with masked relations removed."""

    def __init__(self, base: PropagationGraph, mask: AblationMask):
        self.base = base
        self._mask = mask
        self._dropped = mask.dropped_relations()

    @property
    def mask(self) -> AblationMask:
        return self._mask

    @property
    def corpus(self) -> Corpus:
        return self.base.corpus

    @property
    def labels(self) -> dict[int, int]:
        return self.base.labels

    @property
    def n_nodes(self) -> int:
        return self.base.n_nodes

    def in_neighbors(self, node_id: int, relation: RelationKind) -> np.ndarray:
        if relation in self._dropped:
            self.base._check_node(node_id)
            return np.empty(0, dtype=np.int64)
        return self.base.in_neighbors(node_id, relation)

    def count_edges(self) -> dict[RelationKind, int]:
        counts = self.base.count_edges()
        for rel in self._dropped:
            counts[rel] = 0
        return counts

    def relations(self) -> tuple[RelationKind, ...]:
        return tuple(r for r in RelationKind if r not in self._dropped)

    def __getattr__(self, name):
        return getattr(self.base, name)


def apply_ablation(graph: PropagationGraph, mask: AblationMask) -> GraphView:
    return GraphView(graph, mask)
