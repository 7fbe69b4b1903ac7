"""Raw per-node feature vectors.

Deterministic encoders cover time (interleaved sinusoids over 512 dims),
scalars (log(v+1)), and comments (text embedding concatenated with the
comment-time encoding). Video and text embeddings come from a pluggable
provider: the hash-based stub for desk-scale runs, or a file-backed table
of precomputed vectors so real pretrained encoders can be run offline.
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .propgraph import AblationMask, NodeKind, PropagationGraph

log = logging.getLogger(__name__)

TEXT_DIM = 1024
VIDEO_DIM = 3584
TIME_DIM = 512
COMMENT_DIM = TEXT_DIM + TIME_DIM

FEATURE_DIMS: dict[NodeKind, int] = {
    NodeKind.video: VIDEO_DIM,
    NodeKind.platform: TEXT_DIM,
    NodeKind.topic: TEXT_DIM,
    NodeKind.title: TEXT_DIM,
    NodeKind.description: TEXT_DIM,
    NodeKind.time: TIME_DIM,
    NodeKind.ctime: TIME_DIM,
    NodeKind.video_time: 1,
    NodeKind.comment: COMMENT_DIM,
    NodeKind.likes: 1,
    NodeKind.collects: 1,
    NodeKind.views: 1,
    NodeKind.shares: 1,
    NodeKind.comments: 1,
    NodeKind.fans: 1,
}


class EncodeError(ValueError):
    pass


class EmbeddingProvider(Protocol):
    def text_embed(self, text: str) -> np.ndarray: ...
    def video_embed(self, video_ref: str) -> np.ndarray: ...


_TIME_DENOM = np.power(10000.0, 2.0 * np.arange(TIME_DIM // 2) / TIME_DIM)


def encode_time(t: float) -> np.ndarray:
    """512-dim interleaved sin/cos encoding of a Unix timestamp in seconds."""
    if t < 0:
        raise EncodeError(f"timestamp must be non-negative, got {t}")
    angles = t / _TIME_DENOM
    out = np.empty(TIME_DIM, dtype=np.float64)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def encode_scalar(v: float) -> np.ndarray:
    """log(v + 1) as a length-1 vector (natural log)."""
    if v < 0:
        raise EncodeError(f"scalar node value must be non-negative, got {v}")
    return np.array([math.log(v + 1.0)], dtype=np.float64)


def encode_comment(text: str, t: float, provider: EmbeddingProvider) -> np.ndarray:
    """Text embedding (1024) concatenated with the comment-time encoding (512)."""
    emb = np.asarray(provider.text_embed(text), dtype=np.float64)
    if emb.shape != (TEXT_DIM,):
        raise EncodeError(f"provider returned text embedding of shape {emb.shape}, want ({TEXT_DIM},)")
    return np.concatenate([emb, encode_time(t)])


def _text_of(provider: EmbeddingProvider, text: str) -> np.ndarray:
    emb = np.asarray(provider.text_embed(text), dtype=np.float64)
    if emb.shape != (TEXT_DIM,):
        raise EncodeError(f"provider returned text embedding of shape {emb.shape}, want ({TEXT_DIM},)")
    return emb


def encode_node(
    graph: PropagationGraph,
    node_id: int,
    provider: EmbeddingProvider,
    mask: AblationMask = AblationMask(),
) -> np.ndarray:
    """Raw feature for one node, dispatched on its kind.

    Video features are zeroed when the ablation mask requests it or the
    record carries no video reference.
    """
    kind = graph.node_kind(node_id)
    if kind is NodeKind.platform:
        return _text_of(provider, graph.platform_name(node_id))
    if kind is NodeKind.topic:
        return _text_of(provider, graph.topic_name(node_id))

    rec = graph.node_record(node_id)
    if kind is NodeKind.video:
        if mask.zero_video_features:
            return np.zeros(VIDEO_DIM, dtype=np.float64)
        if rec.video_ref is None:
            log.warning("sample %s has no video_ref; using zero video feature", rec.sample_id)
            return np.zeros(VIDEO_DIM, dtype=np.float64)
        emb = np.asarray(provider.video_embed(rec.video_ref), dtype=np.float64)
        if emb.shape != (VIDEO_DIM,):
            raise EncodeError(f"provider returned video embedding of shape {emb.shape}, want ({VIDEO_DIM},)")
        return emb
    if kind is NodeKind.title:
        return _text_of(provider, rec.title)
    if kind is NodeKind.description:
        return _text_of(provider, rec.description)
    if kind is NodeKind.time:
        return encode_time(rec.post_time)
    if kind is NodeKind.ctime:
        return encode_time(rec.sample_time)
    if kind is NodeKind.video_time:
        return encode_scalar(rec.duration_s)
    if kind is NodeKind.comment:
        comment = graph.node_comment(node_id)
        return encode_comment(comment.text, comment.time, provider)
    if kind is NodeKind.likes:
        return encode_scalar(rec.likes)
    if kind is NodeKind.collects:
        return encode_scalar(rec.collects)
    if kind is NodeKind.views:
        return encode_scalar(rec.views)
    if kind is NodeKind.shares:
        return encode_scalar(rec.shares)
    if kind is NodeKind.comments:
        return encode_scalar(rec.comments_count)
    if kind is NodeKind.fans:
        return encode_scalar(rec.fans)
    raise EncodeError(f"unhandled node kind {kind}")


class StubProvider:
    """Hash-expanded unit vectors: deterministic, no similarity semantics."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def _vector(self, namespace: str, payload: str, dim: int) -> np.ndarray:
        digest = hashlib.blake2b(
            f"{namespace}\x00{self.seed}\x00{payload}".encode("utf-8"), digest_size=16
        ).digest()
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(int.from_bytes(digest, "little")))
        )
        v = rng.standard_normal(dim)
        return v / np.linalg.norm(v)

    def text_embed(self, text: str) -> np.ndarray:
        return self._vector("text", text, TEXT_DIM)

    def video_embed(self, video_ref: str) -> np.ndarray:
        return self._vector("video", video_ref, VIDEO_DIM)


def stub_provider(seed: int = 0) -> StubProvider:
    return StubProvider(seed)


def content_key(text: str) -> bytes:
    """32-byte key for sidecar lookup: SHA-256 of the exact UTF-8 text."""
    return hashlib.sha256(text.encode("utf-8")).digest()


def write_sidecar(path: str | Path, entries: Iterable[tuple[bytes, np.ndarray]]) -> int:
    """Write a binary embedding table: repeated (key[32] | dim u32 LE | f32[dim] LE)."""
    n = 0
    with open(path, "wb") as fh:
        for key, vec in entries:
            if len(key) != 32:
                raise EncodeError(f"sidecar keys must be 32 bytes, got {len(key)}")
            data = np.ascontiguousarray(vec, dtype="<f4")
            fh.write(key)
            fh.write(struct.pack("<I", data.size))
            fh.write(data.tobytes())
            n += 1
    return n


def read_sidecar(path: str | Path) -> dict[bytes, np.ndarray]:
    table: dict[bytes, np.ndarray] = {}
    with open(path, "rb") as fh:
        while True:
            key = fh.read(32)
            if not key:
                break
            if len(key) != 32:
                raise EncodeError("truncated sidecar entry key")
            raw_dim = fh.read(4)
            if len(raw_dim) != 4:
                raise EncodeError("truncated sidecar entry header")
            (dim,) = struct.unpack("<I", raw_dim)
            payload = fh.read(4 * dim)
            if len(payload) != 4 * dim:
                raise EncodeError("truncated sidecar entry payload")
            table[key] = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return table


class FileProvider:
    """Embedding provider backed by a precomputed sidecar table."""

    def __init__(self, path: str | Path):
        self._table = read_sidecar(path)

    def _lookup(self, text: str, dim: int) -> np.ndarray:
        key = content_key(text)
        try:
            vec = self._table[key]
        except KeyError:
            raise EncodeError(f"no sidecar embedding for content {text[:80]!r}") from None
        if vec.shape != (dim,):
            raise EncodeError(f"sidecar entry has dim {vec.shape[0]}, want {dim}")
        return vec

    def text_embed(self, text: str) -> np.ndarray:
        return self._lookup(text, TEXT_DIM)

    def video_embed(self, video_ref: str) -> np.ndarray:
        return self._lookup(video_ref, VIDEO_DIM)


class FeatureCache:
    """Memoizing raw-feature source over an immutable graph.

    Features are memoized by payload, not node id, so nodes sharing a
    string / timestamp / scalar value hit the same cached vector.
    """

    def __init__(
        self,
        graph: PropagationGraph,
        provider: EmbeddingProvider,
        mask: AblationMask = AblationMask(),
        dtype=np.float64,
    ):
        self.graph = graph
        self.provider = provider
        self.mask = mask
        self.dtype = dtype
        self._memo: dict = {}

    def _payload_key(self, node_id: int):
        kind = self.graph.node_kind(node_id)
        if kind is NodeKind.platform:
            return ("text", self.graph.platform_name(node_id))
        if kind is NodeKind.topic:
            return ("text", self.graph.topic_name(node_id))
        rec = self.graph.node_record(node_id)
        if kind is NodeKind.video:
            return ("video", rec.video_ref)
        if kind is NodeKind.title:
            return ("text", rec.title)
        if kind is NodeKind.description:
            return ("text", rec.description)
        if kind is NodeKind.time:
            return ("time", rec.post_time)
        if kind is NodeKind.ctime:
            return ("time", rec.sample_time)
        if kind is NodeKind.comment:
            c = self.graph.node_comment(node_id)
            return ("comment", c.text, c.time)
        if kind is NodeKind.video_time:
            return ("scalar", rec.duration_s)
        if kind is NodeKind.likes:
            return ("scalar", rec.likes)
        if kind is NodeKind.collects:
            return ("scalar", rec.collects)
        if kind is NodeKind.views:
            return ("scalar", rec.views)
        if kind is NodeKind.shares:
            return ("scalar", rec.shares)
        if kind is NodeKind.comments:
            return ("scalar", rec.comments_count)
        if kind is NodeKind.fans:
            return ("scalar", rec.fans)
        raise EncodeError(f"unhandled node kind {kind}")

    def feature(self, node_id: int) -> np.ndarray:
        key = self._payload_key(node_id)
        cached = self._memo.get(key)
        if cached is None:
            cached = encode_node(self.graph, node_id, self.provider, self.mask).astype(self.dtype)
            self._memo[key] = cached
        return cached

    def by_kind(self, node_ids: np.ndarray, kinds: np.ndarray) -> dict[NodeKind, tuple[np.ndarray, np.ndarray]]:
        """Group subgraph-local nodes by kind: kind -> (local indices, feature matrix)."""
        out: dict[NodeKind, tuple[np.ndarray, np.ndarray]] = {}
        for kind in NodeKind:
            locals_ = np.nonzero(kinds == kind.value)[0]
            if locals_.size == 0:
                continue
            mat = np.empty((locals_.size, FEATURE_DIMS[kind]), dtype=self.dtype)
            for row, local in enumerate(locals_):
                mat[row] = self.feature(int(node_ids[local]))
            out[kind] = (locals_, mat)
        return out
