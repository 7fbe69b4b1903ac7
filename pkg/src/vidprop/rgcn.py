"""Stage-1 influence predictor: relational GCN plus regression head.

Raw node features have kind-specific widths, so each kind gets an input
projection to the shared hidden width. Two message-passing layers follow,
each with per-relation weights, mean aggregation over the sampled
in-neighbors, and a self-loop term; relations with no sampled neighbors
contribute nothing. The head maps a node state to 9*sigmoid(w.x + b) and
training minimizes Smooth L1 against the annotated level. Gradients are
exact reverse-mode derivatives of this composition, checked against
finite differences in the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .encode import FEATURE_DIMS
from .propgraph import NodeKind, RelationKind
from .sampler import Subgraph


class ShapeError(ValueError):
    pass


class NumericError(ValueError):
    pass


@dataclass(frozen=True)
class RgcnConfig:
    d_g: int = 1024
    layers: int = 2
    seed: int = 0
    dtype: str = "float64"

    def np_dtype(self):
        if self.dtype not in ("float64", "float32"):
            raise ShapeError(f"unsupported dtype {self.dtype}")
        return np.dtype(self.dtype)


@dataclass
class ModelParams:
    d_g: int
    dtype: np.dtype
    proj_w: dict[NodeKind, np.ndarray]
    proj_b: dict[NodeKind, np.ndarray]
    rel_w: list[dict[RelationKind, np.ndarray]]
    self_w: list[np.ndarray]
    head_w: np.ndarray
    head_b: np.ndarray

    @property
    def layers(self) -> int:
        return len(self.self_w)

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """Canonical (name, array) iteration used by the optimizer and the file format."""
        for kind in NodeKind:
            yield f"proj_w/{kind.name}", self.proj_w[kind]
            yield f"proj_b/{kind.name}", self.proj_b[kind]
        for layer in range(self.layers):
            for rel in RelationKind:
                yield f"rel_w{layer}/{rel.name}", self.rel_w[layer][rel]
            yield f"self_w{layer}", self.self_w[layer]
        yield "head_w", self.head_w
        yield "head_b", self.head_b

    def get(self, name: str) -> np.ndarray:
        for tensor_name, arr in self.tensors():
            if tensor_name == name:
                return arr
        raise ShapeError(f"unknown tensor {name!r}")

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            d_g=self.d_g,
            dtype=self.dtype,
            proj_w={k: np.zeros_like(a) for k, a in self.proj_w.items()},
            proj_b={k: np.zeros_like(a) for k, a in self.proj_b.items()},
            rel_w=[{r: np.zeros_like(a) for r, a in layer.items()} for layer in self.rel_w],
            self_w=[np.zeros_like(a) for a in self.self_w],
            head_w=np.zeros_like(self.head_w),
            head_b=np.zeros_like(self.head_b),
        )

    def copy(self) -> "ModelParams":
        out = self.zeros_like()
        for (_, dst), (_, src) in zip(out.tensors(), self.tensors()):
            dst[...] = src
        return out


GradientBuffers = ModelParams


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    if len(shape) == 2:
        fan_in, fan_out = shape
    elif len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_in = fan_out = 1
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(config: RgcnConfig) -> ModelParams:
    dtype = config.np_dtype()
    d = config.d_g
    params = ModelParams(
        d_g=d,
        dtype=dtype,
        proj_w={},
        proj_b={},
        rel_w=[{} for _ in range(config.layers)],
        self_w=[],
        head_w=np.empty(d, dtype=dtype),
        head_b=np.zeros((), dtype=dtype),
    )
    for kind in NodeKind:
        params.proj_w[kind] = np.empty((FEATURE_DIMS[kind], d), dtype=dtype)
        params.proj_b[kind] = np.zeros(d, dtype=dtype)
    for layer in range(config.layers):
        for rel in RelationKind:
            params.rel_w[layer][rel] = np.empty((d, d), dtype=dtype)
        params.self_w.append(np.empty((d, d), dtype=dtype))

    # Seed each tensor independently of iteration history so adding a kind
    # or relation never reshuffles the others. Biases get the same seeded
    # uniform init: zero biases would park every zero-valued scalar node
    # exactly on the rectifier kink.
    for index, (name, arr) in enumerate(params.tensors()):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=(config.seed, index))))
        arr[...] = _glorot(rng, arr.shape, dtype)
    return params


class _RelationIndex:
    """Per-relation edge orderings reused across layers and backward."""

    def __init__(self, n_nodes: int, src: np.ndarray, dst: np.ndarray, dtype):
        by_dst = np.argsort(dst, kind="stable")
        self.src_by_dst = src[by_dst]
        dst_sorted = dst[by_dst]
        self.u_dst, self.dst_starts = np.unique(dst_sorted, return_index=True)
        counts = np.diff(np.append(self.dst_starts, dst_sorted.size))
        self.inv_count = (1.0 / counts).astype(dtype)
        by_src = np.argsort(src, kind="stable")
        self.dst_by_src = dst[by_src]
        src_sorted = src[by_src]
        self.u_src, self.src_starts = np.unique(src_sorted, return_index=True)
        self.src_of_edge_by_src = src_sorted

    def seg_mean(self, h: np.ndarray) -> np.ndarray:
        """Mean of in-neighbor states per destination; zero rows elsewhere."""
        out = np.zeros_like(h)
        sums = np.add.reduceat(h[self.src_by_dst], self.dst_starts, axis=0)
        out[self.u_dst] = sums * self.inv_count[:, None]
        return out

    def scatter_grad_to_src(self, grad_mean: np.ndarray, out: np.ndarray) -> None:
        """out[src] += grad_mean[dst] / count[dst] for every edge."""
        inv_full = np.zeros(out.shape[0], dtype=out.dtype)
        inv_full[self.u_dst] = self.inv_count
        vals = grad_mean[self.dst_by_src] * inv_full[self.dst_by_src][:, None]
        out[self.u_src] += np.add.reduceat(vals, self.src_starts, axis=0)


def _relation_indexes(subgraph: Subgraph, dtype) -> dict[RelationKind, _RelationIndex]:
    return {
        rel: _RelationIndex(subgraph.n_nodes, src, dst, dtype)
        for rel, (src, dst) in subgraph.edges.items()
        if src.size
    }


def _project(subgraph: Subgraph, feats, params: ModelParams) -> np.ndarray:
    h0 = np.zeros((subgraph.n_nodes, params.d_g), dtype=params.dtype)
    for kind, (locals_, mat) in feats.items():
        w = params.proj_w[kind]
        if mat.shape[1] != w.shape[0]:
            raise ShapeError(
                f"{kind.name} features have dim {mat.shape[1]}, projection expects {w.shape[0]}"
            )
        h0[locals_] = mat.astype(params.dtype, copy=False) @ w + params.proj_b[kind]
    return h0


def forward(
    subgraph: Subgraph,
    feats,
    params: ModelParams,
    config: RgcnConfig,
    return_cache: bool = False,
):
    """Top-layer states for every subgraph node; optionally the backward cache."""
    rel_index = _relation_indexes(subgraph, params.dtype)
    h = _project(subgraph, feats, params)
    states = [h]
    masks = []
    for layer in range(config.layers):
        pre = h @ params.self_w[layer]
        for rel, index in rel_index.items():
            pre += index.seg_mean(h) @ params.rel_w[layer][rel]
        if not np.all(np.isfinite(pre)):
            bad = int(np.nonzero(~np.isfinite(pre).all(axis=1))[0][0])
            raise NumericError(f"non-finite activation at layer {layer}, subgraph node {bad}")
        mask = pre > 0
        h = np.where(mask, pre, 0.0)
        states.append(h)
        masks.append(mask)
    if return_cache:
        return h, {"states": states, "masks": masks, "rel_index": rel_index}
    return h


def node_states(subgraph: Subgraph, feats, params: ModelParams, config: RgcnConfig) -> dict[int, np.ndarray]:
    """Mapping global node id -> top-layer state."""
    h = forward(subgraph, feats, params, config)
    return {int(n): h[i] for i, n in enumerate(subgraph.node_ids)}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def head_predict(fprime: np.ndarray, params: ModelParams) -> np.ndarray:
    """9 * sigmoid(w.f' + b), elementwise over rows; open interval (0, 9).

    The sigmoid saturates to exactly 0/1 in floating point, so the output
    is nudged one ulp inside the interval to keep the bounds open.
    """
    z = np.asarray(fprime, dtype=params.dtype) @ params.head_w + params.head_b
    y = 9.0 * _sigmoid(z)
    return np.clip(y, np.nextafter(0.0, 1.0), np.nextafter(9.0, 0.0))


def smooth_l1(y_hat, y, beta: float = 1.0):
    """0.5*d^2/beta inside |d| < beta, |d| - 0.5*beta outside."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    d = np.asarray(y_hat, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    a = np.abs(d)
    return np.where(a < beta, 0.5 * d * d / beta, a - 0.5 * beta)


def loss_and_grad(
    subgraph: Subgraph,
    feats,
    params: ModelParams,
    config: RgcnConfig,
    beta: float = 1.0,
) -> tuple[float, GradientBuffers, np.ndarray]:
    """Mean Smooth L1 over the batch video nodes plus exact parameter gradients."""
    y = subgraph.labels
    if np.any(np.isnan(y)):
        raise NumericError("batch contains unlabeled video nodes")
    h_top, cache = forward(subgraph, feats, params, config, return_cache=True)
    batch = subgraph.batch_locals
    fb = h_top[batch]
    z = fb @ params.head_w + params.head_b
    s = _sigmoid(z)
    y_hat = 9.0 * s
    d = y_hat - y
    loss = float(np.mean(smooth_l1(y_hat, y, beta)))

    grads = params.zeros_like()
    n_batch = batch.size
    dl_dyhat = np.clip(d / beta, -1.0, 1.0) / n_batch
    dz = (dl_dyhat * 9.0 * s * (1.0 - s)).astype(params.dtype)
    grads.head_w[...] = fb.T @ dz
    grads.head_b[...] = dz.sum()

    g = np.zeros_like(h_top)
    np.add.at(g, batch, dz[:, None] * params.head_w[None, :])

    states, masks, rel_index = cache["states"], cache["masks"], cache["rel_index"]
    for layer in reversed(range(config.layers)):
        g_pre = g * masks[layer]
        h_in = states[layer]
        grads.self_w[layer][...] += h_in.T @ g_pre
        g = g_pre @ params.self_w[layer].T
        for rel, index in rel_index.items():
            mean_in = index.seg_mean(h_in)
            grads.rel_w[layer][rel][...] += mean_in.T @ g_pre
            index.scatter_grad_to_src(g_pre @ params.rel_w[layer][rel].T, g)

    for kind, (locals_, mat) in feats.items():
        g_k = g[locals_]
        grads.proj_w[kind][...] += mat.astype(params.dtype, copy=False).T @ g_k
        grads.proj_b[kind][...] += g_k.sum(axis=0)

    for name, arr in grads.tensors():
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite gradient in tensor {name}")
    return loss, grads, np.clip(y_hat, np.nextafter(0.0, 1.0), np.nextafter(9.0, 0.0))


backward = loss_and_grad


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def step(params: ModelParams, grads: GradientBuffers, state: OptimizerState) -> None:
    """One adaptive-moment update with bias correction, in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for (name, p), (_, g) in zip(params.tensors(), grads.tensors()):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape mismatch for {name}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)).astype(p.dtype)


_PARAMS_MAGIC = b"VPPARM01"
_PARAMS_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def save_params(params: ModelParams, path: str | Path) -> None:
    tensors = list(params.tensors())
    with open(path, "wb") as fh:
        fh.write(_PARAMS_MAGIC)
        fh.write(struct.pack("<IIQQ", _PARAMS_VERSION, _DTYPE_TAGS[np.dtype(params.dtype)],
                             params.d_g, len(tensors)))
        for name, arr in tensors:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_params(path: str | Path, d_g: Optional[int] = None) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _PARAMS_MAGIC:
            raise ShapeError("not a model parameter file")
        header = fh.read(24)
        if len(header) != 24:
            raise ShapeError("truncated parameter file header")
        version, dtype_tag, file_d_g, n_tensors = struct.unpack("<IIQQ", header)
        if version != _PARAMS_VERSION:
            raise ShapeError(f"unsupported parameter file version {version}")
        if d_g is not None and file_d_g != d_g:
            raise ShapeError(f"parameter file has d_g={file_d_g}, expected {d_g}")
        dtype = _TAG_DTYPES.get(dtype_tag)
        if dtype is None:
            raise ShapeError(f"unknown dtype tag {dtype_tag}")
        arrays: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            payload = fh.read(count * dtype.itemsize)
            if len(payload) != count * dtype.itemsize:
                raise ShapeError(f"truncated tensor {name}")
            arrays[name] = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)

    layers = len({name.split("/")[0] for name in arrays if name.startswith("self_w")})
    params = ModelParams(
        d_g=int(file_d_g),
        dtype=dtype,
        proj_w={k: arrays[f"proj_w/{k.name}"] for k in NodeKind},
        proj_b={k: arrays[f"proj_b/{k.name}"] for k in NodeKind},
        rel_w=[{r: arrays[f"rel_w{l}/{r.name}"] for r in RelationKind} for l in range(layers)],
        self_w=[arrays[f"self_w{l}"] for l in range(layers)],
        head_w=arrays["head_w"],
        head_b=arrays["head_b"],
    )
    for _, arr in params.tensors():
        arr.setflags(write=True)
    return params
