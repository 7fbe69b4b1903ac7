"""Instruction/response pair rendering and graph-embedding sidecar export.

The prompt wraps the sample's JSON info in fixed chat markup with a
single graph-pad placeholder whose embedding an external fine-tuning
stage replaces by the exported graph vector. The influence label never
appears in the prompt; the response states it. Over-budget prompts drop
comments from the end of the rendered list; other fields are never cut.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .encode import FeatureCache, write_sidecar
from .pipeline import fprime_for_samples
from .propgraph import GraphView, PropagationGraph
from .records import Comment, SampleRecord, sample_info_json
from .rgcn import ModelParams, RgcnConfig
from .sampler import SamplerConfig
from .tokens import TokenCounter, count_tokens

GRAPH_PAD = "<|graph_pad|>"

PROMPT_TEMPLATE = (
    "<|im_start|>system\n"
    "You are a helpful assistant.<|im_end|>\n"
    "<|im_start|>user\n"
    "Graph 1: <|graph_start|><|graph_pad|><|graph_end|> Please read the following "
    "json format information about the short-video and predict the final propagation "
    "influence level (levels 0~9) of the short-video: {info}<|im_end|>\n"
    "<|im_start|>assistant\n"
)

RESPONSE_TEMPLATE = "The influence level of this short-video is {level}"


class InstructError(ValueError):
    pass


@dataclass(frozen=True)
class TokenBudget:
    max_tokens: int = 4000
    counter: TokenCounter = count_tokens

    def __post_init__(self):
        if self.max_tokens < 1:
            raise InstructError("token budget must be positive")


@dataclass(frozen=True)
class InstructionPair:
    prompt: str
    response: str
    sidecar_key: str
    record: SampleRecord = field(repr=False, compare=False)
    kept_comments: tuple[Comment, ...] = field(repr=False, compare=False, default=())

    def to_obj(self) -> dict:
        return {"prompt": self.prompt, "response": self.response, "sidecar_key": self.sidecar_key}


def sidecar_key_bytes(sample_id: str) -> bytes:
    return hashlib.sha256(b"fprime\x00" + sample_id.encode("utf-8")).digest()


def sidecar_key_hex(sample_id: str) -> str:
    return sidecar_key_bytes(sample_id).hex()


def _render_prompt(record: SampleRecord, comments: Sequence[Comment]) -> str:
    return PROMPT_TEMPLATE.format(info=sample_info_json(record, comments))


def _subsample_comments(record: SampleRecord, cap: int, seed: int) -> tuple[Comment, ...]:
    comments = record.comments
    if len(comments) <= cap:
        return comments
    digest = hashlib.blake2b(record.sample_id.encode("utf-8"), digest_size=8).digest()
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=(seed, int.from_bytes(digest, "little"))))
    )
    picked = rng.choice(len(comments), size=cap, replace=False)
    picked.sort()
    return tuple(comments[i] for i in picked)


def render_pair(
    record: SampleRecord,
    label: int,
    comment_cap: int = 50,
    seed: int = 0,
) -> InstructionPair:
    """Prompt/response pair for one sample; comments beyond the cap are
    randomly subsampled (seeded) keeping chronological order."""
    if not 0 <= label <= 9:
        raise InstructError(f"label {label} outside [0, 9]")
    kept = _subsample_comments(record, comment_cap, seed)
    prompt = _render_prompt(record, kept)
    if prompt.count(GRAPH_PAD) != 1:
        raise InstructError("prompt must contain exactly one graph-pad placeholder")
    return InstructionPair(
        prompt=prompt,
        response=RESPONSE_TEMPLATE.format(level=label),
        sidecar_key=sidecar_key_hex(record.sample_id),
        record=record,
        kept_comments=kept,
    )


def truncate(pair: InstructionPair, budget: TokenBudget) -> InstructionPair:
    """Drop comments from the end of the rendered list until within budget."""
    if budget.counter(pair.prompt) <= budget.max_tokens:
        return pair
    kept = pair.kept_comments
    lo, hi = 0, len(kept)  # invariant: lo fits or is 0, hi is over budget
    best: Optional[int] = None
    while lo <= hi:
        mid = (lo + hi) // 2
        prompt = _render_prompt(pair.record, kept[:mid])
        if budget.counter(prompt) <= budget.max_tokens:
            best = mid
            lo = mid + 1
        else:
            hi = mid - 1
    if best is None:
        raise InstructError(
            f"sample {pair.record.sample_id}: non-comment fields alone exceed the "
            f"{budget.max_tokens}-token budget"
        )
    new_kept = kept[:best]
    return replace(pair, prompt=_render_prompt(pair.record, new_kept), kept_comments=new_kept)


def write_instructions(pairs: Sequence[InstructionPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_obj(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def export_sidecar(
    graph: PropagationGraph | GraphView,
    params: ModelParams,
    sample_ids: Sequence[str],
    path: str | Path,
    features: FeatureCache,
    rgcn_config: RgcnConfig,
    sampler_config: SamplerConfig,
    threads: int = 1,
) -> int:
    """Write the (key -> f'_v) table for the given samples; deterministic
    full forward with the fixed evaluation seed."""
    states = fprime_for_samples(
        graph, sample_ids, params, features, rgcn_config, sampler_config, threads=threads
    )
    entries = [
        (sidecar_key_bytes(sid), states[sid].astype(np.float32)) for sid in sample_ids
    ]
    return write_sidecar(path, entries)
