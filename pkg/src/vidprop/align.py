"""Cross-platform indicator alignment.

Indicators measured on different platforms are not comparable (user bases
differ by orders of magnitude), so each (platform, indicator) gets a
multiplicative scaling factor alpha fit against the central platform by
minimizing the mean squared percentage error

    (1/|S|) * sum_s ((k_s - alpha * i_s) / (k_s + 1))^2

over videos observed on both platforms. The objective is quadratic in
alpha, so the minimizer is the exact weighted least-squares ratio.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import CENTRAL_PLATFORM, INDICATORS, PLATFORMS
from .records import Corpus, SampleRecord


class AlignmentError(ValueError):
    """No usable pairs or degenerate fit."""


@dataclass(frozen=True)
class AlignmentPair:
    """One indicator observed on the central platform (k) and on another (i)."""

    indicator: str
    k: float
    i: float


def mspe(pairs: Sequence[AlignmentPair], alpha: float) -> float:
    if not pairs:
        raise AlignmentError("empty pair set")
    return sum(((p.k - alpha * p.i) / (p.k + 1.0)) ** 2 for p in pairs) / len(pairs)


def closed_form_alpha(pairs: Sequence[AlignmentPair]) -> float:
    """Unique positive minimizer of the MSPE objective.

    alpha = sum(i*k / (k+1)^2) / sum(i^2 / (k+1)^2); raises when no pair
    has i > 0 or when the minimizer is not positive.
    """
    if not pairs:
        raise AlignmentError("empty pair set")
    num = 0.0
    den = 0.0
    for p in pairs:
        if p.k < 0 or p.i < 0:
            raise AlignmentError(f"negative indicator value in pair {p}")
        w = 1.0 / (p.k + 1.0) ** 2
        num += p.i * p.k * w
        den += p.i * p.i * w
    if den == 0.0:
        raise AlignmentError("all central-side-paired values are 0; alpha is unidentifiable")
    alpha = num / den
    if alpha <= 0.0:
        raise AlignmentError(f"degenerate fit alpha={alpha}; objective minimized at a non-positive factor")
    return alpha


class ScalingFactors:
    """Per (platform, indicator) multipliers; the central platform is pinned at 1."""

    def __init__(self, factors: Optional[dict[tuple[str, str], float]] = None):
        self._factors: dict[tuple[str, str], float] = {}
        for ind in INDICATORS:
            self._factors[(CENTRAL_PLATFORM, ind)] = 1.0
        for (platform, ind), alpha in (factors or {}).items():
            self.set(platform, ind, alpha)

    def set(self, platform: str, indicator: str, alpha: float) -> None:
        if platform not in PLATFORMS:
            raise AlignmentError(f"unknown platform {platform!r}")
        if indicator not in INDICATORS:
            raise AlignmentError(f"unknown indicator {indicator!r}")
        if platform == CENTRAL_PLATFORM:
            if alpha != 1.0:
                raise AlignmentError(f"central platform factor must be 1, got {alpha}")
            return
        if not alpha > 0.0:
            raise AlignmentError(f"alpha must be positive, got {alpha} for ({platform}, {indicator})")
        self._factors[(platform, indicator)] = float(alpha)

    def get(self, platform: str, indicator: str) -> float:
        try:
            return self._factors[(platform, indicator)]
        except KeyError:
            raise AlignmentError(f"no scaling factor for ({platform}, {indicator})") from None

    def has(self, platform: str, indicator: str) -> bool:
        return (platform, indicator) in self._factors

    def items(self):
        return sorted(self._factors.items())

    def to_json_obj(self) -> dict:
        out: dict[str, dict[str, float]] = {}
        for (platform, ind), alpha in self.items():
            out.setdefault(platform, {})[ind] = alpha
        return out

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ScalingFactors":
        sf = cls()
        for platform, inds in obj.items():
            for ind, alpha in inds.items():
                sf.set(platform, ind, float(alpha))
        return sf

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_obj(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "ScalingFactors":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_obj(json.load(fh))

    def __eq__(self, other) -> bool:
        return isinstance(other, ScalingFactors) and self._factors == other._factors


def _anchor_values(rec: SampleRecord) -> tuple[float, float, float, float, float]:
    # Prefer the long-horizon measurement when present; fall back to the
    # sample's current indicators.
    if rec.final_indicators is not None:
        return tuple(float(v) for v in rec.final_indicators)
    return tuple(float(v) for v in rec.indicators())


def collect_anchor_pairs(anchor_corpus: Corpus) -> dict[tuple[str, str], list[AlignmentPair]]:
    """Group alignment pairs by (platform, indicator) from cross-posted content.

    Records sharing a content_id are the same video posted on several
    platforms; for each content the latest sample per platform is paired
    against the Kuaishou observation.
    """
    by_content: dict[str, dict[str, SampleRecord]] = {}
    for rec in anchor_corpus.records:
        if rec.content_id is None:
            continue
        per_platform = by_content.setdefault(rec.content_id, {})
        prev = per_platform.get(rec.platform)
        if prev is None or (rec.sample_time, rec.sample_id) > (prev.sample_time, prev.sample_id):
            per_platform[rec.platform] = rec

    groups: dict[tuple[str, str], list[AlignmentPair]] = {}
    for per_platform in by_content.values():
        central = per_platform.get(CENTRAL_PLATFORM)
        if central is None:
            continue
        k_values = _anchor_values(central)
        for platform, rec in per_platform.items():
            if platform == CENTRAL_PLATFORM:
                continue
            i_values = _anchor_values(rec)
            for ind, k, i in zip(INDICATORS, k_values, i_values):
                groups.setdefault((platform, ind), []).append(AlignmentPair(ind, k, i))
    return groups


def fit_factors(anchor_corpus: Corpus) -> ScalingFactors:
    """Fit one alpha per (platform, indicator); groups with no usable pairs stay absent."""
    factors = ScalingFactors()
    for (platform, ind), pairs in collect_anchor_pairs(anchor_corpus).items():
        try:
            factors.set(platform, ind, closed_form_alpha(pairs))
        except AlignmentError:
            continue
    return factors


def align_indicators(
    record_or_values: SampleRecord | Sequence[float],
    factors: ScalingFactors,
    platform: Optional[str] = None,
) -> tuple[float, float, float, float, float]:
    """Scale five raw indicator values onto the central platform's scale.

    Accepts a record (current indicators, platform taken from it) or an
    explicit five-value sequence with ``platform``.
    """
    if isinstance(record_or_values, SampleRecord):
        values = record_or_values.indicators()
        platform = record_or_values.platform
    else:
        values = tuple(record_or_values)
        if platform is None:
            raise AlignmentError("platform required when passing raw values")
    if len(values) != 5:
        raise AlignmentError(f"need five indicator values, got {len(values)}")
    return tuple(factors.get(platform, ind) * float(v) for ind, v in zip(INDICATORS, values))
