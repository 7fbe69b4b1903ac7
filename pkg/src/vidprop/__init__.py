"""Toolkit for short-video propagation analysis.

Builds the heterogeneous propagation graph from timestamped short-video
samples, aligns interactive indicators across platforms, annotates
influence levels, trains a relational GNN influence predictor, and
exports instruction data plus graph-embedding sidecars for downstream
language-model fine-tuning.
"""

__version__ = "0.1.0"

PLATFORMS = ("Douyin", "Kuaishou", "Xigua", "Toutiao", "Bilibili")
CENTRAL_PLATFORM = "Kuaishou"
INDICATORS = ("views", "likes", "shares", "collects", "comments")
