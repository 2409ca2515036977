"""Evaluation protocols over frozen features.

Covers the four measurement paths used downstream: per-cell similarity
maps (plus the space-probe negation that turns them into foreground
estimates), mask-overlap scoring, ranked retrieval with mean average
precision, and normalized edit distance for text outputs.  A small
logistic probe trains scalar or vector heads on top of frozen features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateLabels,
    DimensionMismatch,
    EmptyCorpus,
    EmptyMask,
    NumericalFailure,
    ShapeError,
    UndefinedAP,
    ZeroNorm,
)
from .gridops import pool_weights
from .model import ModelParams, forward_features, prepare_image, token_embedding

__all__ = [
    "SimilarityMap",
    "EvalReport",
    "LinearProbe",
    "minmax_norm",
    "similarity_map",
    "zero_shot_foreground",
    "binarize",
    "threshold_sweep",
    "fg_iou",
    "fg_fscore",
    "average_precision",
    "score_gallery",
    "retrieval_map",
    "edit_distance",
    "linear_probe_train",
    "seg_protocol",
    "retrieval_protocol",
    "edit_protocol",
]


@dataclass(frozen=True)
class SimilarityMap:
    """Per-cell scores aligned with the feature grid that produced them."""

    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2:
            raise ShapeError(f"similarity map must be 2-D, got shape {s.shape}")
        if not np.isfinite(s).all():
            raise NumericalFailure("similarity map contains non-finite scores")
        object.__setattr__(self, "scores", s)

    @property
    def height(self) -> int:
        return int(self.scores.shape[0])

    @property
    def width(self) -> int:
        return int(self.scores.shape[1])


@dataclass
class EvalReport:
    """A named metric with its aggregate value and per-item breakdown."""

    metric: str
    value: float
    items: list = field(default_factory=list)

    def to_json(self) -> str:
        doc = {"metric": self.metric, "value": self.value, "items": self.items}
        return json.dumps(doc, indent=2, ensure_ascii=False)


def similarity_map(features: np.ndarray, query: np.ndarray) -> SimilarityMap:
    """Cosine between every grid cell and one query embedding.

    Cells with zero norm score 0; a zero-norm query is an error because
    its direction is undefined.
    """
    feats = np.asarray(features, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    if feats.ndim != 3:
        raise ShapeError(f"feature grid must be (H, W, D), got shape {feats.shape}")
    if q.ndim != 1 or q.shape[0] != feats.shape[2]:
        raise DimensionMismatch(
            f"query has shape {q.shape}, grid cells have dim {feats.shape[2]}"
        )
    q_norm = float(np.linalg.norm(q))
    if q_norm == 0.0:
        raise ZeroNorm("query embedding has zero norm")
    cell_norms = np.linalg.norm(feats, axis=2)
    denom = cell_norms * q_norm
    safe = np.where(denom > 0.0, denom, 1.0)
    scores = np.where(denom > 0.0, (feats @ q) / safe, 0.0)
    return SimilarityMap(scores)


def zero_shot_foreground(features: np.ndarray, space_embedding: np.ndarray) -> SimilarityMap:
    """Foreground estimate by negating the whitespace-probe similarity.

    The space token attends to background, so 1 minus its min-max
    normalized similarity highlights glyphs.  A constant map carries no
    contrast, so every cell maps to 0.5.
    """
    s = similarity_map(features, space_embedding).scores
    lo, hi = float(s.min()), float(s.max())
    if hi == lo:
        return SimilarityMap(np.full_like(s, 0.5))
    return SimilarityMap(1.0 - (s - lo) / (hi - lo))


def _as_scores(sim) -> np.ndarray:
    return sim.scores if isinstance(sim, SimilarityMap) else np.asarray(sim, dtype=np.float64)


def binarize(sim, threshold: float = 0.5) -> np.ndarray:
    """Threshold a score map into a boolean mask (score >= threshold)."""
    return _as_scores(sim) >= threshold


def threshold_sweep(sim, gt: np.ndarray, thresholds=None) -> list:
    """IoU of binarize(sim, t) against gt for each candidate t."""
    if thresholds is None:
        thresholds = np.linspace(0.1, 0.9, 9)
    scores = _as_scores(sim)
    return [(float(t), fg_iou(scores >= t, gt)) for t in thresholds]


def fg_iou(pred, gt) -> float:
    """Intersection over union of two boolean masks; both empty counts as 1."""
    p = np.asarray(pred, dtype=bool)
    g = np.asarray(gt, dtype=bool)
    if p.shape != g.shape:
        raise DimensionMismatch(f"mask shapes differ: {p.shape} vs {g.shape}")
    union = int(np.logical_or(p, g).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum()) / union


def fg_fscore(pred, gt) -> float:
    """Dice-style F-score of two boolean masks; both empty counts as 1."""
    p = np.asarray(pred, dtype=bool)
    g = np.asarray(gt, dtype=bool)
    if p.shape != g.shape:
        raise DimensionMismatch(f"mask shapes differ: {p.shape} vs {g.shape}")
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * float(np.logical_and(p, g).sum()) / total


def average_precision(scores: np.ndarray, relevant: np.ndarray) -> float:
    """Mean of precision@rank taken at each relevant item's rank.

    Ranking is by score descending with ties broken by original index,
    so the result depends only on the ordering of scores.
    """
    s = np.asarray(scores, dtype=np.float64)
    rel = np.asarray(relevant, dtype=bool)
    if s.shape != rel.shape or s.ndim != 1:
        raise DimensionMismatch(
            f"scores shape {s.shape} and relevance shape {rel.shape} must be equal 1-D"
        )
    if not rel.any():
        raise UndefinedAP("query has no relevant gallery item")
    order = sorted(range(s.shape[0]), key=lambda j: (-s[j], j))
    hits = 0
    precisions = []
    for rank, j in enumerate(order, start=1):
        if rel[j]:
            hits += 1
            precisions.append(hits / rank)
    return float(np.mean(precisions))


def score_gallery(queries, gallery, probe: "LinearProbe | None" = None) -> np.ndarray:
    """Image-level scores: max cell of each query/image similarity map.

    With a probe, the raw max-cell score passes through the trained
    scalar affine head before ranking.
    """
    if probe is not None and probe.weight.shape != (1,):
        raise DimensionMismatch(
            f"retrieval probe must have a single weight, got shape {probe.weight.shape}"
        )
    out = np.empty((len(queries), len(gallery)), dtype=np.float64)
    for i, q in enumerate(queries):
        for j, grid in enumerate(gallery):
            raw = float(similarity_map(grid, q).scores.max())
            out[i, j] = raw if probe is None else float(probe.weight[0]) * raw + probe.bias
    return out


def retrieval_map(queries, gallery, relevance, probe: "LinearProbe | None" = None) -> EvalReport:
    """Mean average precision of ranked retrieval over a gallery."""
    rel = np.asarray(relevance, dtype=bool)
    if rel.shape != (len(queries), len(gallery)):
        raise DimensionMismatch(
            f"relevance shape {rel.shape} does not match "
            f"{len(queries)} queries x {len(gallery)} gallery items"
        )
    scores = score_gallery(queries, gallery, probe)
    items = []
    for i in range(len(queries)):
        ap = average_precision(scores[i], rel[i])
        items.append(
            {"query": i, "average_precision": ap, "n_relevant": int(rel[i].sum())}
        )
    value = float(np.mean([it["average_precision"] for it in items]))
    return EvalReport(metric="mean_average_precision", value=value, items=items)


def edit_distance(pred: str, gt: str) -> tuple:
    """Levenshtein distance and its max-length normalization.

    Unit-cost insert, delete, substitute; two empty strings are a
    perfect match by convention.
    """
    if not pred and not gt:
        return 0, 0.0
    a, b = pred, gt
    # two-row DP keeps memory at O(min side) without changing the recurrence
    if len(b) > len(a):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        prev = cur
    raw = int(prev[-1])
    return raw, raw / max(len(pred), len(gt))


@dataclass
class LinearProbe:
    """Affine head trained on frozen features."""

    weight: np.ndarray
    bias: float

    def decision(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weight + self.bias

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.predict_proba(x) >= 0.5


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def minmax_norm(scores: np.ndarray) -> np.ndarray:
    """Scale scores to [0, 1]; a constant map maps to all 0.5."""
    lo, hi = float(scores.min()), float(scores.max())
    if hi == lo:
        return np.full_like(scores, 0.5)
    return (scores - lo) / (hi - lo)


def seg_protocol(params: ModelParams, records, threshold: float = 0.5) -> EvalReport:
    """Zero-shot text segmentation over a record corpus.

    For every non-whitespace answer token, its embedding's min-max
    normalized similarity map is thresholded and scored with fg_iou
    against the token's ground-truth mask brought to feature resolution.
    """
    items = []
    for idx, rec in enumerate(records):
        feats, _ = forward_features(prepare_image(rec.image), params)
        fh, fw, _ = feats.shape
        for en in rec.entries:
            if en.token_id is None or en.text.isspace():
                continue
            gt = rec.token_mask(en)
            if not gt.any():
                continue
            try:
                weights, _ = pool_weights(gt, fh, fw)
            except EmptyMask:
                continue  # region vanishes at feature resolution
            sim = similarity_map(feats, token_embedding([en.token_id], params)[0])
            iou = fg_iou(minmax_norm(sim.scores) >= threshold, weights.astype(bool))
            items.append({"record": idx, "token": en.text, "fg_iou": iou})
    if not items:
        raise EmptyCorpus("no scorable token in any record")
    value = float(np.mean([it["fg_iou"] for it in items]))
    return EvalReport(metric="zero_shot_fg_iou", value=value, items=items)


def retrieval_protocol(params: ModelParams, records) -> EvalReport:
    """Token-to-image retrieval over a record corpus.

    Queries are the distinct non-whitespace token embeddings; the gallery
    holds each record's feature grid; a gallery image is relevant to a
    query token iff the token appears in the record's answer.
    """
    texts = sorted(
        {
            en.text
            for rec in records
            for en in rec.entries
            if en.token_id is not None and not en.text.isspace()
        }
    )
    if not texts:
        raise EmptyCorpus("no queryable token in any record")
    ids = {}
    for rec in records:
        for en in rec.entries:
            if en.token_id is not None:
                ids[en.text] = en.token_id
    gallery = [forward_features(prepare_image(rec.image), params)[0] for rec in records]
    queries = [token_embedding([ids[t]], params)[0] for t in texts]
    relevance = [
        [t in {en.text for en in rec.entries} for rec in records] for t in texts
    ]
    report = retrieval_map(queries, gallery, relevance)
    for item, text in zip(report.items, texts):
        item["query_text"] = text
    return report


def edit_protocol(pred_lines, gt_lines) -> EvalReport:
    """Mean normalized edit distance over paired prediction/target lines."""
    pred_lines = list(pred_lines)
    gt_lines = list(gt_lines)
    if len(pred_lines) != len(gt_lines):
        raise DimensionMismatch(
            f"{len(pred_lines)} predictions but {len(gt_lines)} targets"
        )
    if not pred_lines:
        raise EmptyCorpus("no line pairs to score")
    items = []
    for i, (pred, gt) in enumerate(zip(pred_lines, gt_lines)):
        raw, norm = edit_distance(pred, gt)
        items.append({"index": i, "raw": raw, "normalized": norm})
    value = float(np.mean([it["normalized"] for it in items]))
    return EvalReport(metric="normalized_edit_distance", value=value, items=items)


def linear_probe_train(
    features,
    labels,
    epochs: int = 300,
    lr: float = 0.5,
    seed: int = 0,
) -> LinearProbe:
    """Fit a logistic-regression head by full-batch gradient descent.

    Features may be vectors or maps; maps flatten to vectors.  Training
    is deterministic for a fixed seed.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    elif x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise DimensionMismatch(
            f"{x.shape[0]} feature rows but labels have shape {y.shape}"
        )
    if np.unique(y).size < 2:
        raise DegenerateLabels("probe training requires both classes present")
    rng = np.random.default_rng(seed)
    w = rng.normal(scale=0.01, size=x.shape[1])
    b = 0.0
    n = x.shape[0]
    for _ in range(epochs):
        g = _sigmoid(x @ w + b) - y
        w -= lr * (x.T @ g) / n
        b -= lr * float(g.mean())
    return LinearProbe(weight=w, bias=float(b))
