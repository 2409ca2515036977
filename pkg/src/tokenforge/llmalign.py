"""Token alignment inside a language model's hidden-state sequence.

The hidden sequence is [visual tokens | question tokens | answer tokens].
An answer token's hidden vector is pulled toward the pooled visual
feature of its image region: visual hidden states are reassembled into a
full-resolution grid (tiles only; the global thumbnail is excluded),
upsampled to the mask's resolution, mask-averaged, and paired with the
answer token's vector under the alignment objectives.

A real language model is out of scope; `StubLLM` is a tiny frozen,
seeded network with causal mean mixing that makes the whole path
differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tokenforge.abstractor import CropPlan
from tokenforge.corpus.records import TokenEntry
from tokenforge.errors import EmptyBatch, EmptyMask, ShapeError, UnknownToken
from tokenforge.gridops import bilinear_resize, bilinear_resize_backward
from tokenforge.losses import LossOutput, total_alignment_loss


@dataclass
class HiddenStates:
    """Per-token hidden vectors split by segment, all at one layer."""

    visual: np.ndarray     # (n_v, dim)
    question: np.ndarray   # (n_q, dim)
    answer: np.ndarray     # (n_a, dim)
    layer_index: int = 1

    @property
    def sequence(self) -> np.ndarray:
        return np.concatenate([self.visual, self.question, self.answer], axis=0)

    @property
    def n_visual(self) -> int:
        return self.visual.shape[0]

    @property
    def n_question(self) -> int:
        return self.question.shape[0]

    @property
    def n_answer(self) -> int:
        return self.answer.shape[0]


@dataclass(frozen=True)
class AnswerTokenRef:
    entry: TokenEntry
    absolute_index: int


def locate_answer_token(entry: TokenEntry, n_v: int, n_q: int, n_a: int) -> AnswerTokenRef:
    """Absolute position of an answer token in the hidden sequence."""
    if entry.index_in_text < 0 or entry.index_in_text >= n_a:
        raise IndexError(
            f"index_in_text {entry.index_in_text} outside a {n_a}-token answer"
        )
    return AnswerTokenRef(entry=entry, absolute_index=n_v + n_q + entry.index_in_text)


def reassemble_submaps(visual: np.ndarray, plan: CropPlan, side: int) -> np.ndarray:
    """Lay tile tokens back out as one (rows*side, cols*side, dim) grid.

    The first side*side tokens belong to the global thumbnail and are
    excluded; the remaining tokens are consumed tile by tile in crop
    order, row-major within each tile.
    """
    visual = np.asarray(visual)
    if visual.ndim != 2:
        raise ShapeError(f"visual tokens must be (n_v, dim), got {visual.shape}")
    per = side * side
    expected = (plan.n_tiles + 1) * per
    if visual.shape[0] != expected:
        raise ShapeError(
            f"{visual.shape[0]} visual tokens do not match plan "
            f"({plan.rows}x{plan.cols} tiles + global) * {per}"
        )
    dim = visual.shape[1]
    grid = np.zeros((plan.rows * side, plan.cols * side, dim), dtype=visual.dtype)
    for t in range(plan.n_tiles):
        tr, tc = divmod(t, plan.cols)
        tile = visual[(t + 1) * per : (t + 2) * per].reshape(side, side, dim)
        grid[tr * side : (tr + 1) * side, tc * side : (tc + 1) * side] = tile
    return grid


def reassemble_submaps_backward(d_grid: np.ndarray, plan: CropPlan, side: int) -> np.ndarray:
    """Scatter a grid gradient back onto the token sequence (global gets zero)."""
    d_grid = np.asarray(d_grid)
    per = side * side
    dim = d_grid.shape[2]
    d_visual = np.zeros(((plan.n_tiles + 1) * per, dim), dtype=d_grid.dtype)
    for t in range(plan.n_tiles):
        tr, tc = divmod(t, plan.cols)
        tile = d_grid[tr * side : (tr + 1) * side, tc * side : (tc + 1) * side]
        d_visual[(t + 1) * per : (t + 2) * per] = tile.reshape(per, dim)
    return d_visual


def llm_pool_token(feat_grid: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Upsample features to the mask's resolution and mask-average them."""
    feat_grid = np.asarray(feat_grid, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if feat_grid.ndim != 3 or mask.ndim != 2:
        raise ShapeError(
            f"need (h, w, dim) features and a 2-D mask, got {feat_grid.shape} and {mask.shape}"
        )
    count = int(mask.sum())
    if count == 0:
        raise EmptyMask("mask selects no pixels")
    up = bilinear_resize(feat_grid, mask.shape[0], mask.shape[1])
    return (up * mask[:, :, None]).sum(axis=(0, 1)) / count


def llm_pool_token_backward(d_vec: np.ndarray, mask: np.ndarray, h: int, w: int) -> np.ndarray:
    """Gradient of llm_pool_token w.r.t. its (h, w, dim) feature grid."""
    mask = np.asarray(mask).astype(bool)
    count = int(mask.sum())
    d_up = mask[:, :, None] * (np.asarray(d_vec)[None, None, :] / count)
    return bilinear_resize_backward(d_up, h, w)


def llm_token_align_loss(
    hidden: HiddenStates,
    token_masks: list[tuple[AnswerTokenRef, np.ndarray]],
    plan: CropPlan,
    side: int,
    k: float,
    b: float,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> tuple[LossOutput, np.ndarray, int]:
    """Alignment loss between answer hidden states and pooled visual ones.

    Returns (loss, d_hidden, n_skipped): d_hidden has the gradient for
    the full hidden sequence, flowing into both the answer rows and,
    through pooling and reassembly, the visual rows. Empty masks are
    skipped and counted; a batch with no usable pair raises EmptyBatch.
    """
    grid = reassemble_submaps(hidden.visual, plan, side)
    gh, gw, _ = grid.shape
    seq = hidden.sequence
    usable: list[tuple[AnswerTokenRef, np.ndarray]] = []
    skipped = 0
    for ref, mask in token_masks:
        if not np.asarray(mask).astype(bool).any():
            skipped += 1
            continue
        usable.append((ref, np.asarray(mask).astype(bool)))
    if not usable:
        raise EmptyBatch("no answer token has a non-empty mask")

    e = np.stack([seq[ref.absolute_index] for ref, _ in usable])
    t = np.stack([llm_pool_token(grid, mask) for _, mask in usable])
    out = total_alignment_loss(e, t, k, b, weights=weights)

    d_hidden = np.zeros_like(seq)
    d_grid = np.zeros_like(grid)
    for i, (ref, mask) in enumerate(usable):
        d_hidden[ref.absolute_index] += out.d_e[i]
        d_grid += llm_pool_token_backward(out.d_t[i], mask, gh, gw)
    d_hidden[: hidden.n_visual] += reassemble_submaps_backward(d_grid, plan, side)
    return out, d_hidden, skipped


def next_token_ce(logits: np.ndarray, answer_ids) -> tuple[float, np.ndarray]:
    """Teacher-forced cross entropy over answer positions 2..n_a.

    Row m of `logits` is the model's next-token prediction after answer
    position m, so rows 0..n_a-2 are scored against ids 1..n_a-1 and the
    final row is unscored (its gradient is zero).
    """
    logits = np.asarray(logits, dtype=np.float64)
    ids = np.asarray(answer_ids)
    if logits.ndim != 2 or ids.ndim != 1 or logits.shape[0] != ids.shape[0]:
        raise ShapeError(
            f"need (n_a, Z) logits and n_a ids, got {logits.shape} and {ids.shape}"
        )
    n_a, z = logits.shape
    if ids.size and (ids.min() < 0 or ids.max() >= z):
        raise UnknownToken(f"answer id outside the {z}-way vocabulary")
    d_logits = np.zeros_like(logits)
    value = 0.0
    for m in range(n_a - 1):
        row = logits[m] - logits[m].max()
        log_z = np.log(np.exp(row).sum())
        target = int(ids[m + 1])
        value += log_z - row[target]
        p = np.exp(row - log_z)
        d_logits[m] = p
        d_logits[m, target] -= 1.0
    return float(value), d_logits


@dataclass
class StubConfig:
    input_dim: int
    hidden_dim: int
    vocab_size: int
    layers: int = 1
    layer_index: int = 1
    seed: int = 0


class StubLLM:
    """Frozen stand-in for a language model.

    Each layer maps its input through a linear map plus a causal
    cumulative-mean context term and a softplus; a linear head over the
    answer slice produces next-token logits. Parameters are seeded and
    never trained, but gradients flow through to the visual tokens.
    """

    def __init__(self, config: StubConfig):
        if not 1 <= config.layer_index <= config.layers:
            raise ShapeError(
                f"layer_index {config.layer_index} outside 1..{config.layers}"
            )
        self.config = config
        rng = np.random.default_rng(config.seed)
        d_in, d_h, z = config.input_dim, config.hidden_dim, config.vocab_size
        self.embed = rng.uniform(-1, 1, size=(z, d_in)) / np.sqrt(d_in)
        self.layers = []
        prev = d_in
        for _ in range(config.layers):
            self.layers.append(
                {
                    "w_x": rng.uniform(-1, 1, size=(prev, d_h)) / np.sqrt(prev),
                    "w_ctx": rng.uniform(-1, 1, size=(prev, d_h)) / np.sqrt(prev),
                    "bias": rng.uniform(-1, 1, size=(d_h,)) / np.sqrt(prev),
                }
            )
            prev = d_h
        self.head_w = rng.uniform(-1, 1, size=(d_h, z)) / np.sqrt(d_h)
        self.head_b = rng.uniform(-1, 1, size=(z,)) / np.sqrt(d_h)

    def _embed_ids(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        z = self.embed.shape[0]
        if ids.size and (ids.min() < 0 or ids.max() >= z):
            raise UnknownToken(f"token id outside the stub's {z}-way vocabulary")
        return self.embed[ids]

    def forward(self, visual: np.ndarray, question_ids, answer_ids):
        """Run the stub; returns (HiddenStates at layer_index, logits, cache)."""
        visual = np.asarray(visual, dtype=np.float64)
        n_v = visual.shape[0]
        n_q = len(question_ids)
        n_a = len(answer_ids)
        x = np.concatenate(
            [visual, self._embed_ids(question_ids), self._embed_ids(answer_ids)], axis=0
        )
        caches = []
        tapped = None
        for li, layer in enumerate(self.layers, start=1):
            counts = np.arange(1, x.shape[0] + 1, dtype=np.float64)[:, None]
            cm = np.cumsum(x, axis=0) / counts
            pre = x @ layer["w_x"] + cm @ layer["w_ctx"] + layer["bias"]
            out = np.logaddexp(0.0, pre)
            caches.append((x, pre))
            x = out
            if li == self.config.layer_index:
                tapped = x
        logits = x[n_v + n_q :] @ self.head_w + self.head_b
        hidden = HiddenStates(
            visual=tapped[:n_v],
            question=tapped[n_v : n_v + n_q],
            answer=tapped[n_v + n_q :],
            layer_index=self.config.layer_index,
        )
        cache = (caches, x, n_v, n_q, n_a)
        return hidden, logits, cache

    def backward(self, d_hidden: np.ndarray, d_logits: np.ndarray, cache) -> np.ndarray:
        """Propagate hidden/logit gradients back to the visual tokens.

        d_hidden applies at the tapped layer's output, d_logits at the
        head; the stub's own parameters stay frozen.
        """
        caches, x_final, n_v, n_q, n_a = cache
        dx = np.zeros_like(x_final)
        if d_logits is not None:
            dx[n_v + n_q :] += d_logits @ self.head_w.T
        for li in range(len(self.layers), 0, -1):
            if li == self.config.layer_index and d_hidden is not None:
                dx = dx + d_hidden
            x_in, pre = caches[li - 1]
            sig = 1.0 / (1.0 + np.exp(-np.abs(pre)))
            sig = np.where(pre >= 0, sig, 1.0 - sig)
            dpre = dx * sig
            layer = self.layers[li - 1]
            dx_in = dpre @ layer["w_x"].T
            dcm = dpre @ layer["w_ctx"].T
            # cumulative mean: x_u receives sum_{t>=u} dcm_t / (t+1)
            counts = np.arange(1, x_in.shape[0] + 1, dtype=np.float64)[:, None]
            dx_in += np.cumsum((dcm / counts)[::-1], axis=0)[::-1]
            dx = dx_in
        return dx[:n_v]
