"""Token-level alignment objectives with analytic gradients.

A batch is two row-aligned matrices: token embeddings `e` and pooled
visual features `t`, shape (B, D). Three objectives are combined:

  distance   mean absolute difference, averaged over batch and dimension
  similarity mean (1 - cosine) over pairs
  sigmoid    pairwise log-sigmoid over all B*B combinations, diagonal
             positive, off-diagonal negative, with learnable temperature
             k and bias b

Each function returns the value together with gradients for everything
learnable that feeds it, so callers can backpropagate without a
framework.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tokenforge.errors import DimensionMismatch, EmptyBatch, InvalidWeights, ZeroNorm


@dataclass
class LossOutput:
    value: float
    d_e: np.ndarray
    d_t: np.ndarray
    d_k: float = 0.0
    d_b: float = 0.0
    parts: dict = field(default_factory=dict)


def _check_batch(e: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    e = np.asarray(e, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if e.ndim != 2 or t.ndim != 2:
        raise DimensionMismatch(f"batches must be 2-D, got {e.shape} and {t.shape}")
    if e.shape != t.shape:
        raise DimensionMismatch(f"batch shapes differ: {e.shape} vs {t.shape}")
    if e.shape[0] == 0:
        raise EmptyBatch("cannot average a loss over zero pairs")
    return e, t


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[np.logical_not(pos)])
    out[np.logical_not(pos)] = ex / (1.0 + ex)
    return out


def loss_dis(e: np.ndarray, t: np.ndarray) -> LossOutput:
    """Mean absolute difference over batch and dimension.

    The subgradient at exact ties is 0, so d_e and d_t vanish wherever
    e and t agree bit-for-bit.
    """
    e, t = _check_batch(e, t)
    bsz, dim = e.shape
    diff = e - t
    value = float(np.abs(diff).sum() / (bsz * dim))
    grad = np.sign(diff) / (bsz * dim)
    return LossOutput(value=value, d_e=grad, d_t=-grad)


def loss_sim(e: np.ndarray, t: np.ndarray) -> LossOutput:
    """Mean (1 - cosine similarity) over row pairs."""
    e, t = _check_batch(e, t)
    bsz = e.shape[0]
    ne = np.linalg.norm(e, axis=1)
    nt = np.linalg.norm(t, axis=1)
    if np.any(ne == 0) or np.any(nt == 0):
        raise ZeroNorm("cosine term undefined for a zero-norm row")
    dots = np.einsum("bd,bd->b", e, t)
    cos = dots / (ne * nt)
    value = float((1.0 - cos).sum() / bsz)
    # d cos/d e = t/(|e||t|) - cos * e/|e|^2, and the loss carries -1/B
    d_e = -(t / (ne * nt)[:, None] - (cos / ne**2)[:, None] * e) / bsz
    d_t = -(e / (ne * nt)[:, None] - (cos / nt**2)[:, None] * t) / bsz
    return LossOutput(value=value, d_e=d_e, d_t=d_t)


def pairwise_sigmoid_term(dot: float, k: float, b: float, z: int) -> float:
    """One pairwise term: softplus(z * (-k * dot + b)); z is +1 or -1."""
    return float(_softplus(np.array(z * (-k * dot + b))))


def _normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise ZeroNorm("cannot unit-normalize a zero row")
    return x / norms[:, None], norms


def _normalize_rows_backward(d_hat, x_hat, norms):
    # d/dx of x/|x| applied to an upstream row gradient
    inner = np.einsum("bd,bd->b", d_hat, x_hat)
    return (d_hat - inner[:, None] * x_hat) / norms[:, None]


def loss_sig(
    e: np.ndarray, t: np.ndarray, k: float, b: float, normalize: bool = False
) -> LossOutput:
    """Pairwise sigmoid objective over all in-batch combinations.

    Row i of `e` against row j of `t` is a positive pair iff i == j.
    Every term is softplus(z_ij * (-k * e_i.t_j + b)), averaged over the
    batch size (not over B*B). With `normalize`, rows are unit-normalized
    before the dot products and gradients flow through the normalization.
    """
    e, t = _check_batch(e, t)
    bsz = e.shape[0]
    if normalize:
        e_use, e_norms = _normalize_rows(e)
        t_use, t_norms = _normalize_rows(t)
    else:
        e_use, t_use = e, t
    dots = e_use @ t_use.T
    z = 2.0 * np.eye(bsz) - 1.0
    arg = z * (-k * dots + b)
    value = float(_softplus(arg).sum() / bsz)
    s = _sigmoid(arg)
    # d value / d arg = s / B; chain through arg = z*(-k*dots + b)
    d_dots = (s * z) * (-k) / bsz
    d_e_use = d_dots @ t_use
    d_t_use = d_dots.T @ e_use
    d_k = float((s * z * (-dots)).sum() / bsz)
    d_b = float((s * z).sum() / bsz)
    if normalize:
        d_e = _normalize_rows_backward(d_e_use, e_use, e_norms)
        d_t = _normalize_rows_backward(d_t_use, t_use, t_norms)
    else:
        d_e, d_t = d_e_use, d_t_use
    return LossOutput(value=value, d_e=d_e, d_t=d_t, d_k=d_k, d_b=d_b)


def total_alignment_loss(
    e: np.ndarray,
    t: np.ndarray,
    k: float,
    b: float,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
    normalize_sig: bool = False,
) -> LossOutput:
    """Weighted sum of the three objectives with merged gradients."""
    w = tuple(float(x) for x in weights)
    if len(w) != 3 or any(x < 0 for x in w):
        raise InvalidWeights(f"weights must be three non-negative reals, got {weights}")
    if all(x == 0 for x in w):
        raise InvalidWeights("at least one loss weight must be positive")
    e, t = _check_batch(e, t)
    parts = {}
    value = 0.0
    d_e = np.zeros_like(e)
    d_t = np.zeros_like(t)
    d_k = 0.0
    d_b = 0.0
    for name, wx, fn in (
        ("dis", w[0], loss_dis),
        ("sim", w[1], loss_sim),
    ):
        if wx == 0:
            continue
        out = fn(e, t)
        parts[name] = out.value
        value += wx * out.value
        d_e += wx * out.d_e
        d_t += wx * out.d_t
    if w[2] != 0:
        out = loss_sig(e, t, k, b, normalize=normalize_sig)
        parts["sig"] = out.value
        value += w[2] * out.value
        d_e += w[2] * out.d_e
        d_t += w[2] * out.d_t
        d_k = w[2] * out.d_k
        d_b = w[2] * out.d_b
    return LossOutput(value=float(value), d_e=d_e, d_t=d_t, d_k=d_k, d_b=d_b, parts=parts)
