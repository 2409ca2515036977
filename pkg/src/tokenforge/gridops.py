"""Dense-grid primitives: resampling, pooling, windowing, numeric probes.

Feature grids are row-major float arrays of shape (height, width, dim);
masks are 2-D boolean planes. All functions here are pure and operate in
float64 unless the caller passes something narrower on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tokenforge.errors import (
    DimensionMismatch,
    EmptyMask,
    NumericalFailure,
    ShapeError,
    ZeroNorm,
)


@dataclass
class FeatureGrid:
    """A dense per-cell feature map with explicit shape metadata."""

    height: int
    width: int
    dim: int
    data: np.ndarray

    @classmethod
    def from_array(cls, data: np.ndarray) -> "FeatureGrid":
        data = np.asarray(data)
        if data.ndim != 3:
            raise ShapeError(f"feature grid must be (h, w, dim), got shape {data.shape}")
        h, w, d = data.shape
        return cls(height=h, width=w, dim=d, data=data)

    def validate(self) -> None:
        if self.data.shape != (self.height, self.width, self.dim):
            raise ShapeError(
                f"declared shape ({self.height}, {self.width}, {self.dim}) "
                f"does not match data shape {self.data.shape}"
            )
        if not np.all(np.isfinite(self.data)):
            raise NumericalFailure("feature grid contains non-finite values")


@dataclass
class BinaryMask:
    """A 2-D boolean plane with explicit shape metadata."""

    height: int
    width: int
    data: np.ndarray

    @classmethod
    def from_array(cls, data: np.ndarray) -> "BinaryMask":
        data = np.asarray(data)
        if data.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {data.shape}")
        return cls(height=data.shape[0], width=data.shape[1], data=data.astype(bool))

    def popcount(self) -> int:
        return int(self.data.sum())


def _grid_data(grid) -> np.ndarray:
    """Accept either a FeatureGrid or a raw array."""
    if isinstance(grid, FeatureGrid):
        return grid.data
    return np.asarray(grid)


def _mask_data(mask) -> np.ndarray:
    if isinstance(mask, BinaryMask):
        return mask.data
    return np.asarray(mask)


def _axis_samples(n_in: int, n_out: int):
    """Source indices and fractional weights for one resampled axis.

    Sample centers sit at (i + 0.5)/n_out of the output span; the source
    coordinate is clamped to the valid index range, so edge samples clamp
    rather than extrapolate.
    """
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.intp)
    lo = np.minimum(lo, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(grid, out_h: int, out_w: int) -> np.ndarray:
    """Resample a (h, w) or (h, w, dim) array to (out_h, out_w[, dim]).

    Interpolation weights per output cell sum to one, so constant inputs
    are preserved exactly and same-size calls return a bit-exact copy.
    """
    data = _grid_data(grid)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target dims must be >= 1, got ({out_h}, {out_w})")
    if data.ndim == 2:
        return bilinear_resize(data[:, :, None], out_h, out_w)[:, :, 0]
    if data.ndim != 3:
        raise ShapeError(f"expected 2-D or 3-D input, got shape {data.shape}")

    h, w, _ = data.shape
    y0, y1, fy = _axis_samples(h, out_h)
    x0, x1, fx = _axis_samples(w, out_w)

    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = (1.0 - fx) * data[y0][:, x0] + fx * data[y0][:, x1]
    bot = (1.0 - fx) * data[y1][:, x0] + fx * data[y1][:, x1]
    return (1.0 - fy) * top + fy * bot


def bilinear_resize_backward(grad_out: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Adjoint of :func:`bilinear_resize` for a (h, w, dim) gradient.

    Scatter-adds each output gradient back onto the four source cells it
    was interpolated from, with the same weights.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    squeeze = grad_out.ndim == 2
    if squeeze:
        grad_out = grad_out[:, :, None]
    out_h, out_w, dim = grad_out.shape
    y0, y1, fy = _axis_samples(in_h, out_h)
    x0, x1, fx = _axis_samples(in_w, out_w)

    grad_in = np.zeros((in_h * in_w, dim), dtype=np.float64)
    flat = grad_out.reshape(out_h * out_w, dim)
    wy = np.stack([1.0 - fy, fy])   # (2, out_h)
    wx = np.stack([1.0 - fx, fx])   # (2, out_w)
    ys = np.stack([y0, y1])
    xs = np.stack([x0, x1])
    for a in range(2):
        for b in range(2):
            coeff = (wy[a][:, None] * wx[b][None, :]).reshape(-1, 1)
            idx = (ys[a][:, None] * in_w + xs[b][None, :]).reshape(-1)
            np.add.at(grad_in, idx, coeff * flat)
    grad_in = grad_in.reshape(in_h, in_w, dim)
    return grad_in[:, :, 0] if squeeze else grad_in


def pool_weights(mask, out_h: int, out_w: int, soft: bool = False):
    """Resample a mask to pooling resolution and return (weights, denom).

    Hard mode thresholds the resampled plane at 0.5 and counts cells;
    soft mode keeps the fractional plane and sums it. Raises EmptyMask
    when nothing survives.
    """
    plane = _mask_data(mask).astype(np.float64)
    if plane.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {plane.shape}")
    if plane.shape != (out_h, out_w):
        plane = bilinear_resize(plane, out_h, out_w)
    if soft:
        denom = float(plane.sum())
        if denom <= 0.0:
            raise EmptyMask("soft mask has zero total weight after resampling")
        return plane, denom
    hard = (plane >= 0.5).astype(np.float64)
    denom = float(hard.sum())
    if denom == 0.0:
        raise EmptyMask("mask selects no cells after resampling")
    return hard, denom


def masked_mean_pool(features, mask, soft: bool = False) -> np.ndarray:
    """Average grid features over mask-selected cells.

    The mask may live at a different resolution; it is bilinearly
    resampled to the feature grid first. Returns a (dim,) vector.
    """
    data = _grid_data(features)
    if data.ndim != 3:
        raise ShapeError(f"features must be (h, w, dim), got shape {data.shape}")
    h, w, _ = data.shape
    weights, denom = pool_weights(mask, h, w, soft=soft)
    return (data * weights[:, :, None]).sum(axis=(0, 1)) / denom


def masked_mean_pool_backward(grad_vec: np.ndarray, weights: np.ndarray, denom: float) -> np.ndarray:
    """Gradient of masked_mean_pool with respect to its feature grid."""
    return weights[:, :, None] * (np.asarray(grad_vec)[None, None, :] / denom)


def window_partition(grid, s: int) -> np.ndarray:
    """Cut a (h, w, dim) grid into s-by-s windows.

    Returns shape (h/s * w/s, dim, s*s); windows are row-major over the
    grid and cells are row-major within each window.
    """
    data = _grid_data(grid)
    if data.ndim != 3:
        raise ShapeError(f"expected (h, w, dim) grid, got shape {data.shape}")
    h, w, d = data.shape
    if s < 1 or h % s != 0 or w % s != 0:
        raise ShapeError(f"window size {s} does not tile a {h}x{w} grid")
    view = data.reshape(h // s, s, w // s, s, d)
    return view.transpose(0, 2, 4, 1, 3).reshape((h // s) * (w // s), d, s * s)


def window_merge(windows: np.ndarray, h: int, w: int, s: int) -> np.ndarray:
    """Inverse of :func:`window_partition`."""
    windows = np.asarray(windows)
    n, d, ss = windows.shape
    if ss != s * s or n != (h // s) * (w // s) or h % s or w % s:
        raise ShapeError(
            f"windows of shape {windows.shape} do not assemble into ({h}, {w}, {d})"
        )
    view = windows.reshape(h // s, w // s, d, s, s)
    return view.transpose(0, 3, 1, 4, 2).reshape(h, w, d)


def finite_diff_grad(f, x: np.ndarray, eps: float = 1e-5, mode: str = "central") -> np.ndarray:
    """Numeric gradient of a scalar function via per-coordinate differences."""
    if mode not in ("central", "forward"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    base = f(x) if mode == "forward" else None
    if base is not None and not np.isfinite(base):
        raise NumericalFailure("function returned a non-finite value at the base point")
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        ix = it.multi_index
        bumped = x.copy()
        bumped[ix] = x[ix] + eps
        hi = f(bumped)
        if mode == "central":
            bumped[ix] = x[ix] - eps
            lo = f(bumped)
            val = (hi - lo) / (2.0 * eps)
        else:
            val = (hi - base) / eps
        if not np.isfinite(val):
            raise NumericalFailure(f"non-finite finite-difference probe at index {ix}")
        grad[ix] = val
        it.iternext()
    return grad


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors; rejects zero vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector shapes differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroNorm("cosine similarity against a zero vector is undefined")
    return float(np.dot(a, b) / (na * nb))
