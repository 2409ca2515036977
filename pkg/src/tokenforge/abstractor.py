"""Multi-crop planning and window-attention compression of feature grids.

A high-resolution image is covered by a global thumbnail plus a grid of
tile crops chosen by aspect ratio. Each crop's feature grid is then
compressed: every s-by-s window collapses to a single token through a
softmax over the window's affinity with a learned probe vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tokenforge.errors import ShapeError
from tokenforge.gridops import bilinear_resize, window_merge, window_partition

DEFAULT_TILE = 448
DEFAULT_MAX_TILES = 6
DEFAULT_WINDOW = 4


@dataclass(frozen=True)
class CropPlan:
    rows: int
    cols: int
    tile_size: int = DEFAULT_TILE
    includes_global: bool = True

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols

    @property
    def n_sub_images(self) -> int:
        return self.n_tiles + (1 if self.includes_global else 0)


@dataclass
class VisualSequence:
    """Flattened visual tokens with per-token provenance.

    provenance[i] = (sub_image, row, col); sub_image 0 is the global
    thumbnail and 1..n are tiles in row-major crop order.
    """

    tokens: np.ndarray          # (n_v, dim)
    side: int
    n_sub_images: int
    provenance: np.ndarray      # (n_v, 3) ints

    def __len__(self) -> int:
        return self.tokens.shape[0]


def plan_crops(
    height: int,
    width: int,
    tile_size: int = DEFAULT_TILE,
    max_tiles: int = DEFAULT_MAX_TILES,
) -> CropPlan:
    """Choose the tile grid whose aspect best matches the image.

    Over all (rows, cols) with rows*cols <= max_tiles, minimize
    |log(width/height) - log(cols/rows)|. Ties prefer more tiles, then
    fewer rows. Total and deterministic for any positive dimensions.
    """
    if height < 1 or width < 1:
        raise ShapeError(f"image dims must be positive, got ({height}, {width})")
    if tile_size < 1 or max_tiles < 1:
        raise ShapeError("tile_size and max_tiles must be positive")
    target = math.log(width / height)
    best_key = None
    best = None
    for rows in range(1, max_tiles + 1):
        for cols in range(1, max_tiles + 1):
            if rows * cols > max_tiles:
                continue
            key = (abs(target - math.log(cols / rows)), -(rows * cols), rows)
            if best_key is None or key < best_key:
                best_key = key
                best = (rows, cols)
    return CropPlan(rows=best[0], cols=best[1], tile_size=tile_size)


def crop_images(image: np.ndarray, plan: CropPlan) -> list[np.ndarray]:
    """Global thumbnail plus row-major tile crops, each tile_size square.

    The image is resized to (rows*tile, cols*tile) and cut; the thumbnail
    is a direct resize of the whole image and always comes first.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError(f"image must be (H, W, 3), got shape {image.shape}")
    t = plan.tile_size
    out = [bilinear_resize(image, t, t)]
    canvas = bilinear_resize(image, plan.rows * t, plan.cols * t)
    for r in range(plan.rows):
        for c in range(plan.cols):
            out.append(canvas[r * t : (r + 1) * t, c * t : (c + 1) * t])
    return out


def token_abstract(feats: np.ndarray, special: np.ndarray, window: int = DEFAULT_WINDOW):
    """Compress each window to one token via probe-scored softmax mixing.

    Returns (compressed, alphas, cache): compressed has shape
    (h/window, w/window, dim); alphas are the per-window softmax weights,
    shape (n_windows, window*window), each row summing to one. The cache
    feeds :func:`token_abstract_backward`.
    """
    feats = np.asarray(feats, dtype=np.float64)
    special = np.asarray(special, dtype=np.float64)
    if feats.ndim != 3:
        raise ShapeError(f"features must be (h, w, dim), got {feats.shape}")
    h, w, d = feats.shape
    if special.shape != (d,):
        raise ShapeError(f"probe vector must have shape ({d},), got {special.shape}")
    wins = window_partition(feats, window)           # (n, d, s*s)
    logits = np.einsum("d,ndj->nj", special, wins)
    logits = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(logits)
    alphas = expd / expd.sum(axis=1, keepdims=True)
    mixed = np.einsum("nj,ndj->nd", alphas, wins)
    compressed = mixed.reshape(h // window, w // window, d)
    cache = (wins, alphas, special, h, w, window)
    return compressed, alphas, cache


def token_abstract_backward(d_compressed: np.ndarray, cache):
    """Gradients of token_abstract w.r.t. its feature grid and probe."""
    wins, alphas, special, h, w, window = cache
    n, d, ss = wins.shape
    d_mixed = np.asarray(d_compressed).reshape(n, d)
    d_alpha = np.einsum("nd,ndj->nj", d_mixed, wins)
    d_wins = alphas[:, None, :] * d_mixed[:, :, None]
    # softmax jacobian, rowwise
    d_logits = alphas * (d_alpha - (alphas * d_alpha).sum(axis=1, keepdims=True))
    d_wins += special[None, :, None] * d_logits[:, None, :]
    d_special = np.einsum("nj,ndj->d", d_logits, wins)
    d_feats = window_merge(d_wins, h, w, window)
    return d_feats, d_special


def flatten_sequence(grids: list[np.ndarray]) -> VisualSequence:
    """Concatenate per-crop compressed grids into one token sequence.

    All grids must be square and identically shaped. Tokens appear
    sub-image by sub-image, row-major within each; provenance is a
    bijection onto (sub_image, row, col) triples.
    """
    if not grids:
        raise ShapeError("cannot flatten an empty grid list")
    first = np.asarray(grids[0])
    if first.ndim != 3 or first.shape[0] != first.shape[1]:
        raise ShapeError(f"grids must be square (side, side, dim), got {first.shape}")
    side, _, dim = first.shape
    tokens = []
    prov = []
    for g, grid in enumerate(grids):
        grid = np.asarray(grid)
        if grid.shape != first.shape:
            raise ShapeError(
                f"sub-image {g} has shape {grid.shape}, expected {first.shape}"
            )
        tokens.append(grid.reshape(side * side, dim))
        for r in range(side):
            for c in range(side):
                prov.append((g, r, c))
    return VisualSequence(
        tokens=np.concatenate(tokens, axis=0),
        side=side,
        n_sub_images=len(grids),
        provenance=np.array(prov, dtype=np.int64),
    )
