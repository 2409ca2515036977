"""Inspection rendering: tint each token region and stamp its text.

All painting is confined to masked pixels, so a record whose entries have
no pixels renders to a byte-identical copy of its image.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from tokenforge.corpus.records import TokenRecord

_GOLDEN = 0.6180339887498949


def _value_color(pixel_value: int) -> tuple[int, int, int]:
    """Deterministic saturated color for a mask value (golden-angle hue)."""
    h = (pixel_value * _GOLDEN) % 1.0
    s, v = 0.85, 0.95
    i = int(h * 6.0)
    f = h * 6.0 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i % 6]
    return tuple(int(round(255 * c)) for c in rgb)


def _text_stamp(text: str, width: int, height: int) -> np.ndarray:
    """Token text rasterized into a boolean plane of the given size."""
    canvas = Image.new("L", (max(width, 1), max(height, 1)), 0)
    draw = ImageDraw.Draw(canvas)
    draw.text((0, 0), text, fill=255, font=ImageFont.load_default())
    return np.asarray(canvas) > 0


def render_overlay(record: TokenRecord) -> np.ndarray:
    """Blend per-token colors into the image and label regions with text.

    Only pixels covered by some entry's mask are modified. The label is
    clipped to the token's own mask so the containment guarantee holds
    even for tiny regions.
    """
    out = record.image.astype(np.float64)
    for entry in record.entries:
        region = record.mask == entry.pixel_value
        if not region.any():
            continue
        color = np.array(_value_color(entry.pixel_value), dtype=np.float64)
        out[region] = 0.5 * out[region] + 0.5 * color

        ys, xs = np.nonzero(region)
        y0, y1 = int(ys.min()), int(ys.max()) + 1
        x0, x1 = int(xs.min()), int(xs.max()) + 1
        stamp = _text_stamp(entry.text, x1 - x0, y1 - y0)
        stamp = stamp[: y1 - y0, : x1 - x0] & region[y0:y1, x0:x1]
        if stamp.any():
            # white on dark tints, black on light ones
            lum = 0.299 * color[0] + 0.587 * color[1] + 0.114 * color[2]
            ink = 255.0 if lum < 128 else 0.0
            sub = out[y0:y1, x0:x1]
            sub[stamp] = ink
            out[y0:y1, x0:x1] = sub
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
