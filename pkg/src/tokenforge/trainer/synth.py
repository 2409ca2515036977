"""Synthetic glyph corpus with exact pixel-level token masks.

Each image is a dark noisy canvas with a few bright glyphs stamped into
aligned slots. Because we draw the glyphs ourselves, every token's mask
is the precise stencil that was painted, which makes the corpus a
ground-truth substrate for alignment training and its acceptance checks.
The answer text lists the glyph characters in reading order; an optional
trailing space token owns every background pixel, giving the whitespace
embedding an explicit region to attach to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..corpus.bpe import BpeVocab, tokenize
from ..corpus.records import (
    CharMask,
    TokenRecord,
    assemble_record,
    build_token_masks,
    resolve_overlaps,
)
from ..errors import SpecError

__all__ = [
    "GLYPH_CHARS",
    "SLOT",
    "SyntheticCorpusSpec",
    "glyph_stencil",
    "make_glyph_vocab",
    "generate_synthetic_corpus",
]

SLOT = 16          # slot side in pixels; glyphs stamp at a fixed offset inside
CELL = 4           # glyph strokes are built from solid CELL x CELL squares
GLYPH_SIDE = 12
GLYPH_OFFSET = 4   # a 3x3-cell stencil fills the rest of a 16x16 slot

GLYPH_CHARS = "OX+=H#TL"

# block bitmaps: each # is one solid CELL x CELL square, so strokes sit
# flush on the cell lattice and never straddle a square boundary
_ART = {
    "O": (
        "###",
        "#.#",
        "###",
    ),
    "X": (
        "#.#",
        ".#.",
        "#.#",
    ),
    "+": (
        ".#.",
        "###",
        ".#.",
    ),
    "=": (
        "###",
        "...",
        "###",
    ),
    "H": (
        "#.#",
        "###",
        "#.#",
    ),
    "#": (
        "###",
        "###",
        "###",
    ),
    "T": (
        "###",
        ".#.",
        ".#.",
    ),
    "L": (
        "#..",
        "#..",
        "###",
    ),
}

# bright, directionally distant colors so classes stay separable under
# noise; no gray-axis entry, which a dark canvas would sit parallel to
_PALETTE = (
    (235, 64, 52),
    (52, 225, 73),
    (66, 120, 245),
    (240, 214, 48),
    (212, 66, 232),
    (52, 227, 222),
    (245, 147, 34),
    (150, 60, 235),
)

QUESTION = "Recognizing full text."


def glyph_stencil(char: str) -> np.ndarray:
    """The GLYPH_SIDE x GLYPH_SIDE boolean bitmap of one glyph class."""
    if char not in _ART:
        raise SpecError(f"no glyph bitmap for {char!r}")
    blocks = np.array([[c == "#" for c in row] for row in _ART[char]], dtype=bool)
    return np.kron(blocks, np.ones((CELL, CELL), dtype=bool))


def make_glyph_vocab() -> BpeVocab:
    """Single-character vocabulary over the glyph set plus space."""
    return BpeVocab(base=list(GLYPH_CHARS) + [" "], merges=[])


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    """Generation knobs; the same spec always yields the same corpus."""

    image_side: int = 64
    n_classes: int = 8
    glyphs_per_image: int = 3
    canvas_level: int = 0
    noise_level: int = 40
    n_records: int = 100
    seed: int = 0
    background_token: bool = True

    def __post_init__(self):
        if self.image_side < SLOT or self.image_side % SLOT:
            raise SpecError(
                f"image side must be a positive multiple of {SLOT}, got {self.image_side}"
            )
        if not 1 <= self.n_classes <= len(GLYPH_CHARS):
            raise SpecError(
                f"glyph set size must be 1..{len(GLYPH_CHARS)}, got {self.n_classes}"
            )
        capacity = (self.image_side // SLOT) ** 2
        if not 1 <= self.glyphs_per_image <= capacity:
            raise SpecError(
                f"{self.glyphs_per_image} glyphs per image exceed the "
                f"{capacity}-slot grid capacity"
            )
        if self.glyphs_per_image > self.n_classes:
            raise SpecError(
                f"{self.glyphs_per_image} glyphs per image but only "
                f"{self.n_classes} distinct classes available"
            )
        if not 0 <= self.noise_level <= 120:
            raise SpecError(f"noise level must be 0..120, got {self.noise_level}")
        if not 0 <= self.canvas_level <= 255 - self.noise_level:
            raise SpecError(
                f"canvas level {self.canvas_level} + noise {self.noise_level} "
                "must stay within 8-bit range"
            )
        if self.n_records < 0:
            raise SpecError(f"record count must be nonnegative, got {self.n_records}")


def _one_record(rng: np.random.Generator, spec: SyntheticCorpusSpec, vocab: BpeVocab) -> TokenRecord:
    side = spec.image_side
    grid_n = side // SLOT
    slots = np.sort(rng.choice(grid_n * grid_n, size=spec.glyphs_per_image, replace=False))
    classes = rng.choice(spec.n_classes, size=spec.glyphs_per_image, replace=False)

    image = rng.integers(
        spec.canvas_level,
        spec.canvas_level + spec.noise_level + 1,
        size=(side, side, 3),
        dtype=np.uint8,
    )
    chars = []
    glyph_masks = []
    for slot, cls in zip(slots, classes):
        char = GLYPH_CHARS[int(cls)]
        stencil = glyph_stencil(char)
        r, c = divmod(int(slot), grid_n)
        top = r * SLOT + GLYPH_OFFSET
        left = c * SLOT + GLYPH_OFFSET
        plane = np.zeros((side, side), dtype=bool)
        plane[top : top + GLYPH_SIDE, left : left + GLYPH_SIDE] = stencil
        image[plane] = _PALETTE[int(cls)]
        chars.append(char)
        glyph_masks.append(plane)

    answer = "".join(chars)
    char_masks = [CharMask(char_index=i, mask=m) for i, m in enumerate(glyph_masks)]
    if spec.background_token:
        answer += " "
        background = ~np.logical_or.reduce(glyph_masks)
        char_masks.append(CharMask(char_index=len(chars), mask=background))

    spans = tokenize(answer, vocab)
    token_masks, _ = resolve_overlaps(build_token_masks(char_masks, spans))
    return assemble_record(image, QUESTION, answer, token_masks)


def generate_synthetic_corpus(spec: SyntheticCorpusSpec) -> list[TokenRecord]:
    """Render `spec.n_records` glyph records, deterministically per seed."""
    rng = np.random.default_rng(spec.seed)
    vocab = make_glyph_vocab()
    return [_one_record(rng, spec, vocab) for _ in range(spec.n_records)]
