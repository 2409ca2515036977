"""Token-mask records: assembly, file encoding, decoding.

A record couples an RGB image with a single 16-bit mask plane. Pixel
value 0 is background; values 1..n_e identify the record's token entries
in order. The JSON metadata document names both planes and carries the
entry list, so a record round-trips through the filesystem exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from tokenforge.corpus.bpe import TokenSpan
from tokenforge.errors import (
    DimensionMismatch,
    IoFailure,
    MissingField,
    PixelValueOverflow,
)

MAX_PIXEL_VALUE = 65535


@dataclass(frozen=True)
class TokenEntry:
    """One aligned token: text, vocab id, mask plane value, answer position."""

    text: str
    token_id: int
    pixel_value: int
    index_in_text: int


@dataclass
class CharMask:
    """Binary plane for a single character of the answer text."""

    char_index: int
    mask: np.ndarray


@dataclass
class TokenMask:
    """A token span with the pixel union of its characters."""

    span: TokenSpan
    mask: np.ndarray
    empty: bool


@dataclass
class TokenRecord:
    """In-memory record: image, mask plane, QA text, token entries."""

    image: np.ndarray          # (H, W, 3) uint8
    mask: np.ndarray           # (H, W) uint16
    question: str
    answer: str
    entries: list[TokenEntry]
    extras: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return int(self.image.shape[0])

    @property
    def width(self) -> int:
        return int(self.image.shape[1])

    def token_mask(self, entry: TokenEntry) -> np.ndarray:
        """Binary plane of one entry, recovered from the shared mask."""
        return self.mask == entry.pixel_value

    def same_content(self, other: "TokenRecord") -> bool:
        return (
            np.array_equal(self.image, other.image)
            and np.array_equal(self.mask, other.mask)
            and self.question == other.question
            and self.answer == other.answer
            and self.entries == other.entries
            and self.extras == other.extras
        )


def build_token_masks(
    char_masks: list[CharMask], spans: list[TokenSpan]
) -> list[TokenMask]:
    """Union character planes into per-token planes.

    A token's plane is the union of the planes of every character index
    inside its span. Tokens with no contributing characters come back
    flagged empty (an all-false plane of the shared shape).
    """
    if not char_masks and spans:
        raise MissingField("no character masks supplied for a non-empty token list")
    shape = char_masks[0].mask.shape if char_masks else None
    by_index: dict[int, np.ndarray] = {}
    for cm in char_masks:
        if cm.mask.shape != shape:
            raise DimensionMismatch(
                f"character mask for index {cm.char_index} has shape {cm.mask.shape}, "
                f"expected {shape}"
            )
        plane = cm.mask.astype(bool)
        if cm.char_index in by_index:
            by_index[cm.char_index] = by_index[cm.char_index] | plane
        else:
            by_index[cm.char_index] = plane
    out = []
    for span in spans:
        acc = np.zeros(shape, dtype=bool)
        for ci in range(span.start, span.end):
            if ci in by_index:
                acc |= by_index[ci]
        out.append(TokenMask(span=span, mask=acc, empty=not acc.any()))
    return out


def resolve_overlaps(token_masks: list[TokenMask]) -> tuple[list[TokenMask], list[str]]:
    """Make token planes pairwise disjoint.

    Contested pixels go to the token with the lower index in the answer
    text; each resolved collision is reported as a warning string.
    """
    warnings: list[str] = []
    claimed = None
    resolved = []
    for tm in sorted(token_masks, key=lambda t: t.span.index):
        plane = tm.mask.astype(bool)
        if claimed is None:
            claimed = np.zeros_like(plane)
        contested = plane & claimed
        if contested.any():
            warnings.append(
                f"overlap: token {tm.span.index} ({tm.span.text!r}) lost "
                f"{int(contested.sum())} contested pixels to earlier tokens"
            )
            plane = plane & ~claimed
        claimed = claimed | plane
        resolved.append(TokenMask(span=tm.span, mask=plane, empty=not plane.any()))
    resolved.sort(key=lambda t: t.span.index)
    return resolved, warnings


def assemble_record(
    image: np.ndarray,
    question: str,
    answer: str,
    token_masks: list[TokenMask],
    extras: dict | None = None,
) -> TokenRecord:
    """Paint token planes into one uint16 plane and build the record.

    Entries get pixel values 1..n_e in list order. Planes are painted in
    reverse so that, should any overlap survive, the lower-indexed entry
    keeps the pixel.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise DimensionMismatch(
            f"image must be (H, W, 3) uint8, got shape {image.shape} dtype {image.dtype}"
        )
    n_e = len(token_masks)
    if n_e > MAX_PIXEL_VALUE:
        raise PixelValueOverflow(
            f"{n_e} entries exceed the {MAX_PIXEL_VALUE} values a 16-bit plane can hold"
        )
    plane = np.zeros(image.shape[:2], dtype=np.uint16)
    for value in range(n_e, 0, -1):
        tm = token_masks[value - 1]
        if tm.mask.shape != plane.shape:
            raise DimensionMismatch(
                f"token mask shape {tm.mask.shape} does not match image {plane.shape}"
            )
        plane[tm.mask.astype(bool)] = value
    entries = [
        TokenEntry(
            text=tm.span.text,
            token_id=tm.span.token_id,
            pixel_value=i + 1,
            index_in_text=tm.span.index,
        )
        for i, tm in enumerate(token_masks)
    ]
    return TokenRecord(
        image=image,
        mask=plane,
        question=question,
        answer=answer,
        entries=entries,
        extras=dict(extras or {}),
    )


def _entry_doc(entry: TokenEntry) -> dict:
    return {
        "text": entry.text,
        "id": entry.token_id,
        "pixel_value": entry.pixel_value,
        "index_in_text": entry.index_in_text,
    }


def encode_record(record: TokenRecord, out_dir: str | Path, name: str) -> Path:
    """Write image, mask plane, and metadata next to each other.

    Produces {name}.png, {name}_mask.png (16-bit grayscale), and
    {name}.json; returns the metadata path. Output bytes are a pure
    function of the record, so re-encoding a decoded record is
    byte-identical.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        image_name = f"{name}.png"
        mask_name = f"{name}_mask.png"
        Image.fromarray(record.image).save(out_dir / image_name, format="PNG")
        Image.fromarray(record.mask.astype(np.uint16)).save(out_dir / mask_name, format="PNG")
        doc = {
            "image": image_name,
            "mask": mask_name,
            "width": record.width,
            "height": record.height,
            "question": record.question,
            "answer": record.answer,
            "tokens": [_entry_doc(e) for e in record.entries],
        }
        if record.extras:
            doc["extras"] = record.extras
        json_path = out_dir / f"{name}.json"
        json_path.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write record {name} under {out_dir}: {exc}") from exc
    return json_path


def decode_record(json_path: str | Path) -> TokenRecord:
    """Read a record back from its metadata document."""
    json_path = Path(json_path)
    try:
        doc = json.loads(json_path.read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read metadata {json_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoFailure(f"metadata {json_path} is not valid JSON: {exc}") from exc

    for key in ("image", "mask", "width", "height", "question", "answer", "tokens"):
        if key not in doc:
            raise MissingField(f"metadata {json_path} lacks key {key!r}")
    base = json_path.parent
    try:
        image = np.asarray(Image.open(base / doc["image"]).convert("RGB"))
        mask = np.asarray(Image.open(base / doc["mask"])).astype(np.uint16)
    except OSError as exc:
        raise IoFailure(f"cannot read planes for {json_path}: {exc}") from exc
    entries = []
    for tok in doc["tokens"]:
        for key in ("text", "id", "pixel_value", "index_in_text"):
            if key not in tok:
                raise MissingField(f"token entry in {json_path} lacks key {key!r}")
        entries.append(
            TokenEntry(
                text=tok["text"],
                token_id=tok["id"],
                pixel_value=tok["pixel_value"],
                index_in_text=tok["index_in_text"],
            )
        )
    return TokenRecord(
        image=image,
        mask=mask,
        question=doc["question"],
        answer=doc["answer"],
        entries=entries,
        extras=doc.get("extras", {}),
    )
