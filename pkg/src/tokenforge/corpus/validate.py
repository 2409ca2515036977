"""Record validation.

Violations are contract breaches that make a record unusable; warnings
flag oddities a pipeline may tolerate (whitespace entries with no pixels,
resolved overlaps). A record is valid exactly when it has no violations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tokenforge.corpus.bpe import BpeVocab, tokenize
from tokenforge.corpus.records import MAX_PIXEL_VALUE, TokenRecord


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations


def validate_record(record: TokenRecord, vocab: BpeVocab | None = None) -> ValidationReport:
    """Check a record's internal consistency.

    With a vocabulary, entry texts and positions are also checked against
    a re-tokenization of the answer.
    """
    report = ValidationReport()
    v = report.violations

    if record.image.ndim != 3 or record.image.shape[2] != 3:
        v.append(f"image has shape {record.image.shape}, expected (H, W, 3)")
    if record.mask.shape != record.image.shape[:2]:
        v.append(
            f"dimension mismatch: mask {record.mask.shape} vs image {record.image.shape[:2]}"
        )

    values_present = set(int(x) for x in np.unique(record.mask)) - {0}
    declared: dict[int, int] = {}
    for i, entry in enumerate(record.entries):
        if entry.pixel_value < 1 or entry.pixel_value > MAX_PIXEL_VALUE:
            v.append(f"entry {i}: pixel_value {entry.pixel_value} outside 1..{MAX_PIXEL_VALUE}")
            continue
        if entry.pixel_value in declared:
            v.append(
                f"entry {i}: pixel_value {entry.pixel_value} already used by "
                f"entry {declared[entry.pixel_value]}"
            )
            continue
        declared[entry.pixel_value] = i
        if entry.pixel_value not in values_present:
            if entry.text.strip() == "":
                report.warnings.append(
                    f"entry {i}: whitespace token {entry.text!r} has an empty mask"
                )
            else:
                v.append(
                    f"entry {i}: orphan metadata entry, pixel_value {entry.pixel_value} "
                    f"absent from mask"
                )
        if entry.index_in_text < 0:
            v.append(f"entry {i}: index_in_text {entry.index_in_text} is negative")

    for value in sorted(values_present):
        if value not in declared:
            v.append(f"mask value {value} has no metadata entry")

    if vocab is not None:
        tokens = tokenize(record.answer, vocab, on_unknown="mark")
        for i, entry in enumerate(record.entries):
            if entry.index_in_text < 0:
                continue
            if entry.index_in_text >= len(tokens):
                v.append(
                    f"entry {i}: index_in_text {entry.index_in_text} out of range "
                    f"for a {len(tokens)}-token answer"
                )
            elif tokens[entry.index_in_text].text != entry.text:
                v.append(
                    f"entry {i}: token text {entry.text!r} does not match re-tokenized "
                    f"answer token {tokens[entry.index_in_text].text!r}"
                )
    return report
