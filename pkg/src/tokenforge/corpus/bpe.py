"""Byte-pair tokenizer over an explicit merge table.

Whitespace characters always stand alone as single-symbol tokens; merges
only ever apply inside runs of non-whitespace characters. Merge priority
is the position in the merge list: lower rank merges first, and all
occurrences of the winning pair are merged left to right before the next
scan.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from tokenforge.errors import IoFailure, SpecError, UnrepresentableInput


@dataclass(frozen=True)
class TokenSpan:
    """One token of a tokenized string: text, vocabulary id, char span."""

    text: str
    token_id: int
    start: int
    end: int
    index: int  # position in the token sequence


@dataclass
class BpeVocab:
    """Base symbols plus ranked merges, with a dense token-to-id table.

    Ids are assigned 0..len-1: base symbols first in list order, then one
    id per merge output in merge order. `unknown` optionally names a token
    that substitutes for unrepresentable characters; it must already be a
    base symbol or merge output.
    """

    base: list[str]
    merges: list[tuple[str, str]] = field(default_factory=list)
    unknown: str | None = None

    def __post_init__(self):
        self.merges = [tuple(m) for m in self.merges]
        seen: dict[str, int] = {}
        for sym in self.base:
            if len(sym) != 1:
                raise SpecError(f"base symbol {sym!r} is not a single character")
            if sym in seen:
                raise SpecError(f"duplicate base symbol {sym!r}")
            seen[sym] = len(seen)
        ranks: dict[tuple[str, str], int] = {}
        for rank, (left, right) in enumerate(self.merges):
            if left not in seen or right not in seen:
                raise SpecError(
                    f"merge {rank} joins {left!r}+{right!r} before both parts exist"
                )
            if (left, right) in ranks:
                raise SpecError(f"duplicate merge {left!r}+{right!r}")
            ranks[(left, right)] = rank
            merged = left + right
            if merged not in seen:
                seen[merged] = len(seen)
        if self.unknown is not None and self.unknown not in seen:
            raise SpecError(f"unknown symbol {self.unknown!r} is not in the vocabulary")
        self._token_to_id = seen
        self._ranks = ranks

    @property
    def token_to_id(self) -> dict[str, int]:
        return dict(self._token_to_id)

    def __len__(self) -> int:
        return len(self._token_to_id)

    def id_of(self, token: str) -> int | None:
        return self._token_to_id.get(token)

    def rank_of(self, left: str, right: str) -> int | None:
        return self._ranks.get((left, right))

    def to_json(self) -> dict:
        doc = {"base": list(self.base), "merges": [list(m) for m in self.merges]}
        if self.unknown is not None:
            doc["unknown"] = self.unknown
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "BpeVocab":
        try:
            return cls(
                base=list(doc["base"]),
                merges=[tuple(m) for m in doc.get("merges", [])],
                unknown=doc.get("unknown"),
            )
        except KeyError as exc:
            raise SpecError(f"vocabulary document lacks key {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "BpeVocab":
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read vocabulary file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise IoFailure(f"vocabulary file {path} is not valid JSON: {exc}") from exc
        return cls.from_json(doc)


def _merge_piece(symbols: list[tuple[str, int, int]], vocab: BpeVocab):
    """Apply ranked merges to one whitespace-free piece.

    `symbols` holds (text, start, end) units; all occurrences of the
    lowest-ranked adjacent pair are merged left to right per scan.
    """
    while len(symbols) > 1:
        best_rank = None
        for (a, _, _), (b, _, _) in zip(symbols, symbols[1:]):
            rank = vocab.rank_of(a, b)
            if rank is not None and (best_rank is None or rank < best_rank):
                best_rank = rank
        if best_rank is None:
            break
        left, right = vocab.merges[best_rank]
        merged: list[tuple[str, int, int]] = []
        i = 0
        while i < len(symbols):
            if (
                i + 1 < len(symbols)
                and symbols[i][0] == left
                and symbols[i + 1][0] == right
            ):
                merged.append((left + right, symbols[i][1], symbols[i + 1][2]))
                i += 2
            else:
                merged.append(symbols[i])
                i += 1
        symbols = merged
    return symbols


def tokenize(text: str, vocab: BpeVocab, on_unknown: str = "error") -> list[TokenSpan]:
    """Tokenize text into spans that partition [0, len(text)).

    For inputs made of base symbols, concatenating the token texts
    reproduces the input exactly. `on_unknown` controls what happens to a
    character outside the base alphabet: "error" raises (unless the vocab
    designates an unknown symbol, which is substituted), "mark" emits a
    span with token_id None and the raw character as text.
    """
    if on_unknown not in ("error", "mark"):
        raise ValueError(f"on_unknown must be 'error' or 'mark', got {on_unknown!r}")
    out: list[TokenSpan]

    def lift(ch: str, pos: int) -> tuple[str, int, int] | None:
        if vocab.id_of(ch) is not None:
            return (ch, pos, pos + 1)
        if vocab.unknown is not None:
            return (vocab.unknown, pos, pos + 1)
        if on_unknown == "mark":
            return None
        raise UnrepresentableInput(
            f"character {ch!r} at position {pos} is not in the base alphabet "
            f"and no unknown symbol is configured"
        )

    out = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            sym = lift(ch, i)
            if sym is None:
                out.append(TokenSpan(ch, None, i, i + 1, -1))
            else:
                out.append(TokenSpan(sym[0], vocab.id_of(sym[0]), i, i + 1, -1))
            i += 1
            continue
        j = i
        piece: list[tuple[str, int, int] | None] = []
        while j < n and not text[j].isspace():
            piece.append(lift(text[j], j))
            j += 1
        # merge contiguous representable stretches; unknown-marked chars
        # split the piece and pass through unmerged
        run: list[tuple[str, int, int]] = []
        for k, sym in enumerate(piece):
            if sym is None:
                for merged in _merge_piece(run, vocab):
                    out.append(TokenSpan(merged[0], vocab.id_of(merged[0]), merged[1], merged[2], -1))
                run = []
                pos = i + k
                out.append(TokenSpan(text[pos], None, pos, pos + 1, -1))
            else:
                run.append(sym)
        for merged in _merge_piece(run, vocab):
            out.append(TokenSpan(merged[0], vocab.id_of(merged[0]), merged[1], merged[2], -1))
        i = j
    return [
        TokenSpan(t.text, t.token_id, t.start, t.end, idx) for idx, t in enumerate(out)
    ]
