"""Tokenizer tests against a one-merge-at-a-time reference simulator."""

import numpy as np
import pytest

from tokenforge.corpus import BpeVocab, tokenize
from tokenforge.errors import SpecError, UnrepresentableInput


def reference_bpe(text, vocab):
    """Independent oracle: apply one leftmost lowest-rank merge per step.

    Works piece by piece (whitespace chars stand alone) and never merges
    more than a single occurrence per scan, so it exercises a different
    control flow than the production tokenizer.
    """
    out = []
    for piece in split_pieces(text):
        if piece.isspace():
            out.append(piece)
            continue
        syms = list(piece)
        while True:
            best = None
            for i in range(len(syms) - 1):
                rank = vocab.rank_of(syms[i], syms[i + 1])
                if rank is not None and (best is None or rank < best[0]):
                    best = (rank, i)
            if best is None:
                break
            _, i = best
            syms = syms[:i] + [syms[i] + syms[i + 1]] + syms[i + 2 :]
        out.extend(syms)
    return out


def split_pieces(text):
    pieces, cur = [], ""
    for ch in text:
        if ch.isspace():
            if cur:
                pieces.append(cur)
                cur = ""
            pieces.append(ch)
        else:
            cur += ch
    if cur:
        pieces.append(cur)
    return pieces


def simple_vocab():
    return BpeVocab(base=list("ab "), merges=[("a", "b")])


class TestMergeOrder:
    def test_abab_merges_both_occurrences(self):
        spans = tokenize("abab", simple_vocab())
        assert [(s.text, s.start, s.end) for s in spans] == [("ab", 0, 2), ("ab", 2, 4)]
        assert [s.index for s in spans] == [0, 1]

    def test_rank_priority_over_position(self):
        # merge table: rank 0 joins b+c, rank 1 joins a+b. In "abc" the
        # later-positioned pair must win because it has the lower rank.
        vocab = BpeVocab(base=list("abc"), merges=[("b", "c"), ("a", "b")])
        spans = tokenize("abc", vocab)
        assert [s.text for s in spans] == ["a", "bc"]

    def test_matches_reference_simulator(self):
        rng = np.random.default_rng(42)
        vocab = BpeVocab(
            base=list("abcd "),
            merges=[("a", "b"), ("c", "d"), ("ab", "c"), ("ab", "ab"), ("d", "a")],
        )
        alphabet = "abcd "
        for _ in range(300):
            n = int(rng.integers(0, 14))
            text = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=n))
            got = [s.text for s in tokenize(text, vocab)]
            assert got == reference_bpe(text, vocab), text

    def test_overlapping_occurrences_merge_left_first(self):
        vocab = BpeVocab(base=list("a"), merges=[("a", "a")])
        spans = tokenize("aaa", vocab)
        assert [s.text for s in spans] == ["aa", "a"]


class TestSpans:
    def test_spans_partition_input(self):
        rng = np.random.default_rng(7)
        vocab = BpeVocab(base=list("xyz "), merges=[("x", "y"), ("xy", "z")])
        for _ in range(100):
            n = int(rng.integers(0, 20))
            text = "".join("xyz "[i] for i in rng.integers(0, 4, size=n))
            spans = tokenize(text, vocab)
            assert "".join(s.text for s in spans) == text
            pos = 0
            for s in spans:
                assert s.start == pos
                pos = s.end
            assert pos == len(text)

    def test_whitespace_chars_stand_alone(self):
        vocab = BpeVocab(base=list("ab \t\n"), merges=[("a", "b")])
        spans = tokenize("ab \t\nab", vocab)
        assert [s.text for s in spans] == ["ab", " ", "\t", "\n", "ab"]

    def test_empty_input(self):
        assert tokenize("", simple_vocab()) == []


class TestUnknowns:
    def test_unrepresentable_raises_without_unknown(self):
        with pytest.raises(UnrepresentableInput):
            tokenize("aq", simple_vocab())

    def test_unknown_symbol_substitutes(self):
        vocab = BpeVocab(base=list("ab?"), merges=[("a", "b")], unknown="?")
        spans = tokenize("aqb", vocab)
        assert [s.text for s in spans] == ["a", "?", "b"]
        assert [(s.start, s.end) for s in spans] == [(0, 1), (1, 2), (2, 3)]

    def test_mark_mode_emits_null_ids(self):
        spans = tokenize("aq", simple_vocab(), on_unknown="mark")
        assert [(s.text, s.token_id) for s in spans] == [("a", 0), ("q", None)]


class TestVocab:
    def test_ids_dense_and_ordered(self):
        vocab = BpeVocab(base=list("abc"), merges=[("a", "b"), ("ab", "c")])
        ids = vocab.token_to_id
        assert ids == {"a": 0, "b": 1, "c": 2, "ab": 3, "abc": 4}
        assert sorted(ids.values()) == list(range(len(vocab)))

    def test_merge_before_parts_exist_rejected(self):
        with pytest.raises(SpecError):
            BpeVocab(base=list("ab"), merges=[("a", "c")])

    def test_json_round_trip(self, tmp_path):
        vocab = BpeVocab(base=list("ab?"), merges=[("a", "b")], unknown="?")
        path = tmp_path / "vocab.json"
        vocab.save(path)
        back = BpeVocab.load(path)
        assert back.base == vocab.base
        assert back.merges == vocab.merges
        assert back.unknown == vocab.unknown
