"""Corpus tooling: tokenization, token-mask records, validation, inspection."""

from tokenforge.corpus.bpe import BpeVocab, TokenSpan, tokenize
from tokenforge.corpus.records import (
    CharMask,
    TokenEntry,
    TokenMask,
    TokenRecord,
    assemble_record,
    build_token_masks,
    decode_record,
    encode_record,
    resolve_overlaps,
)
from tokenforge.corpus.validate import ValidationReport, validate_record
from tokenforge.corpus.render import render_overlay
from tokenforge.corpus.stats import CorpusStats, corpus_stats
from tokenforge.corpus.prompts import ParsingTask, make_parsing_prompt

__all__ = [
    "BpeVocab",
    "TokenSpan",
    "tokenize",
    "CharMask",
    "TokenEntry",
    "TokenMask",
    "TokenRecord",
    "assemble_record",
    "build_token_masks",
    "decode_record",
    "encode_record",
    "resolve_overlaps",
    "ValidationReport",
    "validate_record",
    "render_overlay",
    "CorpusStats",
    "corpus_stats",
    "ParsingTask",
    "make_parsing_prompt",
]
