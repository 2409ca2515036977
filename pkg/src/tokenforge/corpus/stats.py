"""Corpus summary statistics."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from tokenforge.corpus.records import TokenRecord
from tokenforge.errors import EmptyCorpus


@dataclass
class CorpusStats:
    n_records: int
    total_entries: int
    records_by_type: dict[str, int]
    entry_count_histogram: dict[int, int]   # n_e -> number of records
    top_tokens: list[tuple[str, int]]       # (text, count), count desc then text asc

    def to_json(self) -> dict:
        return {
            "n_records": self.n_records,
            "total_entries": self.total_entries,
            "records_by_type": dict(sorted(self.records_by_type.items())),
            "entry_count_histogram": {str(k): v for k, v in sorted(self.entry_count_histogram.items())},
            "top_tokens": [[t, c] for t, c in self.top_tokens],
        }


def corpus_stats(records: list[TokenRecord], top_k: int = 20) -> CorpusStats:
    """Aggregate counts over a record list.

    The histogram conserves mass: summing bin*count over the entry-count
    histogram always reproduces the total entry count.
    """
    if not records:
        raise EmptyCorpus("cannot summarize an empty record list")
    by_type: Counter = Counter()
    histogram: Counter = Counter()
    tokens: Counter = Counter()
    total = 0
    for rec in records:
        by_type[str(rec.extras.get("image_type", "unspecified"))] += 1
        histogram[len(rec.entries)] += 1
        total += len(rec.entries)
        for entry in rec.entries:
            tokens[entry.text] += 1
    top = sorted(tokens.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    return CorpusStats(
        n_records=len(records),
        total_entries=total,
        records_by_type=dict(by_type),
        entry_count_histogram=dict(histogram),
        top_tokens=top,
    )
