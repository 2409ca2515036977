"""Figure rendering for the command-line report paths.

Every function writes PNG files next to the delimited output and returns
the written paths, so callers can list them on stdout.  The Agg backend
keeps this usable on headless machines.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

__all__ = ["corpus_figures", "loss_curve", "eval_items_figure"]


def corpus_figures(stats, out_dir: str | Path) -> list[Path]:
    """Entry-count histogram and top-token bar chart for a corpus."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    counts = sorted(stats.entry_count_histogram.items())
    ax.bar([k for k, _ in counts], [v for _, v in counts], color="#4878b0")
    ax.set_xlabel("entries per record")
    ax.set_ylabel("records")
    ax.set_title(f"{stats.n_records} records, {stats.total_entries} entries")
    path = out_dir / "entry_histogram.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    if stats.top_tokens:
        fig, ax = plt.subplots(figsize=(6, 4))
        labels = [repr(t) for t, _ in stats.top_tokens]
        ax.barh(range(len(labels)), [c for _, c in stats.top_tokens], color="#c65d52")
        ax.set_yticks(range(len(labels)))
        ax.set_yticklabels(labels)
        ax.invert_yaxis()  # most frequent on top
        ax.set_xlabel("occurrences")
        ax.set_title("most frequent tokens")
        path = out_dir / "top_tokens.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def loss_curve(metrics_rows, out_path: str | Path) -> Path:
    """Loss (left axis) and learning rate (right axis) against step."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    steps = [row["step"] for row in metrics_rows]
    losses = [row["loss"] for row in metrics_rows]
    lrs = [row["lr"] for row in metrics_rows]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, losses, color="#4878b0", label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(steps, lrs, color="#c65d52", alpha=0.6, label="lr")
    ax2.set_ylabel("learning rate")
    ax.set_title("training")
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return out_path


_ITEM_FIELDS = ("fg_iou", "average_precision", "normalized")


def eval_items_figure(report, out_path: str | Path) -> Path:
    """Histogram of the per-item scores behind an evaluation report."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    values = None
    for name in _ITEM_FIELDS:
        if report.items and name in report.items[0]:
            values = [it[name] for it in report.items]
            break
    if values is None:
        values = [report.value]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(values, bins=min(20, max(5, len(values) // 4 + 1)), color="#4878b0")
    ax.axvline(report.value, color="#c65d52", linestyle="--", label="mean")
    ax.set_xlabel(report.metric)
    ax.set_ylabel("items")
    ax.set_title(f"{report.metric} = {report.value:.4f}")
    ax.legend()
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return out_path
