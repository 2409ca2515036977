"""Umbrella command-line entrypoint.

Subcommands route to the library modules: corpus inspection, training,
evaluation, the query service, and a self-contained demo dataset.
Report paths print tab-delimited rows and render figures next to them.
Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from tokenforge.corpus.bpe import BpeVocab
from tokenforge.corpus.records import decode_record, encode_record
from tokenforge.corpus.render import render_overlay
from tokenforge.corpus.stats import corpus_stats
from tokenforge.corpus.validate import validate_record
from tokenforge.errors import EmptyCorpus, IoFailure, TokenforgeError
from tokenforge.evalkit import edit_protocol, retrieval_protocol, seg_protocol
from tokenforge.model import ModelConfig, load_checkpoint

__all__ = ["main", "build_parser"]


def _load_corpus(corpus_dir: str | Path):
    """Read every record metadata file in a directory, sorted by name."""
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise IoFailure(f"corpus directory {corpus_dir} does not exist")
    paths = sorted(p for p in corpus_dir.glob("*.json") if p.name != "vocab.json")
    if not paths:
        raise EmptyCorpus(f"no record metadata under {corpus_dir}")
    return [decode_record(p) for p in paths]


def _load_vocab(path: str | None) -> BpeVocab | None:
    return BpeVocab.load(path) if path else None


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
        print(out)
    else:
        print(text)


# ---------------------------------------------------------------- corpus


def cmd_corpus_validate(args) -> int:
    records = _load_corpus(args.corpus)
    vocab = _load_vocab(args.vocab)
    n_violations = 0
    for path_idx, rec in enumerate(records):
        report = validate_record(rec, vocab)
        for v in report.violations:
            print(f"{path_idx}\tviolation\t{v}")
            n_violations += 1
        for w in report.warnings:
            print(f"{path_idx}\twarning\t{w}")
    print(f"# records={len(records)} violations={n_violations}")
    return 1 if n_violations else 0


def cmd_corpus_stats(args) -> int:
    records = _load_corpus(args.corpus)
    stats = corpus_stats(records, top_k=args.top_k)
    lines = ["token\tcount"]
    lines += [f"{text!r}\t{count}" for text, count in stats.top_tokens]
    lines.append(f"# records={stats.n_records} entries={stats.total_entries}")
    _write_or_print("\n".join(lines), args.out)
    if args.figures:
        from tokenforge.app.reports import corpus_figures

        for path in corpus_figures(stats, args.figures):
            print(path)
    return 0


def cmd_corpus_render(args) -> int:
    record = decode_record(args.record)
    overlay = render_overlay(record)
    PILImage.fromarray(overlay).save(args.out, format="PNG")
    print(args.out)
    return 0


# ----------------------------------------------------------------- train


def cmd_train(args) -> int:
    from tokenforge.app.reports import loss_curve
    from tokenforge.trainer import load_train_config, train

    config = load_train_config(args.config)
    records = _load_corpus(args.corpus)
    if args.model_config:
        try:
            doc = json.loads(Path(args.model_config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IoFailure(f"cannot read model config {args.model_config}: {exc}")
        model_config = ModelConfig.from_json(doc)
    else:
        model_config = ModelConfig()
    vocab = _load_vocab(args.vocab)
    vocab_doc = vocab.to_json() if vocab else None
    result = train(
        config, records, model_config, out_dir=args.out, vocab_doc=vocab_doc
    )
    print(f"final\t{result.final_path}")
    print(f"best\t{result.best_path}")
    print(f"metrics\t{result.metrics_path}")
    if result.metrics:
        print(f"loss\t{result.metrics[-1]['loss']:.6f}")
        print(loss_curve(result.metrics, Path(args.out) / "loss.png"))
    return 0


# ------------------------------------------------------------------ eval


def _emit_report(report, args, item_fields) -> int:
    lines = ["\t".join(item_fields)]
    for it in report.items:
        lines.append("\t".join(str(it[f]) for f in item_fields))
    lines.append(f"# {report.metric}={report.value:.6f}")
    _write_or_print("\n".join(lines), args.out)
    if getattr(args, "json", None):
        Path(args.json).write_text(report.to_json() + "\n")
        print(args.json)
    if getattr(args, "figure", None):
        from tokenforge.app.reports import eval_items_figure

        print(eval_items_figure(report, args.figure))
    return 0


def _checkpoint_params(path):
    params, _ = load_checkpoint(path)
    return params


def cmd_eval_seg(args) -> int:
    params = _checkpoint_params(args.checkpoint)
    records = _load_corpus(args.corpus)
    report = seg_protocol(params, records, threshold=args.threshold)
    return _emit_report(report, args, ("record", "token", "fg_iou"))


def cmd_eval_retrieval(args) -> int:
    params = _checkpoint_params(args.checkpoint)
    records = _load_corpus(args.corpus)
    report = retrieval_protocol(params, records)
    return _emit_report(
        report, args, ("query", "query_text", "n_relevant", "average_precision")
    )


def _read_lines(path: str) -> list[str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read lines from {path}: {exc}")
    return text.splitlines()


def cmd_eval_edit(args) -> int:
    report = edit_protocol(_read_lines(args.pred), _read_lines(args.gt))
    return _emit_report(report, args, ("index", "raw", "normalized"))


# ----------------------------------------------------------------- serve


def cmd_serve(args) -> int:
    from tokenforge.app.http import serve

    serve(checkpoint_path=args.checkpoint, port=args.port, host=args.host)
    return 0


# ------------------------------------------------------------- demo-data


def cmd_demo_data(args) -> int:
    """Synthesize a corpus, train a small model on it, render one overlay."""
    from tokenforge.app.reports import loss_curve
    from tokenforge.trainer import (
        SyntheticCorpusSpec,
        TrainConfig,
        generate_synthetic_corpus,
        make_glyph_vocab,
        train,
    )

    out = Path(args.out)
    spec = SyntheticCorpusSpec(
        image_side=args.side,
        glyphs_per_image=args.glyphs,
        n_records=args.records,
        seed=args.seed,
    )
    records = generate_synthetic_corpus(spec)
    corpus_dir = out / "corpus"
    for i, rec in enumerate(records):
        encode_record(rec, corpus_dir, f"rec{i:04d}")
    vocab = make_glyph_vocab()
    vocab.save(out / "vocab.json")
    print(corpus_dir)
    print(out / "vocab.json")

    model_config = ModelConfig(
        patch_size=8,
        encoder_dim=16,
        encoder_layers=1,
        embed_dim=16,
        vocab_size=len(vocab),
        seed=args.seed,
    )
    config = TrainConfig(
        stage="pretrain",
        epochs=args.epochs,
        batch_size=4,
        lr=3e-3,
        seed=args.seed,
    )
    result = train(
        config, records, model_config, out_dir=out / "model",
        vocab_doc=vocab.to_json(),
    )
    print(result.final_path)
    if result.metrics:
        print(loss_curve(result.metrics, out / "model" / "loss.png"))

    overlay = render_overlay(records[0])
    PILImage.fromarray(overlay.astype(np.uint8)).save(out / "demo.png", format="PNG")
    print(out / "demo.png")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokenforge",
        description="Token-level image-text alignment toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="inspect record corpora")
    corpus_sub = corpus.add_subparsers(dest="corpus_command", required=True)

    p = corpus_sub.add_parser("validate", help="check record invariants")
    p.add_argument("corpus", help="directory of record metadata files")
    p.add_argument("--vocab", help="vocabulary JSON for token id checks")
    p.set_defaults(func=cmd_corpus_validate)

    p = corpus_sub.add_parser("stats", help="corpus summary and figures")
    p.add_argument("corpus")
    p.add_argument("--top-k", type=int, default=20)
    p.add_argument("--out", help="write the delimited table here instead of stdout")
    p.add_argument("--figures", help="directory for rendered figures")
    p.set_defaults(func=cmd_corpus_stats)

    p = corpus_sub.add_parser("render", help="render one record's mask overlay")
    p.add_argument("record", help="record metadata JSON")
    p.add_argument("out", help="output PNG path")
    p.set_defaults(func=cmd_corpus_render)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True, help="key=value training config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint/metrics directory")
    p.add_argument("--model-config", help="model architecture JSON")
    p.add_argument("--vocab", help="vocabulary JSON embedded into checkpoints")
    p.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluation protocols")
    ev_sub = ev.add_subparsers(dest="eval_command", required=True)

    p = ev_sub.add_parser("seg", help="zero-shot foreground segmentation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.add_argument("--json", help="write the full report JSON here")
    p.add_argument("--figure", help="write a score histogram PNG here")
    p.set_defaults(func=cmd_eval_seg)

    p = ev_sub.add_parser("retrieval", help="token-to-image retrieval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.add_argument("--json")
    p.add_argument("--figure")
    p.set_defaults(func=cmd_eval_retrieval)

    p = ev_sub.add_parser("edit", help="normalized edit distance on line files")
    p.add_argument("--pred", required=True, help="predicted lines, one per pair")
    p.add_argument("--gt", required=True, help="target lines, one per pair")
    p.add_argument("--out")
    p.add_argument("--json")
    p.add_argument("--figure")
    p.set_defaults(func=cmd_eval_edit)

    p = sub.add_parser("serve", help="run the HTTP query service")
    p.add_argument("--checkpoint", help="defaults to CHECKPOINT_PATH")
    p.add_argument("--port", type=int, help="defaults to PORT or 8321")
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("demo-data", help="synthetic corpus plus a small checkpoint")
    p.add_argument("out", help="output directory")
    p.add_argument("--records", type=int, default=16)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--glyphs", type=int, default=3)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        code = exc.code
        return int(code) if code is not None else 0
    try:
        return int(args.func(args) or 0)
    except TokenforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
