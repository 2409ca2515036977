"""Training loop and the synthetic glyph corpus that exercises it."""

from .loop import (
    AdamWOptimizer,
    SgdOptimizer,
    Stage,
    TrainConfig,
    TrainResult,
    batch_loss_and_grads,
    cosine_lr,
    load_train_config,
    make_optimizer,
    make_stub,
    parse_train_config,
    train,
    train_step,
)
from .synth import (
    GLYPH_CHARS,
    SLOT,
    SyntheticCorpusSpec,
    generate_synthetic_corpus,
    glyph_stencil,
    make_glyph_vocab,
)

__all__ = [
    "AdamWOptimizer",
    "SgdOptimizer",
    "Stage",
    "TrainConfig",
    "TrainResult",
    "batch_loss_and_grads",
    "cosine_lr",
    "load_train_config",
    "make_optimizer",
    "make_stub",
    "parse_train_config",
    "train",
    "train_step",
    "GLYPH_CHARS",
    "SLOT",
    "SyntheticCorpusSpec",
    "generate_synthetic_corpus",
    "glyph_stencil",
    "make_glyph_vocab",
]
