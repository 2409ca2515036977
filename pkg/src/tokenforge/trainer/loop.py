"""Training loop: staged objectives, optimizers, cosine schedule, logging.

The step couples the full pipeline: images run through the feature
encoder, per-token masks pool features into visual embeddings, and the
alignment objectives compare those against vocabulary embeddings with
in-batch negatives pooled across every record in the batch. Past the
pretraining stage, each image is additionally cropped, compressed into a
visual token sequence, and pushed through the frozen language-model stub
so alignment and next-token supervision can reach the encoder through
the stub's hidden states. All gradients are analytic; every update is
checked finite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path

import numpy as np

from ..abstractor import (
    crop_images,
    flatten_sequence,
    plan_crops,
    token_abstract,
    token_abstract_backward,
)
from ..corpus.records import TokenRecord
from ..errors import Diverged, EmptyBatch, EmptyCorpus, EmptyMask, IoFailure, SpecError
from ..gridops import masked_mean_pool_backward, pool_weights
from ..llmalign import (
    StubConfig,
    StubLLM,
    llm_token_align_loss,
    locate_answer_token,
    next_token_ce,
)
from ..losses import total_alignment_loss
from ..model import (
    ModelConfig,
    ModelParams,
    forward_features,
    forward_features_backward,
    init_params,
    prepare_image,
    save_checkpoint,
    token_embedding,
    zero_grads,
)

__all__ = [
    "Stage",
    "TrainConfig",
    "TrainResult",
    "parse_train_config",
    "load_train_config",
    "cosine_lr",
    "SgdOptimizer",
    "AdamWOptimizer",
    "make_optimizer",
    "make_stub",
    "batch_loss_and_grads",
    "train_step",
    "train",
]


class Stage(Enum):
    Pretrain = "pretrain"
    TokenAlign = "token_align"
    Finetune = "finetune"


@dataclass
class TrainConfig:
    """Flat training configuration.

    `enable_llm_alignment` resolves from the stage when left unset:
    on for TokenAlign, off otherwise; Finetune forces it off and keeps
    only next-token supervision on top of the base alignment.
    """

    stage: Stage = Stage.Pretrain
    epochs: int = 1
    batch_size: int = 4
    lr: float = 1e-2
    optimizer: str = "adamw"
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_dis: float = 1.0
    weight_sim: float = 1.0
    weight_sig: float = 1.0
    weight_llm: float = 1.0
    weight_ce: float = 1.0
    normalize_sig: bool = False
    soft_pool: bool = False
    enable_llm_alignment: bool | None = None
    seed: int = 0
    tile_size: int = 448
    max_tiles: int = 6
    window: int = 4
    stub_hidden: int = 32
    stub_layers: int = 1
    stub_layer_index: int = 1
    stub_seed: int = 0

    def __post_init__(self):
        if isinstance(self.stage, str):
            try:
                self.stage = Stage(self.stage)
            except ValueError:
                raise SpecError(
                    f"unknown stage {self.stage!r}; "
                    f"expected one of {[s.value for s in Stage]}"
                ) from None
        if self.lr <= 0:
            raise SpecError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise SpecError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise SpecError(f"epochs must be nonnegative, got {self.epochs}")
        if self.optimizer not in ("adamw", "sgd"):
            raise SpecError(f"optimizer must be 'adamw' or 'sgd', got {self.optimizer!r}")
        if self.stage is Stage.Finetune:
            self.enable_llm_alignment = False
        elif self.enable_llm_alignment is None:
            self.enable_llm_alignment = self.stage is Stage.TokenAlign


_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _cast(name: str, kind, raw: str):
    if kind is bool or name == "enable_llm_alignment":
        word = raw.lower()
        if word not in _BOOL_WORDS:
            raise SpecError(f"config key {name}: expected a boolean, got {raw!r}")
        return _BOOL_WORDS[word]
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw  # strings and stage values; __post_init__ validates stage


def parse_train_config(text: str) -> TrainConfig:
    """Parse a flat `key = value` document; # starts a comment line."""
    kinds = {
        "stage": str, "epochs": int, "batch_size": int, "lr": float,
        "optimizer": str, "weight_decay": float, "beta1": float, "beta2": float,
        "eps": float, "weight_dis": float, "weight_sim": float, "weight_sig": float,
        "weight_llm": float, "weight_ce": float, "normalize_sig": bool,
        "soft_pool": bool, "enable_llm_alignment": bool, "seed": int,
        "tile_size": int, "max_tiles": int, "window": int, "stub_hidden": int,
        "stub_layers": int, "stub_layer_index": int, "stub_seed": int,
    }
    assert set(kinds) == {f.name for f in fields(TrainConfig)}
    kv = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.strip()
        if not body or body.startswith("#"):
            continue
        if "=" not in body:
            raise SpecError(f"config line {lineno} is not key = value: {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in kinds:
            raise SpecError(f"config line {lineno}: unknown key {key!r}")
        kv[key] = _cast(key, kinds[key], raw)
    return TrainConfig(**kv)


def load_train_config(path: str | Path) -> TrainConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    return parse_train_config(text)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay: base at step 0, exactly 0 at the last step."""
    if total_steps <= 1:
        return base_lr if step == 0 else 0.0
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


class SgdOptimizer:
    """Plain gradient descent; no state, no decay."""

    def step(self, params: ModelParams, grads: dict, lr: float) -> None:
        for name, arr in params.arrays():
            params.set_array(name, arr - lr * grads[name])


class AdamWOptimizer:
    """Adaptive moments with decoupled weight decay on matrix-shaped params."""

    def __init__(self, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr in params.arrays()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.arrays()}

    def step(self, params: ModelParams, grads: dict, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, arr in params.arrays():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + self.eps)
            if arr.ndim >= 2:  # biases and scalars are not decayed
                update = update + self.weight_decay * arr
            params.set_array(name, arr - lr * update)


def make_optimizer(config: TrainConfig, params: ModelParams):
    if config.optimizer == "sgd":
        return SgdOptimizer()
    return AdamWOptimizer(
        params,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )


def make_stub(config: TrainConfig, model_config: ModelConfig) -> StubLLM:
    return StubLLM(
        StubConfig(
            input_dim=model_config.embed_dim,
            hidden_dim=config.stub_hidden,
            vocab_size=model_config.vocab_size,
            layers=config.stub_layers,
            layer_index=config.stub_layer_index,
            seed=config.stub_seed,
        )
    )


def _question_ids(text: str, vocab_size: int) -> list[int]:
    # the stub is frozen random, so any deterministic injection of the
    # question into its id space works as context
    return [ord(ch) % vocab_size for ch in text]


def _answer_entries(record: TokenRecord) -> list:
    entries = sorted(record.entries, key=lambda en: en.index_in_text)
    if [en.index_in_text for en in entries] != list(range(len(entries))):
        raise SpecError(
            "record entries must cover answer token positions 0..n-1 exactly"
        )
    return entries


def batch_loss_and_grads(
    params: ModelParams,
    records: list[TokenRecord],
    config: TrainConfig,
    stub: StubLLM | None = None,
):
    """Composite forward/backward over one batch.

    Returns (loss, grads, parts). Pairs for the base alignment objective
    pool across all records so in-batch negatives cross images.
    Occurrences of the same token id merge into one pair (their pooled
    vectors average); otherwise recurring tokens would act as negatives
    against their own embedding.
    """
    grads = zero_grads(params)
    parts: dict[str, float] = {}
    base_weights = (config.weight_dis, config.weight_sim, config.weight_sig)

    encoded = []
    pooled = []
    token_ids = []
    pool_spans = []  # (record position, pool weights, denom)
    for ri, rec in enumerate(records):
        feats, cache = forward_features(prepare_image(rec.image), params)
        encoded.append((feats, cache, np.zeros_like(feats)))
        fh, fw, _ = feats.shape
        for en in rec.entries:
            if en.token_id is None:
                continue
            mask = rec.token_mask(en)
            if not mask.any():
                continue
            try:
                weights, denom = pool_weights(mask, fh, fw, soft=config.soft_pool)
            except EmptyMask:
                continue  # region vanishes at feature resolution
            pooled.append((feats * weights[:, :, None]).sum(axis=(0, 1)) / denom)
            token_ids.append(en.token_id)
            pool_spans.append((ri, weights, denom))
    if not pooled:
        raise EmptyBatch("no record in the batch offers a non-empty aligned token")

    groups: dict[int, list[int]] = {}
    for i, z in enumerate(token_ids):
        groups.setdefault(z, []).append(i)
    unique_ids = list(groups)
    e = np.stack(
        [np.mean([pooled[i] for i in groups[z]], axis=0) for z in unique_ids]
    )
    t = token_embedding(unique_ids, params)
    out = total_alignment_loss(
        e, t, float(params.k), float(params.b),
        weights=base_weights, normalize_sig=config.normalize_sig,
    )
    loss = out.value
    parts.update(out.parts)
    grads["k"] += out.d_k
    grads["b"] += out.d_b
    for g, z in enumerate(unique_ids):
        members = groups[z]
        d_each = out.d_e[g] / len(members)
        for i in members:
            ri, weights, denom = pool_spans[i]
            d_feats_acc = encoded[ri][2]
            d_feats_acc += masked_mean_pool_backward(d_each, weights, denom)
        grads["embed"][z] += out.d_t[g]

    if config.stage is not Stage.Pretrain:
        if stub is None:
            stub = make_stub(config, params.config)
        llm_total = 0.0
        ce_total = 0.0
        for rec in records:
            plan = plan_crops(
                rec.height, rec.width,
                tile_size=config.tile_size, max_tiles=config.max_tiles,
            )
            crops = crop_images(prepare_image(rec.image), plan)
            grids = []
            crop_caches = []
            for crop in crops:
                c_feats, c_cache = forward_features(crop, params)
                comp, _, a_cache = token_abstract(c_feats, params.special, config.window)
                grids.append(comp)
                crop_caches.append((c_cache, a_cache))
            seq = flatten_sequence(grids)
            entries = _answer_entries(rec)
            answer_ids = [en.token_id for en in entries]
            question_ids = _question_ids(rec.question, params.config.vocab_size)
            hidden, logits, s_cache = stub.forward(seq.tokens, question_ids, answer_ids)

            d_hidden = None
            d_logits = None
            if config.enable_llm_alignment:
                n_v = seq.tokens.shape[0]
                refs = [
                    (
                        locate_answer_token(en, n_v, len(question_ids), len(entries)),
                        rec.token_mask(en),
                    )
                    for en in entries
                ]
                try:
                    a_out, d_h, _ = llm_token_align_loss(
                        hidden, refs, plan, seq.side,
                        float(params.k), float(params.b), weights=base_weights,
                    )
                except EmptyBatch:
                    a_out = None
                if a_out is not None:
                    llm_total += config.weight_llm * a_out.value
                    d_hidden = config.weight_llm * d_h
                    grads["k"] += config.weight_llm * a_out.d_k
                    grads["b"] += config.weight_llm * a_out.d_b
            ce_value, d_ce = next_token_ce(logits, answer_ids)
            ce_total += config.weight_ce * ce_value
            d_logits = config.weight_ce * d_ce

            if d_hidden is not None or d_logits is not None:
                d_visual = stub.backward(d_hidden, d_logits, s_cache)
                cells = seq.side * seq.side
                for g, (c_cache, a_cache) in enumerate(crop_caches):
                    d_comp = d_visual[g * cells : (g + 1) * cells].reshape(
                        seq.side, seq.side, -1
                    )
                    d_feats, d_special = token_abstract_backward(d_comp, a_cache)
                    grads["special"] += d_special
                    forward_features_backward(d_feats, c_cache, params, grads)
        loss += llm_total + ce_total
        parts["llm_align"] = llm_total
        parts["next_token_ce"] = ce_total

    for feats, cache, d_feats in encoded:
        if d_feats.any():
            forward_features_backward(d_feats, cache, params, grads)
    return loss, grads, parts


def train_step(
    params: ModelParams,
    batch: list[TokenRecord],
    config: TrainConfig,
    optimizer=None,
    lr: float | None = None,
    stub: StubLLM | None = None,
):
    """One optimization step; returns (updated params, scalar loss)."""
    loss, grads, _ = batch_loss_and_grads(params, batch, config, stub=stub)
    if not math.isfinite(loss):
        raise Diverged(f"loss is not finite: {loss}")
    updated = params.with_flat(params.flatten())
    opt = optimizer if optimizer is not None else make_optimizer(config, updated)
    opt.step(updated, grads, config.lr if lr is None else lr)
    if not np.isfinite(updated.flatten()).all():
        raise Diverged("a parameter received a non-finite update")
    return updated, loss


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    metrics: list[dict] = field(default_factory=list)
    final_path: Path | None = None
    best_path: Path | None = None
    metrics_path: Path | None = None


def train(
    config: TrainConfig,
    corpus: list[TokenRecord],
    model_config: ModelConfig,
    out_dir: str | Path | None = None,
    vocab_doc: dict | None = None,
) -> TrainResult:
    """Run the staged loop over the corpus with cosine lr decay.

    Logs {step, loss, lr} per step; writes final and best checkpoints
    plus a line-delimited metrics file when out_dir is given. On
    divergence the last good parameters are checkpointed before the
    error propagates.
    """
    if not corpus:
        raise EmptyCorpus("cannot train on an empty corpus")
    params = init_params(model_config)
    stub = None
    if config.stage is not Stage.Pretrain:
        stub = make_stub(config, model_config)
    optimizer = make_optimizer(config, params)
    steps_per_epoch = math.ceil(len(corpus) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    rng = np.random.default_rng(config.seed)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    metrics: list[dict] = []
    best_loss = math.inf
    best_params = params
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(corpus))
        for s in range(steps_per_epoch):
            picked = order[s * config.batch_size : (s + 1) * config.batch_size]
            batch = [corpus[int(i)] for i in picked]
            lr = cosine_lr(step, total_steps, config.lr)
            try:
                params, loss = train_step(
                    params, batch, config, optimizer=optimizer, lr=lr, stub=stub
                )
            except Diverged as exc:
                ckpt_path = None
                if out is not None:
                    ckpt_path = out / "last_good.ckpt"
                    save_checkpoint(params, ckpt_path, vocab_doc)
                raise Diverged(
                    f"step {step}: {exc}",
                    checkpoint_path=str(ckpt_path) if ckpt_path else None,
                ) from exc
            metrics.append({"step": step, "loss": loss, "lr": lr})
            if loss < best_loss:
                best_loss = loss
                best_params = params
            step += 1

    result = TrainResult(params=params, best_params=best_params, metrics=metrics)
    if out is not None:
        result.final_path = out / "final.ckpt"
        result.best_path = out / "best.ckpt"
        result.metrics_path = out / "metrics.jsonl"
        save_checkpoint(params, result.final_path, vocab_doc)
        save_checkpoint(best_params, result.best_path, vocab_doc)
        try:
            with open(result.metrics_path, "w", encoding="utf-8") as fh:
                for row in metrics:
                    fh.write(json.dumps(row) + "\n")
        except OSError as exc:
            raise IoFailure(f"cannot write metrics {result.metrics_path}: {exc}") from exc
    return result
