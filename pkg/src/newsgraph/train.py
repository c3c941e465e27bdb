"""Training loops: self-supervised pre-training and supervised fine-tuning.

Every run is a pure function of (corpus, config): parameter init, batch
shuffling, masking and pair sampling all derive from the config seed, so
repeated runs produce bit-identical weights and logs.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .encoder import (
    EncoderConfig,
    EncoderParams,
    classify_readout,
    encode,
    load_checkpoint,
    save_checkpoint,
)
from .graph import Corpus
from .objectives import (
    build_context_pairs,
    build_masking_batch,
    classification_loss,
    context_loss,
    count_loss,
    masking_loss,
)
from .optim import Adam

PRETRAIN_OBJECTIVES = ("node_mask", "context_pred", "retweet_count")
OBJECTIVES = PRETRAIN_OBJECTIVES + ("finetune",)

# the context-side encoder gets an independent init stream
_CONTEXT_SEED_OFFSET = 101


@dataclass
class TrainConfig:
    objective: str
    epochs: int | None = None  # None -> objective default, see resolve_epochs
    batch_size: int = 128
    lr: float = 0.001
    seed: int = 42
    hidden_dim: int = 64
    n_layers: int = 2
    n_heads: int = 2
    init_checkpoint: str | None = None
    head_reinit: bool = False
    train_count: int | None = None
    # after context_pred, which side's weights are kept
    context_carry: str = "article"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(
                f"objective must be one of {OBJECTIVES}, got {self.objective!r}"
            )
        # epochs=0 is a sanctioned no-op: init (or load) and return untrained
        if self.epochs is not None and self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.context_carry not in ("article", "context"):
            raise ValueError(f"context_carry must be article or context, got {self.context_carry!r}")


@dataclass
class RunLog:
    objective: str
    epochs: int
    epoch_losses: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    checkpoint_path: str | None = None
    train_ids: list | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "epochs": self.epochs,
            "epoch_losses": self.epoch_losses,
            "epoch_seconds": self.epoch_seconds,
            "checkpoint_path": self.checkpoint_path,
            "train_ids": self.train_ids,
            "config": self.config,
        }


def resolve_epochs(cfg: TrainConfig, corpus_size: int) -> int:
    """Objective defaults: 50 for node-level tasks and fine-tuning; graph-level
    pre-training runs 25 on small corpora (<= 1000 graphs) and 50 on large."""
    if cfg.epochs is not None:
        return cfg.epochs
    if cfg.objective == "retweet_count":
        return 25 if corpus_size <= 1000 else 50
    return 50


def _config_echo(cfg: TrainConfig, epochs: int) -> dict:
    return {
        "objective": cfg.objective,
        "epochs": epochs,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "seed": cfg.seed,
        "hidden_dim": cfg.hidden_dim,
        "n_layers": cfg.n_layers,
        "n_heads": cfg.n_heads,
        "init_checkpoint": cfg.init_checkpoint,
        "head_reinit": cfg.head_reinit,
        "train_count": cfg.train_count,
        "context_carry": cfg.context_carry,
    }


def _load_or_init(cfg: TrainConfig, corpus: Corpus) -> EncoderParams:
    if cfg.init_checkpoint:
        params = load_checkpoint(
            cfg.init_checkpoint, head_reinit=cfg.head_reinit, head_seed=cfg.seed
        )
        if params.config.feature_dim != corpus.feature_dim:
            raise ValueError(
                f"checkpoint feature_dim {params.config.feature_dim} != "
                f"corpus feature_dim {corpus.feature_dim}"
            )
        return params
    ecfg = EncoderConfig(
        feature_dim=corpus.feature_dim,
        hidden_dim=cfg.hidden_dim,
        n_layers=cfg.n_layers,
        n_heads=cfg.n_heads,
    )
    return EncoderParams.init(ecfg, seed=cfg.seed)


def _batches(order: np.ndarray, batch_size: int, merge_trailing_singleton: bool):
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    # a 1-graph batch cannot host negative pair sampling; fold it into the
    # previous batch instead of failing the epoch
    if merge_trailing_singleton and len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def _check_finite(value: float, objective: str, epoch: int) -> None:
    if not np.isfinite(value):
        raise RuntimeError(
            f"{objective} training diverged: non-finite loss in epoch {epoch}"
        )


def pretrain(corpus: Corpus, cfg: TrainConfig, checkpoint_path=None):
    """Run one self-supervised objective; returns (params, RunLog)."""
    if cfg.objective not in PRETRAIN_OBJECTIVES:
        raise ValueError(f"pretrain cannot run objective {cfg.objective!r}")
    if len(corpus) == 0:
        raise ValueError("pretrain needs a nonempty corpus")
    epochs = resolve_epochs(cfg, len(corpus))
    params = _load_or_init(cfg, corpus)
    trained = [params]
    if cfg.objective == "context_pred":
        ctx_cfg = params.config
        trained.append(EncoderParams.init(ctx_cfg, seed=cfg.seed + _CONTEXT_SEED_OFFSET))
    opt = Adam([t for p in trained for t in p.all()], lr=cfg.lr)
    all_tensors = [t for p in trained for t in p.all()]

    log = RunLog(cfg.objective, epochs, config=_config_echo(cfg, epochs))
    graphs = corpus.graphs
    for epoch in range(epochs):
        t0 = time.monotonic()
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(graphs))
        chunks = _batches(order, cfg.batch_size, cfg.objective == "context_pred")
        total, n_seen = 0.0, 0
        for chunk in chunks:
            batch = [graphs[i] for i in chunk]
            with Tape() as tape:
                if cfg.objective == "node_mask":
                    items = [build_masking_batch(g, rng) for g in batch]
                    items = [b for b in items if b is not None]
                    if not items:
                        continue
                    loss = masking_loss(items, params)
                elif cfg.objective == "context_pred":
                    pairs = build_context_pairs(batch, rng)
                    loss = context_loss(pairs, trained[0], trained[1])
                else:
                    loss = count_loss(batch, params)
            tape.backward(loss, params=all_tensors)
            opt.step()
            value = loss.item()
            _check_finite(value, cfg.objective, epoch)
            total += value * len(batch)
            n_seen += len(batch)
        log.epoch_losses.append(total / max(n_seen, 1))
        log.epoch_seconds.append(time.monotonic() - t0)

    if cfg.objective == "context_pred" and cfg.context_carry == "context":
        params = trained[1]
    if checkpoint_path is not None:
        save_checkpoint(params, checkpoint_path)
        log.checkpoint_path = str(checkpoint_path)
    return params, log


def finetune(corpus: Corpus, cfg: TrainConfig, checkpoint_path=None):
    """Supervised classification training; returns (params, RunLog)."""
    if cfg.objective != "finetune":
        raise ValueError(f"finetune cannot run objective {cfg.objective!r}")
    if len(corpus) == 0:
        raise ValueError("finetune needs a nonempty corpus")
    graphs = list(corpus.graphs)
    train_ids = None
    if cfg.train_count is not None:
        if not 1 <= cfg.train_count <= len(graphs):
            raise ValueError(
                f"train_count {cfg.train_count} outside [1, {len(graphs)}]"
            )
        rng = np.random.default_rng([cfg.seed, 0x5E1EC7])
        chosen = np.sort(rng.choice(len(graphs), size=cfg.train_count, replace=False))
        graphs = [graphs[i] for i in chosen]
        train_ids = [g.id for g in graphs]
    for g in graphs:
        if g.label is None:
            raise ValueError(f"graph {g.id} has no label; fine-tuning requires labels")

    epochs = resolve_epochs(cfg, len(graphs))
    params = _load_or_init(cfg, corpus)
    opt = Adam(params.all(), lr=cfg.lr)
    log = RunLog(cfg.objective, epochs, train_ids=train_ids,
                 config=_config_echo(cfg, epochs))
    for epoch in range(epochs):
        t0 = time.monotonic()
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(graphs))
        total, n_seen = 0.0, 0
        for chunk in _batches(order, cfg.batch_size, False):
            batch = [graphs[i] for i in chunk]
            with Tape() as tape:
                loss = classification_loss(batch, params)
            tape.backward(loss, params=params.all())
            opt.step()
            value = loss.item()
            _check_finite(value, cfg.objective, epoch)
            total += value * len(batch)
            n_seen += len(batch)
        log.epoch_losses.append(total / max(n_seen, 1))
        log.epoch_seconds.append(time.monotonic() - t0)

    if checkpoint_path is not None:
        save_checkpoint(params, checkpoint_path)
        log.checkpoint_path = str(checkpoint_path)
    return params, log


def predict(corpus: Corpus, params: EncoderParams):
    """Per-graph (probability of label 1, predicted label); deterministic."""
    if params.config.feature_dim != corpus.feature_dim:
        raise ValueError(
            f"checkpoint feature_dim {params.config.feature_dim} != "
            f"corpus feature_dim {corpus.feature_dim}"
        )
    probs = np.zeros(len(corpus))
    preds = np.zeros(len(corpus), dtype=np.int64)
    for i, g in enumerate(corpus.graphs):
        logits = classify_readout(encode(g, params), params)
        p = ad.softmax_rows(logits).data[0]
        probs[i] = p[1]
        preds[i] = int(np.argmax(p))
    return probs, preds
