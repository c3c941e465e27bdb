"""Self-supervised pre-training objectives and the supervised loss.

Three pre-training signals: reconstruct masked post features, decide whether
an article graph and a context graph belong together, and regress the
log-scaled retweet count. Fine-tuning is plain 2-way cross-entropy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import (
    EncoderParams,
    classify_readout,
    context_head,
    count_readout,
    encode,
    mean_pool,
    recon_head,
)
from .graph import HeteroGraph, context_subgraph, retweet_count

MASK_VALUE = 1.0


@dataclass
class MaskingBatch:
    graph: HeteroGraph
    mask_idx: np.ndarray
    targets: np.ndarray  # original rows, (len(mask_idx), d)


def build_masking_batch(g: HeteroGraph, rng) -> MaskingBatch | None:
    """Mask 15% of post rows (at least one) with the constant 1.0.

    Only post features are ever masked. Returns None for graphs without
    posts; that is a skip signal, not a fault.
    """
    n_p = g.n_posts
    if n_p < 1:
        return None
    # integer floor of 0.15*n_p; float 0.15 rounds down at e.g. n_p=60
    n_mask = max(1, (15 * n_p) // 100)
    mask_idx = np.sort(rng.choice(n_p, size=n_mask, replace=False)).astype(np.int64)
    targets = g.post_x[mask_idx].copy()
    masked_x = g.post_x.copy()
    masked_x[mask_idx] = MASK_VALUE
    masked = HeteroGraph(
        id=g.id,
        label=g.label,
        article_x=g.article_x,
        post_x=masked_x,
        post_subtype=g.post_subtype,
        user_x=g.user_x,
        edges=g.edges,
    )
    return MaskingBatch(graph=masked, mask_idx=mask_idx, targets=targets)


def masking_loss(batch, params: EncoderParams) -> Tensor:
    """MSE between reconstructed and original features, masked rows only.

    Accepts one MaskingBatch or a list (mean over the list).
    """
    if isinstance(batch, MaskingBatch):
        batch = [batch]
    if not batch:
        raise ValueError("masking_loss needs at least one batch element")
    losses = []
    for b in batch:
        h = encode(b.graph, params)
        rows = ad.gather_rows(h.post, b.mask_idx)
        losses.append(ad.mse_loss(recon_head(rows, params), b.targets))
    return _mean_scalars(losses)


@dataclass
class ContextPair:
    article_graph: HeteroGraph
    context_graph: HeteroGraph
    label: int  # 1 = same news item, 0 = mismatched


def build_context_pairs(pool, rng) -> list:
    """One positive and one negative pair per graph, order shuffled by rng."""
    pool = list(pool)
    if len(pool) < 2:
        raise ValueError(f"context pairs need a pool of >= 2 graphs, got {len(pool)}")
    pairs = []
    for i, g in enumerate(pool):
        pairs.append(ContextPair(g, context_subgraph(g), 1))
        j = int(rng.integers(0, len(pool) - 1))
        if j >= i:
            j += 1
        pairs.append(ContextPair(g, context_subgraph(pool[j]), 0))
    order = rng.permutation(len(pairs))
    return [pairs[k] for k in order]


def context_loss(pairs, article_params: EncoderParams,
                 context_params: EncoderParams) -> Tensor:
    """Binary cross-entropy on pooled-pair match logits.

    Each side is encoded by its own parameter set and mean-pooled over post
    and user nodes; the match head lives with the article-side parameters.
    """
    if not pairs:
        raise ValueError("context_loss needs at least one pair")
    logits = []
    labels = np.zeros((len(pairs), 1))
    for k, pair in enumerate(pairs):
        h_a = encode(pair.article_graph, article_params)
        h_c = encode(pair.context_graph, context_params)
        pooled = ad.concat_cols([mean_pool(h_a), mean_pool(h_c)])
        logits.append(context_head(pooled, article_params))
        labels[k, 0] = pair.label
    return ad.bce_with_logits(ad.concat_rows(logits), labels)


def count_target(g: HeteroGraph) -> float:
    """ln(1 + retweet count); a pure function of the subtype metadata."""
    return float(np.log1p(retweet_count(g)))


def count_loss(graphs, params: EncoderParams) -> Tensor:
    """MSE of the count head against log-scaled retweet counts."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("count_loss needs at least one graph")
    preds = []
    targets = np.zeros((len(graphs), 1))
    for k, g in enumerate(graphs):
        h = encode(g, params)
        preds.append(count_readout(h, params))
        targets[k, 0] = count_target(g)
    return ad.mse_loss(ad.concat_rows(preds), targets)


def classification_loss(graphs, params: EncoderParams) -> Tensor:
    """Mean 2-way cross-entropy over graph labels."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("classification_loss needs at least one graph")
    for g in graphs:
        if g.label is None:
            raise ValueError(f"graph {g.id} has no label; fine-tuning requires labels")
    logits = [classify_readout(encode(g, params), params) for g in graphs]
    labels = np.array([g.label for g in graphs])
    return ad.softmax_cross_entropy(ad.concat_rows(logits), labels)


def _mean_scalars(losses) -> Tensor:
    total = losses[0]
    for x in losses[1:]:
        total = ad.add(total, x)
    return ad.scale(total, 1.0 / len(losses))
