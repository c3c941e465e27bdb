"""Heterogeneous graph transformer encoder, pooling readouts, task heads.

Each layer projects nodes through type-specific key/query/value maps, then
for every typed edge (including materialized reverse types) transforms keys
and values through edge-type-specific matrices, scores multi-head dot-product
attention, normalizes per target node over all incoming edges of every type,
and aggregates messages. Output projection of the GELU-transformed aggregate
plus a residual gives the next representation.

Per-node-set projections run through the row-stable matmul path so a node
with no edges cannot perturb any other node's embedding at the bit level.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import EDGE_TYPES, ENDPOINTS, HeteroGraph

NODE_SETS = ("article", "post", "user")
REV_PREFIX = "rev_"


class CheckpointError(ValueError):
    """Raised when a checkpoint file fails structural verification."""


def reverse_type(etype: str) -> str:
    return REV_PREFIX + etype


def default_edge_types() -> tuple:
    return EDGE_TYPES + tuple(reverse_type(e) for e in EDGE_TYPES)


def endpoint_sets(etype: str) -> tuple:
    """(source node set, target node set) for canonical or reversed types."""
    if etype.startswith(REV_PREFIX):
        src, dst = ENDPOINTS[etype[len(REV_PREFIX):]]
        return dst, src
    return ENDPOINTS[etype]


@dataclass(frozen=True)
class EncoderConfig:
    feature_dim: int
    hidden_dim: int = 64
    n_layers: int = 2
    n_heads: int = 2
    edge_types: tuple = default_edge_types()

    def __post_init__(self):
        object.__setattr__(self, "edge_types", tuple(self.edge_types))
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}"
            )
        for e in self.edge_types:
            endpoint_sets(e)  # rejects unknown names

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads


def shape_table(cfg: EncoderConfig) -> dict:
    """Canonical parameter name -> shape, in fixed order."""
    d, h = cfg.feature_dim, cfg.hidden_dim
    table = {}
    for t in NODE_SETS:
        table[f"input.{t}.w"] = (d, h)
        table[f"input.{t}.b"] = (1, h)
    for layer in range(cfg.n_layers):
        for t in NODE_SETS:
            for proj in ("k", "q", "v", "out"):
                table[f"layer{layer}.{t}.{proj}_w"] = (h, h)
                table[f"layer{layer}.{t}.{proj}_b"] = (1, h)
        for e in cfg.edge_types:
            table[f"layer{layer}.edge.{e}.att"] = (h, h)
            table[f"layer{layer}.edge.{e}.msg"] = (h, h)
            table[f"layer{layer}.edge.{e}.prior"] = (1, 1)
    table.update(head_shape_table(cfg))
    return table


def head_shape_table(cfg: EncoderConfig) -> dict:
    d, h = cfg.feature_dim, cfg.hidden_dim
    return {
        "head.recon.w": (h, d),
        "head.recon.b": (1, d),
        "head.context.w": (2 * h, 1),
        "head.context.b": (1, 1),
        "head.count.w": (3 * h, 1),
        "head.count.b": (1, 1),
        "head.cls.w": (3 * h, 2),
        "head.cls.b": (1, 2),
    }


def _draw(rng, name: str, shape: tuple) -> np.ndarray:
    r, c = shape
    if name.endswith(".b"):
        return np.zeros(shape)
    if name.endswith(".prior"):
        return np.ones(shape)
    return rng.standard_normal(shape) / math.sqrt(r)


def _init_heads(cfg: EncoderConfig, head_seed: int) -> dict:
    rng = np.random.default_rng([head_seed, 1])
    return {
        name: Tensor(_draw(rng, name, shape), requires_grad=True)
        for name, shape in head_shape_table(cfg).items()
    }


class EncoderParams:
    """Named parameter tensors for one encoder, in canonical order."""

    def __init__(self, config: EncoderConfig, tensors: dict, head_seed: int):
        self.config = config
        self.tensors = tensors
        self.head_seed = head_seed

    @staticmethod
    def init(config: EncoderConfig, seed: int, head_seed=None) -> "EncoderParams":
        if head_seed is None:
            head_seed = seed
        rng = np.random.default_rng([seed, 0])
        tensors = {}
        for name, shape in shape_table(config).items():
            if name.startswith("head."):
                continue
            tensors[name] = Tensor(_draw(rng, name, shape), requires_grad=True)
        tensors.update(_init_heads(config, head_seed))
        return EncoderParams(config, _canonical_order(config, tensors), head_seed)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def all(self) -> list:
        return list(self.tensors.values())

    def copy(self) -> "EncoderParams":
        tensors = {
            name: Tensor(t.data.copy(), requires_grad=True)
            for name, t in self.tensors.items()
        }
        return EncoderParams(self.config, tensors, self.head_seed)


def _canonical_order(config: EncoderConfig, tensors: dict) -> dict:
    return {name: tensors[name] for name in shape_table(config)}


# --------------------------------------------------------------------------
# graph preparation


class GraphView:
    """Index arrays for one graph, grouped by target node set."""

    def __init__(self, sizes: dict, feats: dict, incoming: dict):
        self.sizes = sizes
        self.feats = feats
        self.incoming = incoming  # node set -> list of (etype, src_set, src, dst)


def graph_view(g: HeteroGraph, cfg: EncoderConfig) -> GraphView:
    """Prepare index arrays; materializes a reversed copy of every edge group."""
    groups = {}
    for etype, pairs in g.edges.items():
        if etype not in cfg.edge_types:
            raise ValueError(f"graph has edge type {etype!r} absent from encoder config")
        if not pairs:
            continue
        src = np.array([p[0] for p in pairs], dtype=np.int64)
        dst = np.array([p[1] for p in pairs], dtype=np.int64)
        groups[etype] = (src, dst)
        rev = reverse_type(etype)
        if rev in cfg.edge_types:
            groups[rev] = (dst, src)
    incoming = {t: [] for t in NODE_SETS}
    for etype in cfg.edge_types:  # fixed order keeps concat layout deterministic
        if etype not in groups:
            continue
        src, dst = groups[etype]
        src_set, dst_set = endpoint_sets(etype)
        incoming[dst_set].append((etype, src_set, src, dst))
    sizes = {"article": g.article_x.shape[0], "post": g.n_posts, "user": g.n_users}
    feats = {"article": g.article_x, "post": g.post_x, "user": g.user_x}
    return GraphView(sizes, feats, incoming)


@dataclass
class NodeEmbeddings:
    article: Tensor
    post: Tensor
    user: Tensor

    def by_set(self, name: str) -> Tensor:
        return getattr(self, name)


# --------------------------------------------------------------------------
# forward passes


def _zeros(r: int, c: int) -> Tensor:
    return Tensor(np.zeros((r, c)))


def hgt_layer(view: GraphView, h_in: dict, params: EncoderParams, layer: int,
              record=None) -> dict:
    """One message-passing layer; h_in maps node set -> (n, hidden) tensor."""
    cfg = params.config
    dh = cfg.head_dim
    inv_sqrt_dh = 1.0 / math.sqrt(dh)

    key, query, value = {}, {}, {}
    for t in NODE_SETS:
        pre = f"layer{layer}.{t}."
        key[t] = ad.add_rowvec(
            ad.matmul(h_in[t], params[pre + "k_w"], row_stable=True), params[pre + "k_b"]
        )
        query[t] = ad.add_rowvec(
            ad.matmul(h_in[t], params[pre + "q_w"], row_stable=True), params[pre + "q_b"]
        )
        value[t] = ad.add_rowvec(
            ad.matmul(h_in[t], params[pre + "v_w"], row_stable=True), params[pre + "v_b"]
        )

    out = {}
    for t in NODE_SETS:
        n_t = view.sizes[t]
        edge_groups = view.incoming[t]
        if n_t == 0 or not edge_groups:
            agg = _zeros(n_t, cfg.hidden_dim)
        else:
            scores, messages, dsts = [], [], []
            for etype, src_set, src, dst in edge_groups:
                epre = f"layer{layer}.edge.{etype}."
                k_e = ad.matmul(
                    ad.gather_rows(key[src_set], src), params[epre + "att"],
                    row_stable=True,
                )
                m_e = ad.matmul(
                    ad.gather_rows(value[src_set], src), params[epre + "msg"],
                    row_stable=True,
                )
                q_e = ad.gather_rows(query[t], dst)
                dot = ad.sum_col_blocks(ad.mul(k_e, q_e), dh)  # (edges, heads)
                scores.append(ad.scale_by(dot, params[epre + "prior"], inv_sqrt_dh))
                messages.append(m_e)
                dsts.append(dst)
            all_scores = ad.concat_rows(scores)
            all_msgs = ad.concat_rows(messages)
            all_dst = np.concatenate(dsts)
            attn = ad.segment_softmax(all_scores, all_dst, n_t)
            if record is not None:
                record.append(
                    {
                        "layer": layer,
                        "node_set": t,
                        "attn": attn.data.copy(),
                        "dst": all_dst.copy(),
                        "n_nodes": n_t,
                    }
                )
            weighted = ad.mul(all_msgs, ad.repeat_cols(attn, dh))
            agg = ad.scatter_sum_rows(weighted, all_dst, n_t)
        pre = f"layer{layer}.{t}."
        projected = ad.add_rowvec(
            ad.matmul(ad.gelu(agg), params[pre + "out_w"], row_stable=True),
            params[pre + "out_b"],
        )
        out[t] = ad.add(projected, h_in[t])
    return out


def encode(g, params: EncoderParams, record=None) -> NodeEmbeddings:
    """Input projections then every layer; accepts a graph or prepared view."""
    cfg = params.config
    view = g if isinstance(g, GraphView) else graph_view(g, cfg)
    if view.feats["article"].shape[1] != cfg.feature_dim:
        raise ValueError(
            f"graph feature dim {view.feats['article'].shape[1]} != "
            f"config feature_dim {cfg.feature_dim}"
        )
    h = {}
    for t in NODE_SETS:
        x = Tensor(view.feats[t])
        h[t] = ad.add_rowvec(
            ad.matmul(x, params[f"input.{t}.w"], row_stable=True),
            params[f"input.{t}.b"],
        )
    for layer in range(cfg.n_layers):
        h = hgt_layer(view, h, params, layer, record=record)
    return NodeEmbeddings(article=h["article"], post=h["post"], user=h["user"])


def mean_pool(h: NodeEmbeddings, node_sets=("post", "user")) -> Tensor:
    """Mean of all rows across the selected sets; zero vector if all are empty."""
    parts = [h.by_set(s) for s in node_sets if h.by_set(s).rows > 0]
    if not parts:
        width = h.by_set(node_sets[0]).cols
        return _zeros(1, width)
    if len(parts) == 1:
        return ad.mean_rows(parts[0])
    return ad.mean_rows(ad.concat_rows(parts))


def _pooled_readout(h: NodeEmbeddings) -> Tensor:
    if h.article.rows != 1:
        raise ad.ShapeError(
            f"readout needs exactly 1 article node, got {h.article.rows}"
        )
    return ad.concat_cols(
        [h.article, mean_pool(h, ("post",)), mean_pool(h, ("user",))]
    )


def classify_readout(h: NodeEmbeddings, params: EncoderParams) -> Tensor:
    """[article emb | post pool | user pool] through the 2-way head: (1, 2) logits."""
    x = _pooled_readout(h)
    return ad.add_rowvec(ad.matmul(x, params["head.cls.w"]), params["head.cls.b"])


def count_readout(h: NodeEmbeddings, params: EncoderParams) -> Tensor:
    """Same pooled readout through the 1-output count head: (1, 1)."""
    x = _pooled_readout(h)
    return ad.add_rowvec(ad.matmul(x, params["head.count.w"]), params["head.count.b"])


def recon_head(rows: Tensor, params: EncoderParams) -> Tensor:
    """Map (m, hidden) embeddings back to (m, feature_dim)."""
    return ad.add_rowvec(ad.matmul(rows, params["head.recon.w"]), params["head.recon.b"])


def context_head(pooled_pair: Tensor, params: EncoderParams) -> Tensor:
    """Map (n, 2*hidden) concatenated pools to (n, 1) match logits."""
    return ad.add_rowvec(
        ad.matmul(pooled_pair, params["head.context.w"]), params["head.context.b"]
    )


# --------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def _config_dict(cfg: EncoderConfig) -> dict:
    return {
        "feature_dim": cfg.feature_dim,
        "hidden_dim": cfg.hidden_dim,
        "n_layers": cfg.n_layers,
        "n_heads": cfg.n_heads,
        "edge_types": list(cfg.edge_types),
    }


def save_checkpoint(params: EncoderParams, path) -> None:
    obj = {
        "format_version": CHECKPOINT_VERSION,
        "config": _config_dict(params.config),
        "params": {
            name: {"shape": list(t.shape), "data": t.data.ravel().tolist()}
            for name, t in params.tensors.items()
        },
        "head_seed": params.head_seed,
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_checkpoint(path, head_reinit: bool = False, head_seed=None) -> EncoderParams:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"malformed checkpoint JSON: {exc.msg}") from exc
    if obj.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {obj.get('format_version')!r}"
        )
    c = obj["config"]
    cfg = EncoderConfig(
        feature_dim=c["feature_dim"],
        hidden_dim=c["hidden_dim"],
        n_layers=c["n_layers"],
        n_heads=c["n_heads"],
        edge_types=tuple(c["edge_types"]),
    )
    expected = shape_table(cfg)
    stored = obj["params"]
    for name, shape in expected.items():
        if name not in stored:
            raise CheckpointError(f"missing parameter {name}")
        got = tuple(stored[name]["shape"])
        if got != shape:
            raise CheckpointError(
                f"shape mismatch for {name}: file has {got}, config needs {shape}"
            )
        if len(stored[name]["data"]) != shape[0] * shape[1]:
            raise CheckpointError(
                f"shape mismatch for {name}: data length "
                f"{len(stored[name]['data'])} != {shape[0] * shape[1]}"
            )
    for name in stored:
        if name not in expected:
            raise CheckpointError(f"unexpected parameter {name}")
    stored_head_seed = obj["head_seed"]
    tensors = {}
    for name, shape in expected.items():
        arr = np.array(stored[name]["data"], dtype=np.float64).reshape(shape)
        tensors[name] = Tensor(arr, requires_grad=True)
    if head_reinit:
        if head_seed is None:
            head_seed = stored_head_seed
        tensors.update(_init_heads(cfg, head_seed))
        return EncoderParams(cfg, _canonical_order(cfg, tensors), head_seed)
    return EncoderParams(cfg, tensors, stored_head_seed)
