"""Seeded synthetic corpora shaped like real article-context datasets.

Features are class-conditional Gaussians: a unit label direction (shared
across corpora that share direction_seed) separates the classes by
signal_strength, and domain_shift moves a whole corpus along an orthogonal
direction so cross-corpus transfer is controllable. signal_strength scales
every label-dependent effect, including the structural retweet coupling,
so a zero-signal corpus is label-free by construction.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .graph import Corpus, HeteroGraph


class GenConfigError(ValueError):
    """Raised for configs that cannot produce valid graphs."""


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    n_graphs: int = 100
    feature_dim: int = 768
    label_balance: float = 0.5
    post_count_range: tuple = (5, 60)
    user_count_range: tuple = (5, 50)
    retweet_fraction_mean: float = 0.3
    timeline_fraction_mean: float = 0.2
    signal_strength: float = 2.0
    domain_shift: float = 0.0
    # couples retweet fraction to the label so structural objectives carry signal
    couple_retweets_to_label: bool = True
    retweet_label_coupling: float = 0.2
    # corpora sharing this seed share the label direction
    direction_seed: int = 20240101


def check_config(cfg: GenConfig) -> None:
    if cfg.n_graphs < 0:
        raise GenConfigError(f"n_graphs must be >= 0, got {cfg.n_graphs}")
    if cfg.feature_dim < 2:
        # two orthogonal directions are carved out of the feature space
        raise GenConfigError(f"feature_dim must be >= 2, got {cfg.feature_dim}")
    for name in ("post_count_range", "user_count_range"):
        lo, hi = getattr(cfg, name)
        if not (0 <= lo <= hi):
            raise GenConfigError(f"{name} must satisfy 0 <= min <= max, got ({lo}, {hi})")
    for name in ("label_balance", "retweet_fraction_mean", "timeline_fraction_mean"):
        v = getattr(cfg, name)
        if not 0.0 <= v <= 1.0:
            raise GenConfigError(f"{name} must be in [0, 1], got {v}")
    for name in ("signal_strength", "domain_shift", "retweet_label_coupling"):
        v = getattr(cfg, name)
        if v < 0:
            raise GenConfigError(f"{name} must be >= 0, got {v}")
    if cfg.retweet_fraction_mean > 0 and cfg.post_count_range[1] < 2:
        raise GenConfigError(
            "retweets requested but post_count_range allows at most "
            f"{cfg.post_count_range[1]} posts; a retweet needs a tweet to cite"
        )
    if cfg.post_count_range[1] >= 1 and cfg.user_count_range[0] < 1:
        raise GenConfigError(
            "graphs may contain posts but user_count_range allows 0 users; "
            "every post needs a posting user"
        )


def _directions(cfg: GenConfig):
    rng = np.random.default_rng([cfg.direction_seed])
    label_dir = rng.standard_normal(cfg.feature_dim)
    label_dir /= np.linalg.norm(label_dir)
    raw = rng.standard_normal(cfg.feature_dim)
    shift_dir = raw - (raw @ label_dir) * label_dir
    shift_dir /= np.linalg.norm(shift_dir)
    return label_dir, shift_dir


def _one_graph(cfg: GenConfig, i: int, name: str, label_dir, shift_dir) -> HeteroGraph:
    rng = np.random.default_rng([cfg.seed, i])
    label = 1 if rng.random() < cfg.label_balance else 0

    pmin, pmax = cfg.post_count_range
    umin, umax = cfg.user_count_range
    n_posts = int(rng.integers(pmin, pmax + 1))
    n_users = int(rng.integers(umin, umax + 1))

    # the coupling scales with signal_strength (factor 1 at the default 2.0)
    # so zero-signal corpora carry no structural label signal either
    shift = (
        cfg.retweet_label_coupling * (label - 0.5) * (cfg.signal_strength / 2.0)
        if cfg.couple_retweets_to_label
        else 0.0
    )
    p_rt = min(max(cfg.retweet_fraction_mean + shift, 0.0), 1.0)
    p_tl = min(cfg.timeline_fraction_mean, 1.0 - p_rt)
    p_tw = 1.0 - p_rt - p_tl
    subtype = ["tweet", "retweet", "timeline"]
    kinds = [subtype[k] for k in rng.choice(3, size=n_posts, p=[p_tw, p_rt, p_tl])]
    if n_posts > 0:
        kinds[0] = "tweet"  # a retweet always has a tweet to cite

    edges = {k: [] for k in (
        "tweet_cites_article",
        "user_posts_tweet",
        "user_posts_retweet",
        "retweet_cites_tweet",
        "user_posts_timeline",
    )}
    tweets = [j for j, k in enumerate(kinds) if k == "tweet"]
    for j, kind in enumerate(kinds):
        if kind == "tweet":
            edges["tweet_cites_article"].append((j, 0))
        elif kind == "retweet":
            edges["retweet_cites_tweet"].append((j, int(rng.choice(tweets))))
        user = int(rng.integers(0, n_users))
        edges[f"user_posts_{kind}"].append((user, j))
    edges = {k: v for k, v in edges.items() if v}

    mean = (2 * label - 1) * (cfg.signal_strength / 2.0) * label_dir
    mean = mean + cfg.domain_shift * shift_dir
    d = cfg.feature_dim
    return HeteroGraph(
        id=f"{name}_{i:05d}",
        label=label,
        article_x=rng.standard_normal((1, d)) + mean,
        post_x=rng.standard_normal((n_posts, d)) + mean,
        post_subtype=kinds,
        user_x=rng.standard_normal((n_users, d)) + mean,
        edges=edges,
    )


def generate(cfg: GenConfig, name: str = "synthetic") -> Corpus:
    """Produce a corpus deterministically from cfg; each graph has its own RNG stream."""
    check_config(cfg)
    label_dir, shift_dir = _directions(cfg)
    graphs = [_one_graph(cfg, i, name, label_dir, shift_dir) for i in range(cfg.n_graphs)]
    provenance = {"generator": "newsgraph.generate", "config": _config_record(cfg)}
    return Corpus(
        name=name, feature_dim=cfg.feature_dim, graphs=graphs, provenance=provenance
    )


def _config_record(cfg: GenConfig) -> dict:
    rec = asdict(cfg)
    rec["post_count_range"] = list(cfg.post_count_range)
    rec["user_count_range"] = list(cfg.user_count_range)
    return rec


def presets() -> dict:
    """Named configs; sizes mirror the two reference datasets plus fast variants."""
    pol = GenConfig(
        seed=101,
        n_graphs=483,
        feature_dim=768,
        label_balance=0.5,
        post_count_range=(5, 60),
        user_count_range=(5, 50),
        domain_shift=0.0,
    )
    gos = GenConfig(
        seed=202,
        n_graphs=12214,
        feature_dim=768,
        label_balance=0.3,
        post_count_range=(5, 60),
        user_count_range=(5, 50),
        domain_shift=0.5,
    )
    return {
        "pol_like": pol,
        "gos_like": gos,
        "pol_tiny": replace(pol, n_graphs=100, feature_dim=32,
                            post_count_range=(4, 16), user_count_range=(4, 12)),
        "gos_tiny": replace(gos, n_graphs=500, feature_dim=32,
                            post_count_range=(4, 16), user_count_range=(4, 12)),
    }
