import numpy as np
import pytest

from newsgraph.generate import GenConfig, GenConfigError, check_config, generate, presets
from newsgraph.graph import corpora_equal, retweet_count, validate


def test_same_seed_bit_identical():
    cfg = GenConfig(seed=7, n_graphs=10, feature_dim=6, post_count_range=(2, 8),
                    user_count_range=(1, 5))
    a = generate(cfg)
    b = generate(cfg)
    assert corpora_equal(a, b)
    for x, y in zip(a.graphs, b.graphs):
        assert x.post_x.tobytes() == y.post_x.tobytes()


def test_different_seed_differs():
    base = dict(n_graphs=5, feature_dim=4, post_count_range=(2, 6), user_count_range=(1, 4))
    a = generate(GenConfig(seed=1, **base))
    b = generate(GenConfig(seed=2, **base))
    assert not corpora_equal(a, b)


def test_all_graphs_valid_small():
    c = generate(GenConfig(seed=3, n_graphs=30, feature_dim=5,
                           post_count_range=(0, 10), user_count_range=(1, 6)))
    for g in c.graphs:
        assert validate(g) == []


def test_property_sweep_many_configs():
    # schema invariants hold across a wide sweep of random configs
    rng = np.random.default_rng(99)
    for trial in range(1000):
        pmax = int(rng.integers(0, 9))
        pmin = int(rng.integers(0, pmax + 1))
        umin = int(rng.integers(1, 4))
        umax = umin + int(rng.integers(0, 4))
        rt = float(rng.uniform(0, 1)) if pmax >= 2 else 0.0
        cfg = GenConfig(
            seed=int(rng.integers(0, 2**31)),
            n_graphs=int(rng.integers(1, 4)),
            feature_dim=int(rng.integers(2, 7)),
            label_balance=float(rng.uniform(0, 1)),
            post_count_range=(pmin, pmax),
            user_count_range=(umin, umax),
            retweet_fraction_mean=rt,
            timeline_fraction_mean=float(rng.uniform(0, 0.5)),
            signal_strength=float(rng.uniform(0, 3)),
            domain_shift=float(rng.uniform(0, 2)),
            couple_retweets_to_label=bool(rng.integers(0, 2)),
        )
        corpus = generate(cfg)
        assert len(corpus) == cfg.n_graphs
        for g in corpus.graphs:
            violations = validate(g)
            assert violations == [], f"trial {trial}: {violations[:3]}"


def test_label_balance_within_tolerance():
    for balance in (0.5, 0.3):
        cfg = GenConfig(seed=11, n_graphs=400, feature_dim=4, label_balance=balance,
                        post_count_range=(0, 3), user_count_range=(1, 2))
        frac = np.mean([g.label for g in generate(cfg).graphs])
        assert abs(frac - balance) <= 0.05


def test_retweet_count_matches_edge_targets():
    cfg = GenConfig(seed=5, n_graphs=20, feature_dim=4,
                    post_count_range=(2, 12), user_count_range=(1, 6),
                    retweet_fraction_mean=0.4)
    for g in generate(cfg).graphs:
        targets = {t for _, t in g.edges.get("user_posts_retweet", ())}
        assert retweet_count(g) == len(targets)


def _probe_accuracy(corpus, n_train):
    # fit the mean-difference direction on train graphs, threshold on test
    feats = np.array([g.post_x.mean(axis=0) if g.n_posts else g.article_x[0]
                      for g in corpus.graphs])
    labels = np.array([g.label for g in corpus.graphs])
    tr_f, te_f = feats[:n_train], feats[n_train:]
    tr_y, te_y = labels[:n_train], labels[n_train:]
    if tr_y.min() == tr_y.max():
        return 0.5
    w = tr_f[tr_y == 1].mean(axis=0) - tr_f[tr_y == 0].mean(axis=0)
    thresh = (tr_f[tr_y == 1].mean(axis=0) + tr_f[tr_y == 0].mean(axis=0)) @ w / 2
    pred = (te_f @ w > thresh).astype(int)
    return float((pred == te_y).mean())


def test_zero_signal_gives_chance_accuracy():
    cfg = GenConfig(seed=13, n_graphs=200, feature_dim=16, signal_strength=0.0,
                    post_count_range=(3, 10), user_count_range=(1, 5))
    acc = _probe_accuracy(generate(cfg), 100)
    assert 0.35 <= acc <= 0.65


def test_strong_signal_is_separable():
    cfg = GenConfig(seed=13, n_graphs=200, feature_dim=16, signal_strength=2.0,
                    post_count_range=(3, 10), user_count_range=(1, 5))
    acc = _probe_accuracy(generate(cfg), 100)
    assert acc >= 0.8


def test_domain_shift_moves_mean_orthogonally():
    base = dict(seed=21, n_graphs=60, feature_dim=12, signal_strength=0.0,
                post_count_range=(3, 8), user_count_range=(1, 4))
    near = generate(GenConfig(domain_shift=0.0, **base))
    far = generate(GenConfig(domain_shift=3.0, **base))
    mean_near = np.concatenate([g.post_x for g in near.graphs]).mean(axis=0)
    mean_far = np.concatenate([g.post_x for g in far.graphs]).mean(axis=0)
    assert np.linalg.norm(mean_far - mean_near) > 2.0


def test_coupling_links_retweets_to_label():
    cfg = GenConfig(seed=31, n_graphs=400, feature_dim=4,
                    post_count_range=(10, 20), user_count_range=(1, 4),
                    retweet_fraction_mean=0.3, retweet_label_coupling=0.3)
    by_label = {0: [], 1: []}
    for g in generate(cfg).graphs:
        by_label[g.label].append(retweet_count(g) / g.n_posts)
    assert np.mean(by_label[1]) > np.mean(by_label[0]) + 0.1


def test_presets_shapes():
    p = presets()
    assert p["pol_like"].n_graphs == 483
    assert p["gos_like"].n_graphs == 12214
    assert p["pol_tiny"].n_graphs == 100
    assert p["gos_tiny"].n_graphs == 500
    for cfg in p.values():
        check_config(cfg)
    assert p["pol_like"].direction_seed == p["gos_like"].direction_seed


def test_tiny_presets_fast(tmp_path):
    import time

    start = time.monotonic()
    c = generate(presets()["pol_tiny"], name="pol_tiny")
    assert time.monotonic() - start < 10.0
    assert len(c) == 100
    for g in c.graphs[:10]:
        assert validate(g) == []


def test_config_errors():
    with pytest.raises(GenConfigError):
        check_config(GenConfig(post_count_range=(5, 2)))
    with pytest.raises(GenConfigError):
        check_config(GenConfig(retweet_fraction_mean=0.3, post_count_range=(0, 0)))
    with pytest.raises(GenConfigError):
        check_config(GenConfig(label_balance=1.5))
    with pytest.raises(GenConfigError):
        check_config(GenConfig(user_count_range=(0, 3)))
    with pytest.raises(GenConfigError):
        check_config(GenConfig(feature_dim=1))
    with pytest.raises(GenConfigError):
        generate(GenConfig(signal_strength=-1.0))


def test_provenance_records_config():
    cfg = GenConfig(seed=17, n_graphs=2, feature_dim=3, post_count_range=(1, 2),
                    user_count_range=(1, 2))
    c = generate(cfg, name="prov")
    assert c.provenance["config"]["seed"] == 17
    assert c.graphs[0].id.startswith("prov_")
