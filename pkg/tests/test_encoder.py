import numpy as np
import pytest

from newsgraph import autodiff as ad
from newsgraph import encoder as enc
from newsgraph.autodiff import Tape, Tensor
from newsgraph.generate import GenConfig, generate
from newsgraph.gradcheck import grad_check
from newsgraph.graph import HeteroGraph, context_subgraph


def small_corpus(seed=1, n=3, d=6):
    return generate(
        GenConfig(seed=seed, n_graphs=n, feature_dim=d,
                  post_count_range=(3, 6), user_count_range=(2, 4))
    )


def small_setup(seed=5, d=6, hidden=8):
    cfg = enc.EncoderConfig(feature_dim=d, hidden_dim=hidden, n_layers=2, n_heads=2)
    return cfg, enc.EncoderParams.init(cfg, seed=seed)


def test_config_validation():
    with pytest.raises(ValueError):
        enc.EncoderConfig(feature_dim=4, hidden_dim=10, n_heads=3)
    with pytest.raises(ValueError):
        enc.EncoderConfig(feature_dim=4, n_layers=0)
    cfg = enc.EncoderConfig(feature_dim=4)
    assert cfg.hidden_dim == 64 and cfg.n_layers == 2 and cfg.head_dim == 32
    assert len(cfg.edge_types) == 10


def test_param_naming_and_shapes():
    cfg, params = small_setup()
    names = params.names()
    assert "layer0.edge.user_posts_tweet.att" in names
    assert "layer1.edge.rev_tweet_cites_article.msg" in names
    assert params["input.post.w"].shape == (6, 8)
    assert params["head.recon.w"].shape == (8, 6)
    assert params["head.context.w"].shape == (16, 1)
    assert params["head.count.w"].shape == (24, 1)
    assert params["head.cls.w"].shape == (24, 2)
    assert params["layer0.edge.user_posts_tweet.prior"].data[0, 0] == 1.0
    # every edge type owns att, msg and prior in every layer
    for layer in range(cfg.n_layers):
        for e in cfg.edge_types:
            for part in ("att", "msg", "prior"):
                assert f"layer{layer}.edge.{e}.{part}" in names


def test_encode_shapes():
    cfg, params = small_setup()
    g = small_corpus().graphs[0]
    h = enc.encode(g, params)
    assert h.article.shape == (1, 8)
    assert h.post.shape == (g.n_posts, 8)
    assert h.user.shape == (g.n_users, 8)
    for m in (h.article.data, h.post.data, h.user.data):
        assert np.isfinite(m).all()


def test_encode_minimal_graph():
    cfg, params = small_setup()
    g = HeteroGraph(
        id="min", label=0, article_x=np.random.default_rng(0).standard_normal((1, 6)),
        post_x=np.zeros((0, 6)), post_subtype=[], user_x=np.zeros((0, 6)), edges={},
    )
    h = enc.encode(g, params)
    assert h.article.shape == (1, 8)
    assert h.post.shape == (0, 8)
    assert h.user.shape == (0, 8)


def test_encode_rejects_wrong_feature_dim():
    cfg, params = small_setup(d=6)
    g = HeteroGraph(
        id="bad", label=0, article_x=np.zeros((1, 4)), post_x=np.zeros((0, 4)),
        post_subtype=[], user_x=np.zeros((0, 4)), edges={},
    )
    with pytest.raises(ValueError):
        enc.encode(g, params)


def test_unknown_edge_type_is_fatal():
    cfg = enc.EncoderConfig(feature_dim=6, hidden_dim=8, n_heads=2,
                            edge_types=("user_posts_tweet",))
    params = enc.EncoderParams.init(cfg, seed=0)
    g = small_corpus().graphs[0]  # contains tweet_cites_article
    with pytest.raises(ValueError):
        enc.encode(g, params)


def test_attention_rows_sum_to_one():
    cfg, params = small_setup()
    c = generate(GenConfig(seed=9, n_graphs=1, feature_dim=6,
                           post_count_range=(20, 20), user_count_range=(5, 8)))
    rec = []
    enc.encode(c.graphs[0], params, record=rec)
    assert rec, "no attention recorded"
    for r in rec:
        n_heads = r["attn"].shape[1]
        sums = np.zeros((r["n_nodes"], n_heads))
        np.add.at(sums, r["dst"], r["attn"])
        touched = np.unique(r["dst"])
        assert np.abs(sums[touched] - 1.0).max() <= 1e-12


def test_single_neighbor_gets_weight_one():
    cfg, params = small_setup()
    g = HeteroGraph(
        id="one", label=0,
        article_x=np.random.default_rng(1).standard_normal((1, 6)),
        post_x=np.random.default_rng(2).standard_normal((1, 6)),
        post_subtype=["tweet"],
        user_x=np.zeros((0, 6)),
        edges={"tweet_cites_article": [(0, 0)]},
    )
    rec = []
    enc.encode(g, params, record=rec)
    # the article's only in-edge and the post's only in-edge (reversed)
    for r in rec:
        for node in np.unique(r["dst"]):
            rows = r["attn"][r["dst"] == node]
            if rows.shape[0] == 1:
                assert np.array_equal(rows, np.ones_like(rows))


def test_permutation_equivariance():
    cfg, params = small_setup()
    g = small_corpus(seed=3).graphs[0]
    rng = np.random.default_rng(7)
    perm = rng.permutation(g.n_posts)
    inv = np.argsort(perm)
    # remap post indices: new position inv[j] holds old post j
    def remap(pairs, src_is_post, dst_is_post):
        return [
            (int(inv[s]) if src_is_post else s, int(inv[t]) if dst_is_post else t)
            for s, t in pairs
        ]
    edges = {}
    for etype, pairs in g.edges.items():
        src_is_post = etype in ("tweet_cites_article", "retweet_cites_tweet")
        dst_is_post = etype in ("user_posts_tweet", "user_posts_retweet",
                                "user_posts_timeline", "retweet_cites_tweet")
        edges[etype] = remap(pairs, src_is_post, dst_is_post)
    permuted = HeteroGraph(
        id=g.id, label=g.label, article_x=g.article_x,
        post_x=g.post_x[perm], post_subtype=tuple(np.array(g.post_subtype)[perm]),
        user_x=g.user_x, edges=edges,
    )
    h0 = enc.encode(g, params)
    h1 = enc.encode(permuted, params)
    assert np.abs(h1.post.data[inv] - h0.post.data).max() <= 1e-9
    assert np.abs(h1.article.data - h0.article.data).max() <= 1e-9
    assert np.abs(h1.user.data - h0.user.data).max() <= 1e-9


def test_isolated_user_changes_nothing_else():
    cfg, params = small_setup()
    g = small_corpus(seed=4).graphs[1]
    grown = HeteroGraph(
        id=g.id, label=g.label, article_x=g.article_x, post_x=g.post_x,
        post_subtype=g.post_subtype,
        user_x=np.vstack([g.user_x, np.random.default_rng(8).standard_normal((1, 6))]),
        edges=g.edges,
    )
    h0 = enc.encode(g, params)
    h1 = enc.encode(grown, params)
    assert np.array_equal(h0.article.data, h1.article.data)
    assert np.array_equal(h0.post.data, h1.post.data)
    assert np.array_equal(h0.user.data, h1.user.data[:-1])


def test_mean_pool():
    cfg, params = small_setup()
    g = small_corpus().graphs[0]
    h = enc.encode(g, params)
    pooled = enc.mean_pool(h)
    both = np.vstack([h.post.data, h.user.data])
    assert np.allclose(pooled.data, both.mean(axis=0, keepdims=True))
    only_post = enc.mean_pool(h, ("post",))
    assert np.allclose(only_post.data, h.post.data.mean(axis=0, keepdims=True))
    empty = enc.NodeEmbeddings(
        article=Tensor(np.zeros((1, 8))), post=Tensor(np.zeros((0, 8))),
        user=Tensor(np.zeros((0, 8))),
    )
    assert np.array_equal(enc.mean_pool(empty).data, np.zeros((1, 8)))


def test_single_post_pool_equals_row():
    cfg, params = small_setup()
    h = enc.NodeEmbeddings(
        article=Tensor(np.zeros((1, 8))),
        post=Tensor(np.arange(8.0).reshape(1, 8)),
        user=Tensor(np.zeros((0, 8))),
    )
    assert np.array_equal(enc.mean_pool(h).data, np.arange(8.0).reshape(1, 8))


def test_classify_readout_probabilities():
    cfg, params = small_setup()
    g = small_corpus().graphs[2]
    h = enc.encode(g, params)
    logits = enc.classify_readout(h, params)
    assert logits.shape == (1, 2)
    probs = ad.softmax_rows(logits)
    assert abs(probs.data.sum() - 1.0) <= 1e-12
    # zeroed head gives indifferent logits
    params["head.cls.w"].data[:] = 0.0
    params["head.cls.b"].data[:] = 0.0
    logits = enc.classify_readout(enc.encode(g, params), params)
    assert np.array_equal(logits.data, np.zeros((1, 2)))
    assert np.allclose(ad.softmax_rows(logits).data, [[0.5, 0.5]])


def test_readout_requires_article():
    cfg, params = small_setup()
    g = context_subgraph(small_corpus().graphs[0])
    h = enc.encode(g, params)
    with pytest.raises(ad.ShapeError):
        enc.classify_readout(h, params)


def test_gradcheck_encode_classify():
    cfg = enc.EncoderConfig(feature_dim=3, hidden_dim=4, n_layers=1, n_heads=2)
    params = enc.EncoderParams.init(cfg, seed=11)
    c = generate(GenConfig(seed=2, n_graphs=1, feature_dim=3,
                           post_count_range=(3, 3), user_count_range=(2, 2)))
    g = c.graphs[0]

    def f():
        h = enc.encode(g, params)
        return ad.softmax_cross_entropy(enc.classify_readout(h, params), np.array([1]))

    subset = {
        name: params[name]
        for name in params.names()
        if "layer0" in name or name.startswith("head.cls") or "input.post" in name
    }
    report = grad_check(f, subset, tol=1e-4)
    assert report.ok, report.summary()


def test_checkpoint_round_trip(tmp_path):
    cfg, params = small_setup()
    p1 = tmp_path / "a.json"
    p2 = tmp_path / "b.json"
    enc.save_checkpoint(params, p1)
    loaded = enc.load_checkpoint(p1)
    assert loaded.config == params.config
    for name in params.names():
        assert np.array_equal(loaded[name].data, params[name].data)
    enc.save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_head_reinit(tmp_path):
    cfg, params = small_setup()
    p = tmp_path / "a.json"
    enc.save_checkpoint(params, p)
    re = enc.load_checkpoint(p, head_reinit=True, head_seed=123)
    for name in params.names():
        if name.startswith("head.") and name.endswith(".w"):
            assert not np.array_equal(re[name].data, params[name].data)
        elif not name.startswith("head."):
            assert np.array_equal(re[name].data, params[name].data)
    assert re.head_seed == 123
    # same head seed reproduces the same heads
    re2 = enc.load_checkpoint(p, head_reinit=True, head_seed=123)
    for name in params.names():
        assert np.array_equal(re[name].data, re2[name].data)


def test_checkpoint_tamper_rejected(tmp_path):
    import json

    cfg, params = small_setup()
    p = tmp_path / "a.json"
    enc.save_checkpoint(params, p)
    obj = json.loads(p.read_text())
    obj["params"]["input.post.w"]["shape"] = [5, 8]
    p.write_text(json.dumps(obj))
    with pytest.raises(enc.CheckpointError) as exc:
        enc.load_checkpoint(p)
    assert "input.post.w" in str(exc.value)


def test_checkpoint_missing_param_rejected(tmp_path):
    import json

    cfg, params = small_setup()
    p = tmp_path / "a.json"
    enc.save_checkpoint(params, p)
    obj = json.loads(p.read_text())
    del obj["params"]["head.cls.w"]
    p.write_text(json.dumps(obj))
    with pytest.raises(enc.CheckpointError) as exc:
        enc.load_checkpoint(p)
    assert "head.cls.w" in str(exc.value)
