"""Article-centered heterogeneous graph data model and corpus serialization.

A graph holds three node sets (one news article, its posts, their users)
joined only by typed edges. Posts carry a subtype tag (tweet, retweet,
timeline) that data tooling may read but the encoder input never sees.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

POST_SUBTYPES = ("tweet", "retweet", "timeline")

EDGE_TYPES = (
    "tweet_cites_article",
    "user_posts_tweet",
    "user_posts_retweet",
    "retweet_cites_tweet",
    "user_posts_timeline",
)

# edge type -> (source node set, target node set)
ENDPOINTS = {
    "tweet_cites_article": ("post", "article"),
    "user_posts_tweet": ("user", "post"),
    "user_posts_retweet": ("user", "post"),
    "retweet_cites_tweet": ("post", "post"),
    "user_posts_timeline": ("user", "post"),
}

# subtype constraints on post endpoints
_SRC_SUBTYPE = {"tweet_cites_article": "tweet", "retweet_cites_tweet": "retweet"}
_DST_SUBTYPE = {
    "user_posts_tweet": "tweet",
    "user_posts_retweet": "retweet",
    "user_posts_timeline": "timeline",
    "retweet_cites_tweet": "tweet",
}


class CorpusFormatError(ValueError):
    """Raised when a corpus file does not match the on-disk format."""


def _freeze(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {arr.shape}")
    if arr.flags.writeable:
        # copy before freezing so a caller's array is never flipped read-only;
        # already-frozen arrays (derived graphs) are shared, not copied
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class HeteroGraph:
    """One article with its social context; immutable after construction."""

    id: str
    label: int | None
    article_x: np.ndarray
    post_x: np.ndarray
    post_subtype: tuple
    user_x: np.ndarray
    edges: dict

    def __post_init__(self):
        object.__setattr__(self, "article_x", _freeze(self.article_x))
        object.__setattr__(self, "post_x", _freeze(self.post_x))
        object.__setattr__(self, "user_x", _freeze(self.user_x))
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "post_subtype", tuple(self.post_subtype))
        object.__setattr__(
            self,
            "edges",
            {k: tuple((int(s), int(d)) for s, d in v) for k, v in self.edges.items()},
        )

    @property
    def n_posts(self) -> int:
        return self.post_x.shape[0]

    @property
    def n_users(self) -> int:
        return self.user_x.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.article_x.shape[1]

    def n_edges(self) -> int:
        return sum(len(v) for v in self.edges.values())


@dataclass(frozen=True)
class Corpus:
    name: str
    feature_dim: int
    graphs: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))

    def __len__(self) -> int:
        return len(self.graphs)

    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs])


def validate(g: HeteroGraph, allow_empty_article: bool = False) -> list:
    """Return all invariant violations of g; an empty list means the graph is valid."""
    out = []
    n_article = g.article_x.shape[0]
    if allow_empty_article:
        if n_article not in (0, 1):
            out.append(f"expected 0 or 1 article nodes, found {n_article}")
    elif n_article != 1:
        out.append(f"expected exactly 1 article node, found {n_article}")

    if g.label not in (None, 0, 1):
        out.append(f"label must be 0, 1 or absent, got {g.label!r}")

    d = g.article_x.shape[1]
    for name, mat in (("post_x", g.post_x), ("user_x", g.user_x)):
        if mat.shape[1] != d:
            out.append(f"{name} feature dim {mat.shape[1]} != article dim {d}")

    if len(g.post_subtype) != g.n_posts:
        out.append(
            f"post_subtype has {len(g.post_subtype)} entries for {g.n_posts} posts"
        )
    for i, st in enumerate(g.post_subtype):
        if st not in POST_SUBTYPES:
            out.append(f"post {i} has unknown subtype {st!r}")

    sizes = {"article": n_article, "post": g.n_posts, "user": g.n_users}
    for etype, pairs in g.edges.items():
        if etype not in EDGE_TYPES:
            out.append(f"unknown edge type {etype!r}")
            continue
        src_set, dst_set = ENDPOINTS[etype]
        for k, (s, t) in enumerate(pairs):
            if not 0 <= s < sizes[src_set]:
                out.append(
                    f"{etype}[{k}]: source index {s} out of range for "
                    f"{sizes[src_set]} {src_set} nodes"
                )
                continue
            if not 0 <= t < sizes[dst_set]:
                out.append(
                    f"{etype}[{k}]: target index {t} out of range for "
                    f"{sizes[dst_set]} {dst_set} nodes"
                )
                continue
            want = _SRC_SUBTYPE.get(etype)
            if want and g.post_subtype[s] != want:
                out.append(
                    f"{etype}[{k}]: source post {s} has subtype "
                    f"{g.post_subtype[s]}, expected {want}"
                )
            want = _DST_SUBTYPE.get(etype)
            if want and g.post_subtype[t] != want:
                out.append(
                    f"{etype}[{k}]: target post {t} has subtype "
                    f"{g.post_subtype[t]}, expected {want}"
                )
    return out


def context_subgraph(g: HeteroGraph) -> HeteroGraph:
    """The graph with its article removed: no article row, no citing edges."""
    edges = {k: v for k, v in g.edges.items() if k != "tweet_cites_article"}
    return HeteroGraph(
        id=g.id,
        label=g.label,
        article_x=np.zeros((0, g.feature_dim)),
        post_x=g.post_x,
        post_subtype=g.post_subtype,
        user_x=g.user_x,
        edges=edges,
    )


def retweet_count(g: HeteroGraph) -> int:
    """Number of retweet posts. Metadata only: never part of encoder input."""
    return sum(1 for st in g.post_subtype if st == "retweet")


def graphs_equal(a: HeteroGraph, b: HeteroGraph) -> bool:
    return (
        a.id == b.id
        and a.label == b.label
        and a.post_subtype == b.post_subtype
        and a.edges == b.edges
        and a.article_x.shape == b.article_x.shape
        and a.post_x.shape == b.post_x.shape
        and a.user_x.shape == b.user_x.shape
        and np.array_equal(a.article_x, b.article_x)
        and np.array_equal(a.post_x, b.post_x)
        and np.array_equal(a.user_x, b.user_x)
    )


def corpora_equal(a: Corpus, b: Corpus) -> bool:
    return (
        a.name == b.name
        and a.feature_dim == b.feature_dim
        and len(a) == len(b)
        and a.provenance == b.provenance
        and all(graphs_equal(x, y) for x, y in zip(a.graphs, b.graphs))
    )


# --------------------------------------------------------------------------
# JSONL corpus format. Line 1 is a header object; each further line is one
# graph. Floats are written in shortest round-trip decimal (<= 17 significant
# digits), so read(write(c)) reproduces every value bit-exactly.

FORMAT_VERSION = 1


def _graph_record(g: HeteroGraph) -> dict:
    return {
        "id": g.id,
        "label": g.label,
        "article_x": g.article_x.tolist(),
        "post_x": g.post_x.tolist(),
        "post_subtype": list(g.post_subtype),
        "user_x": g.user_x.tolist(),
        "edges": {k: [list(p) for p in v] for k, v in g.edges.items()},
    }


def write_corpus(corpus: Corpus, path) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "name": corpus.name,
        "feature_dim": corpus.feature_dim,
        "count": len(corpus),
        "provenance": corpus.provenance,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for g in corpus.graphs:
            fh.write(json.dumps(_graph_record(g)) + "\n")


def _require(cond, line_no, path, detail):
    if not cond:
        raise CorpusFormatError(f"line {line_no}: {path}: {detail}")


def _parse_matrix(obj, line_no, path, width=None):
    _require(isinstance(obj, list), line_no, path, "expected a list of rows")
    for i, row in enumerate(obj):
        _require(isinstance(row, list), line_no, f"{path}[{i}]", "expected a row list")
        if width is None and i == 0:
            width = len(row)
        if width is not None:
            _require(
                len(row) == width,
                line_no,
                f"{path}[{i}]",
                f"row length {len(row)} != feature_dim {width}",
            )
        for v in row:
            _require(
                isinstance(v, (int, float)), line_no, f"{path}[{i}]", "non-numeric entry"
            )
    cols = width if width is not None else 0
    return np.array(obj, dtype=np.float64).reshape(len(obj), cols)


def _parse_graph(obj, line_no, k, feature_dim) -> HeteroGraph:
    path = f"graphs[{k}]"
    _require(isinstance(obj, dict), line_no, path, "expected an object")
    for key in ("id", "label", "article_x", "post_x", "post_subtype", "user_x", "edges"):
        _require(key in obj, line_no, f"{path}.{key}", "missing field")
    _require(isinstance(obj["id"], str), line_no, f"{path}.id", "expected a string")
    label = obj["label"]
    _require(
        label is None or (type(label) is int and label in (0, 1)),
        line_no,
        f"{path}.label",
        "expected 0, 1 or null",
    )
    article = _parse_matrix(obj["article_x"], line_no, f"{path}.article_x", feature_dim)
    posts = _parse_matrix(obj["post_x"], line_no, f"{path}.post_x", feature_dim)
    users = _parse_matrix(obj["user_x"], line_no, f"{path}.user_x", feature_dim)
    subtype = obj["post_subtype"]
    _require(isinstance(subtype, list), line_no, f"{path}.post_subtype", "expected a list")
    for i, st in enumerate(subtype):
        _require(
            st in POST_SUBTYPES,
            line_no,
            f"{path}.post_subtype[{i}]",
            f"unknown subtype {st!r}",
        )
    edges_obj = obj["edges"]
    _require(isinstance(edges_obj, dict), line_no, f"{path}.edges", "expected an object")
    edges = {}
    for etype, pairs in edges_obj.items():
        _require(
            etype in EDGE_TYPES, line_no, f"{path}.edges.{etype}", "unknown edge type"
        )
        _require(
            isinstance(pairs, list), line_no, f"{path}.edges.{etype}", "expected a list"
        )
        parsed = []
        for i, pair in enumerate(pairs):
            _require(
                isinstance(pair, list)
                and len(pair) == 2
                and all(isinstance(x, int) for x in pair),
                line_no,
                f"{path}.edges.{etype}[{i}]",
                "expected [src, dst] integer pair",
            )
            parsed.append((pair[0], pair[1]))
        edges[etype] = parsed
    return HeteroGraph(
        id=obj["id"],
        label=obj["label"],
        article_x=article,
        post_x=posts,
        post_subtype=subtype,
        user_x=users,
        edges=edges,
    )


def read_corpus(path) -> Corpus:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CorpusFormatError("line 1: header: file is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"line 1: header: malformed JSON ({exc.msg})") from exc
    _require(isinstance(header, dict), 1, "header", "expected an object")
    _require(
        header.get("format_version") == FORMAT_VERSION,
        1,
        "header.format_version",
        f"unsupported version {header.get('format_version')!r}",
    )
    for key in ("name", "feature_dim", "count"):
        _require(key in header, 1, f"header.{key}", "missing field")
    feature_dim = header["feature_dim"]
    count = header["count"]
    body = lines[1:]
    _require(
        len(body) == count,
        1,
        "header.count",
        f"header says {count} graphs, file has {len(body)}",
    )
    graphs = []
    for k, line in enumerate(body):
        line_no = k + 2
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(
                f"line {line_no}: graphs[{k}]: malformed JSON ({exc.msg})"
            ) from exc
        graphs.append(_parse_graph(obj, line_no, k, feature_dim))
    return Corpus(
        name=header["name"],
        feature_dim=feature_dim,
        graphs=graphs,
        provenance=header.get("provenance", {}),
    )
