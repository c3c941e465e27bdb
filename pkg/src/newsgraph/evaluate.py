"""Metrics, cross-validation folds, significance tests and the experiment matrix.

The matrix runs every pre-training setup through the same fold plan so that
per-fold scores are paired across setups; fine-tuning seeds depend only on
(master seed, fold), which keeps setups comparable and makes the degenerate
no-training configuration collapse to identical metrics everywhere.
"""
from __future__ import annotations

import dataclasses
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.special import betainc

from .graph import Corpus
from .train import TrainConfig, finetune, predict, pretrain


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    accuracy: float
    macro_f1: float

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
        }


def _safe_div(num: float, den: float) -> float:
    # 0/0 counts as 0 so empty classes never poison a macro average
    return num / den if den != 0.0 else 0.0


def confusion_and_metrics(truth, pred) -> Metrics:
    """Macro-averaged precision/recall/F1 plus accuracy for binary labels."""
    t = np.asarray(truth)
    p = np.asarray(pred)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError(
            f"truth and pred must be equal-length 1-D, got {t.shape} and {p.shape}"
        )
    if t.size < 1:
        raise ValueError("need at least one label")
    for name, arr in (("truth", t), ("pred", p)):
        bad = np.setdiff1d(arr, [0, 1])
        if bad.size:
            raise ValueError(f"{name} labels must be 0 or 1, found {bad[0]!r}")

    precs, recs, f1s = [], [], []
    for c in (0, 1):
        tp = float(np.sum((t == c) & (p == c)))
        fp = float(np.sum((t != c) & (p == c)))
        fn = float(np.sum((t == c) & (p != c)))
        prec = _safe_div(tp, tp + fp)
        rec = _safe_div(tp, tp + fn)
        precs.append(prec)
        recs.append(rec)
        f1s.append(_safe_div(2.0 * prec * rec, prec + rec))
    return Metrics(
        precision=(precs[0] + precs[1]) / 2.0,
        recall=(recs[0] + recs[1]) / 2.0,
        accuracy=float(np.mean(t == p)),
        macro_f1=(f1s[0] + f1s[1]) / 2.0,
    )


def mean_metrics(items) -> Metrics:
    items = list(items)
    if not items:
        raise ValueError("cannot average zero metric records")
    n = float(len(items))
    return Metrics(
        precision=sum(m.precision for m in items) / n,
        recall=sum(m.recall for m in items) / n,
        accuracy=sum(m.accuracy for m in items) / n,
        macro_f1=sum(m.macro_f1 for m in items) / n,
    )


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    folds: tuple  # of (train_indices, test_indices) tuples

    def test_sizes(self) -> tuple:
        return tuple(len(test) for _, test in self.folds)


def kfold(n: int, k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded shuffle then contiguous split; the first n % k folds get the
    extra element, so sizes differ by at most one."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n < k:
        raise ValueError(f"cannot split {n} items into {k} folds")
    rng = np.random.default_rng([seed, 0xF01D])
    perm = rng.permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        test = perm[start:start + size]
        train = np.concatenate([perm[:start], perm[start + size:]])
        folds.append((tuple(int(x) for x in np.sort(train)),
                      tuple(int(x) for x in np.sort(test))))
        start += size
    return FoldPlan(k=k, seed=seed, folds=tuple(folds))


def t_pvalue_two_sided(t_stat: float, df: int) -> float:
    """Two-sided tail probability of Student's t via the regularized
    incomplete beta function."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    x = df / (df + t_stat * t_stat)
    return float(betainc(df / 2.0, 0.5, x))


@dataclass(frozen=True)
class PairResult:
    setup_a: str
    setup_b: str
    degenerate: bool
    t_stat: float | None
    p_raw: float | None
    p_adjusted: float | None
    significant: bool

    def as_dict(self) -> dict:
        return {
            "setup_a": self.setup_a,
            "setup_b": self.setup_b,
            "degenerate": self.degenerate,
            "t_stat": self.t_stat,
            "p_raw": self.p_raw,
            "p_adjusted": self.p_adjusted,
            "significant": self.significant,
        }


@dataclass(frozen=True)
class SignificanceReport:
    metric: str
    alpha: float
    n_comparisons: int
    pairs: tuple

    def significant_pairs(self) -> list:
        return [p for p in self.pairs if p.significant]

    def as_dict(self) -> dict:
        return {
            "metric": self.metric,
            "alpha": self.alpha,
            "n_comparisons": self.n_comparisons,
            "pairs": [p.as_dict() for p in self.pairs],
        }


def paired_ttest_bonferroni(scores: dict, alpha: float = 0.01,
                            metric: str = "") -> SignificanceReport:
    """All-pairs paired two-sided t-tests with Bonferroni adjustment.

    scores maps setup name to its per-fold score list; zero-variance
    differences are flagged as degenerate instead of producing a p-value.
    """
    names = list(scores)
    if len(names) < 2:
        raise ValueError("need at least two setups to compare")
    k = len(scores[names[0]])
    if k < 2:
        raise ValueError(f"need at least two folds per setup, got {k}")
    for name in names:
        if len(scores[name]) != k:
            raise ValueError(
                f"setup {name!r} has {len(scores[name])} scores, expected {k}"
            )
    pairs = list(combinations(names, 2))
    n_comp = len(pairs)
    results = []
    for a, b in pairs:
        d = np.asarray(scores[a], dtype=np.float64) - np.asarray(scores[b], dtype=np.float64)
        sd = float(np.std(d, ddof=1))
        if sd == 0.0:
            results.append(PairResult(a, b, True, None, None, None, False))
            continue
        t_stat = float(np.mean(d)) / (sd / np.sqrt(k))
        p_raw = t_pvalue_two_sided(t_stat, k - 1)
        p_adj = min(1.0, p_raw * n_comp)
        results.append(
            PairResult(a, b, False, t_stat, p_raw, p_adj, p_adj < alpha)
        )
    return SignificanceReport(metric=metric, alpha=alpha,
                              n_comparisons=n_comp, pairs=tuple(results))


# Experiment matrix: the six pre-training setups, in report row order.
# Each entry is (name, node_level_objective, graph_level_objective).
SETUPS = (
    ("none", None, None),
    ("context_pred", "context_pred", None),
    ("node_mask", "node_mask", None),
    ("retweet_count", None, "retweet_count"),
    ("context_pred+retweet_count", "context_pred", "retweet_count"),
    ("node_mask+retweet_count", "node_mask", "retweet_count"),
)

_STAGE_CODE = {None: 0, "node_mask": 1, "context_pred": 2, "retweet_count": 3}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 42
    k: int = 5
    hidden_dim: int = 64
    n_layers: int = 2
    n_heads: int = 2
    batch_size: int = 128
    lr: float = 0.001
    node_epochs: int | None = None   # None: objective default; 0: skip stage
    graph_epochs: int | None = None
    finetune_epochs: int | None = None  # 0: evaluate untrained heads
    low_resource: int | None = None  # also fine-tune on this many samples per fold
    jobs: int = 1
    alpha: float = 0.01

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")
        for name in ("node_epochs", "graph_epochs", "finetune_epochs"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")
        if self.low_resource is not None and self.low_resource < 1:
            raise ValueError(f"low_resource must be >= 1, got {self.low_resource}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")


def _derive_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _subcorpus(corpus: Corpus, indices) -> Corpus:
    return Corpus(corpus.name, corpus.feature_dim,
                  tuple(corpus.graphs[i] for i in indices))


def _run_stage(payload: dict) -> str:
    """Pre-train one stage and write its checkpoint; safe to run in a worker."""
    cfg = TrainConfig(
        objective=payload["objective"],
        epochs=payload["epochs"],
        batch_size=payload["batch_size"],
        lr=payload["lr"],
        seed=payload["seed"],
        hidden_dim=payload["hidden_dim"],
        n_layers=payload["n_layers"],
        n_heads=payload["n_heads"],
        init_checkpoint=payload["init_checkpoint"],
    )
    pretrain(payload["corpus"], cfg, checkpoint_path=payload["out_path"])
    return payload["out_path"]


def _run_cell(payload: dict) -> tuple:
    """Fine-tune and evaluate one (mode, setup, fold) cell."""
    corpus = payload["corpus"]
    train_idx = payload["train_idx"]
    cfg = TrainConfig(
        objective="finetune",
        epochs=payload["epochs"],
        batch_size=payload["batch_size"],
        lr=payload["lr"],
        seed=payload["seed"],
        hidden_dim=payload["hidden_dim"],
        n_layers=payload["n_layers"],
        n_heads=payload["n_heads"],
        init_checkpoint=payload["checkpoint"],
        head_reinit=payload["checkpoint"] is not None,
        train_count=payload["train_count"],
    )
    params, log = finetune(_subcorpus(corpus, train_idx), cfg)
    if payload["mode"] == "low_resource":
        # evaluation covers every graph the sampler did not pick, which
        # includes the fold's test block and the unused training graphs
        id_to_idx = {g.id: i for i, g in enumerate(corpus.graphs)}
        chosen = {id_to_idx[gid] for gid in log.train_ids}
        eval_idx = [i for i in range(len(corpus)) if i not in chosen]
    else:
        eval_idx = list(payload["test_idx"])
    eval_corpus = _subcorpus(corpus, eval_idx)
    _, preds = predict(eval_corpus, params)
    m = confusion_and_metrics(eval_corpus.labels(), preds)
    return payload["mode"], payload["setup"], payload["fold"], m, len(eval_idx)


@dataclass
class SetupResult:
    name: str
    node_objective: str | None
    graph_objective: str | None
    per_fold: tuple
    mean: Metrics

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "node_objective": self.node_objective,
            "graph_objective": self.graph_objective,
            "per_fold": [m.as_dict() for m in self.per_fold],
            "mean": self.mean.as_dict(),
        }


@dataclass
class ExperimentReport:
    config: dict
    pretrain_corpus: str
    finetune_corpus: str
    fold_sizes: tuple
    standard: tuple
    standard_significance: dict
    low_resource: tuple | None
    low_resource_significance: dict | None
    low_resource_train_count: int | None
    elapsed_seconds: float

    def to_dict(self) -> dict:
        out = {
            "config": self.config,
            "pretrain_corpus": self.pretrain_corpus,
            "finetune_corpus": self.finetune_corpus,
            "fold_sizes": list(self.fold_sizes),
            "standard": {
                "setups": [s.as_dict() for s in self.standard],
                "significance": {
                    name: rep.as_dict()
                    for name, rep in self.standard_significance.items()
                },
            },
            "elapsed_seconds": self.elapsed_seconds,
        }
        if self.low_resource is None:
            out["low_resource"] = None
        else:
            out["low_resource"] = {
                "train_count": self.low_resource_train_count,
                "setups": [s.as_dict() for s in self.low_resource],
                "significance": {
                    name: rep.as_dict()
                    for name, rep in self.low_resource_significance.items()
                },
            }
        return out


def _pretrain_stage_payloads(corpus, cfg, workdir):
    """Plan the node-level stage runs; one per distinct node objective."""
    payloads = {}
    if cfg.node_epochs == 0:
        return payloads
    for _, node_obj, _g in SETUPS:
        if node_obj is None or node_obj in payloads:
            continue
        payloads[node_obj] = {
            "corpus": corpus,
            "objective": node_obj,
            "epochs": cfg.node_epochs,
            "batch_size": cfg.batch_size,
            "lr": cfg.lr,
            "seed": _derive_seed(cfg.seed, 1, _STAGE_CODE[node_obj]),
            "hidden_dim": cfg.hidden_dim,
            "n_layers": cfg.n_layers,
            "n_heads": cfg.n_heads,
            "init_checkpoint": None,
            "out_path": str(Path(workdir) / f"stage_node_{node_obj}.json"),
        }
    return payloads


def _graph_stage_payloads(corpus, cfg, workdir, node_paths):
    """Plan the graph-level stage runs; one per (node objective, graph objective)."""
    payloads = {}
    if cfg.graph_epochs == 0:
        return payloads
    for _, node_obj, graph_obj in SETUPS:
        if graph_obj is None:
            continue
        key = (node_obj, graph_obj)
        if key in payloads:
            continue
        prefix = node_obj if node_obj is not None else "none"
        payloads[key] = {
            "corpus": corpus,
            "objective": graph_obj,
            "epochs": cfg.graph_epochs,
            "batch_size": cfg.batch_size,
            "lr": cfg.lr,
            "seed": _derive_seed(cfg.seed, 2, _STAGE_CODE[node_obj],
                                 _STAGE_CODE[graph_obj]),
            "hidden_dim": cfg.hidden_dim,
            "n_layers": cfg.n_layers,
            "n_heads": cfg.n_heads,
            "init_checkpoint": node_paths.get(node_obj),
            "out_path": str(Path(workdir) / f"stage_{prefix}_{graph_obj}.json"),
        }
    return payloads


def _run_batch(payloads, fn, jobs):
    if not payloads:
        return []
    if jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, payloads))
    return [fn(p) for p in payloads]


def experiment_matrix(pretrain_corpus: Corpus, finetune_corpus: Corpus,
                      cfg: ExperimentConfig) -> ExperimentReport:
    """Run all six pre-training setups through k-fold fine-tuning.

    Always produces the standard full-supervision section; when
    cfg.low_resource is set, a second section trains on that many sampled
    graphs per fold and evaluates on everything that was not sampled.
    """
    t_start = time.monotonic()
    if pretrain_corpus.feature_dim != finetune_corpus.feature_dim:
        raise ValueError(
            f"pretrain feature_dim {pretrain_corpus.feature_dim} != "
            f"finetune feature_dim {finetune_corpus.feature_dim}"
        )
    for i, g in enumerate(finetune_corpus.graphs):
        if g.label is None:
            raise ValueError(f"finetune corpus graph {i} ({g.id}) has no label")

    plan = kfold(len(finetune_corpus), k=cfg.k, seed=cfg.seed)
    if cfg.low_resource is not None:
        min_train = min(len(train) for train, _ in plan.folds)
        if cfg.low_resource > min_train:
            raise ValueError(
                f"low_resource {cfg.low_resource} exceeds smallest fold "
                f"training set ({min_train})"
            )

    with tempfile.TemporaryDirectory(prefix="newsgraph_exp_") as workdir:
        node_payloads = _pretrain_stage_payloads(pretrain_corpus, cfg, workdir)
        node_order = list(node_payloads)
        node_results = _run_batch([node_payloads[k] for k in node_order],
                                  _run_stage, cfg.jobs)
        node_paths = dict(zip(node_order, node_results))

        graph_payloads = _graph_stage_payloads(pretrain_corpus, cfg, workdir,
                                               node_paths)
        graph_order = list(graph_payloads)
        graph_results = _run_batch([graph_payloads[k] for k in graph_order],
                                   _run_stage, cfg.jobs)
        graph_paths = dict(zip(graph_order, graph_results))

        setup_ckpt = {}
        for name, node_obj, graph_obj in SETUPS:
            if graph_obj is not None and (node_obj, graph_obj) in graph_paths:
                setup_ckpt[name] = graph_paths[(node_obj, graph_obj)]
            elif node_obj is not None and node_obj in node_paths:
                setup_ckpt[name] = node_paths[node_obj]
            else:
                setup_ckpt[name] = None

        modes = [("standard", None)]
        if cfg.low_resource is not None:
            modes.append(("low_resource", cfg.low_resource))
        cell_payloads = []
        for mode, train_count in modes:
            for name, _n, _g in SETUPS:
                for fold, (train_idx, test_idx) in enumerate(plan.folds):
                    cell_payloads.append({
                        "mode": mode,
                        "setup": name,
                        "fold": fold,
                        "corpus": finetune_corpus,
                        "train_idx": train_idx,
                        "test_idx": test_idx,
                        "checkpoint": setup_ckpt[name],
                        "epochs": cfg.finetune_epochs,
                        "batch_size": cfg.batch_size,
                        "lr": cfg.lr,
                        "seed": _derive_seed(cfg.seed, 3, fold),
                        "hidden_dim": cfg.hidden_dim,
                        "n_layers": cfg.n_layers,
                        "n_heads": cfg.n_heads,
                        "train_count": train_count,
                    })
        cell_results = _run_batch(cell_payloads, _run_cell, cfg.jobs)

    by_key = {(mode, setup, fold): m for mode, setup, fold, m, _n in cell_results}

    def section(mode):
        setups = []
        for name, node_obj, graph_obj in SETUPS:
            per_fold = tuple(by_key[(mode, name, f)] for f in range(cfg.k))
            setups.append(SetupResult(name, node_obj, graph_obj, per_fold,
                                      mean_metrics(per_fold)))
        sig = {}
        for metric in ("macro_f1", "accuracy"):
            scores = {s.name: [getattr(m, metric) for m in s.per_fold]
                      for s in setups}
            sig[metric] = paired_ttest_bonferroni(scores, alpha=cfg.alpha,
                                                  metric=metric)
        return tuple(setups), sig

    standard, standard_sig = section("standard")
    low, low_sig = (None, None)
    if cfg.low_resource is not None:
        low, low_sig = section("low_resource")

    return ExperimentReport(
        config=dataclasses.asdict(cfg),
        pretrain_corpus=pretrain_corpus.name,
        finetune_corpus=finetune_corpus.name,
        fold_sizes=plan.test_sizes(),
        standard=standard,
        standard_significance=standard_sig,
        low_resource=low,
        low_resource_significance=low_sig,
        low_resource_train_count=cfg.low_resource,
        elapsed_seconds=time.monotonic() - t_start,
    )


def _format_section(title, setups, sig, columns):
    lines = [title]
    name_w = max(len("node-level"),
                 max(len(s.node_objective or "none") for s in setups))
    graph_w = max(len("graph-level"),
                  max(len(s.graph_objective or "none") for s in setups))
    header = f"{'node-level':<{name_w}}  {'graph-level':<{graph_w}}"
    for col in columns:
        header += f"  {col[1]:>6}"
    lines.append(header)
    for s in setups:
        row = f"{s.node_objective or 'none':<{name_w}}  {s.graph_objective or 'none':<{graph_w}}"
        for attr, _label in columns:
            row += f"  {getattr(s.mean, attr):6.3f}"
        lines.append(row)
    for metric in ("macro_f1", "accuracy"):
        rep = sig[metric]
        hits = rep.significant_pairs()
        if hits:
            detail = "; ".join(
                f"{p.setup_a} vs {p.setup_b} (p_adj={p.p_adjusted:.4g})"
                for p in hits
            )
        else:
            detail = "none"
        lines.append(
            f"significant pairs ({metric}, alpha={rep.alpha}, "
            f"{rep.n_comparisons} comparisons): {detail}"
        )
    return lines


def format_report(report: ExperimentReport) -> str:
    """Aligned plain-text rendering of an ExperimentReport."""
    lines = [
        f"experiment: pretrain={report.pretrain_corpus} "
        f"finetune={report.finetune_corpus} "
        f"seed={report.config['seed']} folds={report.config['k']}",
        "fold sizes: " + " ".join(str(s) for s in report.fold_sizes),
        "",
    ]
    lines += _format_section(
        f"fine-tuning on {report.finetune_corpus} ({report.config['k']}-fold means)",
        report.standard, report.standard_significance,
        [("precision", "P"), ("recall", "R"), ("accuracy", "ACC"),
         ("macro_f1", "F1")],
    )
    if report.low_resource is not None:
        lines.append("")
        lines += _format_section(
            f"low-resource fine-tuning ({report.low_resource_train_count} "
            f"labeled samples)",
            report.low_resource, report.low_resource_significance,
            [("accuracy", "ACC"), ("macro_f1", "F1")],
        )
    return "\n".join(lines) + "\n"
