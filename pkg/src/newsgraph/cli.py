"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error. Every
value can come from a flag, a JSON config file (--config) or a built-in
default, in that order of precedence, and each output artifact embeds the
fully resolved configuration that produced it.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import encoder as enc
from . import evaluate as ev
from . import generate as gen
from . import graph as gr
from . import train as tr


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract wants 1
    def error(self, message):
        raise UsageError(message)


_GEN_FIELDS = (
    "seed", "n_graphs", "feature_dim", "label_balance", "post_count_range",
    "user_count_range", "retweet_fraction_mean", "timeline_fraction_mean",
    "signal_strength", "domain_shift", "couple_retweets_to_label",
    "retweet_label_coupling", "direction_seed",
)
_TRAIN_FIELDS = (
    "epochs", "batch_size", "lr", "seed", "hidden_dim", "n_layers", "n_heads",
    "init_checkpoint", "head_reinit", "train_count", "context_carry",
)
_EXPERIMENT_FIELDS = (
    "seed", "k", "hidden_dim", "n_layers", "n_heads", "batch_size", "lr",
    "node_epochs", "graph_epochs", "finetune_epochs", "low_resource", "jobs",
    "alpha",
)


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--seed", type=int, help="random seed (default 42)")
    p.add_argument("--verbose", action="store_true",
                   help="print progress lines to stderr (default off)")


def _add_train_flags(p):
    p.add_argument("--epochs", type=int,
                   help="training epochs; 0 skips training (default per objective)")
    p.add_argument("--batch-size", type=int, help="graphs per batch (default 128)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 0.001)")
    p.add_argument("--hidden-dim", type=int, help="encoder width (default 64)")
    p.add_argument("--n-layers", type=int, help="encoder layers (default 2)")
    p.add_argument("--n-heads", type=int, help="attention heads (default 2)")
    p.add_argument("--init-checkpoint",
                   help="checkpoint to start from (default none)")
    p.add_argument("--head-reinit", action=argparse.BooleanOptionalAction,
                   help="redraw task heads after loading (default false)")


def _build_parser():
    parser = _Parser(prog="newsgraph",
                     description="Pre-train, fine-tune and evaluate graph "
                                 "classifiers on article-context corpora")
    sub = parser.add_subparsers(dest="cmd", parser_class=_Parser)
    parser.set_defaults(cmd=None, handler=None, known=frozenset())

    p = sub.add_parser("corpusgen", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--preset", choices=sorted(gen.presets()),
                   help="named base config (default none)")
    p.add_argument("--out", help="corpus output path, JSONL (required)")
    p.add_argument("--name", help="corpus name (default preset name or synthetic)")
    p.add_argument("--n-graphs", type=int, help="corpus size (default 100)")
    p.add_argument("--feature-dim", type=int, help="node feature width (default 768)")
    p.add_argument("--label-balance", type=float,
                   help="fraction of label-1 graphs (default 0.5)")
    p.add_argument("--post-range", type=int, nargs=2, dest="post_count_range",
                   metavar=("MIN", "MAX"), help="post nodes per graph (default 5 60)")
    p.add_argument("--user-range", type=int, nargs=2, dest="user_count_range",
                   metavar=("MIN", "MAX"), help="user nodes per graph (default 5 50)")
    p.add_argument("--retweet-fraction", type=float, dest="retweet_fraction_mean",
                   help="mean retweet share of posts (default 0.3)")
    p.add_argument("--timeline-fraction", type=float, dest="timeline_fraction_mean",
                   help="mean timeline-tweet share (default 0.2)")
    p.add_argument("--signal-strength", type=float,
                   help="label signal in feature space (default 2.0)")
    p.add_argument("--domain-shift", type=float,
                   help="off-label mean shift (default 0.0)")
    p.add_argument("--couple-retweets", action=argparse.BooleanOptionalAction,
                   dest="couple_retweets_to_label",
                   help="tie retweet rate to the label (default true)")
    p.add_argument("--retweet-coupling", type=float, dest="retweet_label_coupling",
                   help="retweet rate shift per label (default 0.2)")
    p.add_argument("--direction-seed", type=int,
                   help="seed for the shared signal directions (default 20240101)")
    p.set_defaults(handler=_cmd_corpusgen,
                   known=frozenset(_GEN_FIELDS) | {"preset", "out", "name"})

    p = sub.add_parser("pretrain", help="run one self-supervised objective")
    _add_common(p)
    p.add_argument("--corpus", help="input corpus path (required)")
    p.add_argument("--objective",
                   choices=["node-mask", "context-pred", "retweet-count"],
                   help="pre-training task (required)")
    p.add_argument("--out", help="checkpoint output path (required)")
    p.add_argument("--runlog", help="run log path (default <out stem>.runlog.json)")
    _add_train_flags(p)
    p.add_argument("--context-carry", choices=["article", "context"],
                   help="which tower a context-pred run keeps (default article)")
    p.set_defaults(handler=_cmd_pretrain,
                   known=frozenset(_TRAIN_FIELDS) | {"corpus", "objective", "out",
                                                     "runlog"})

    p = sub.add_parser("finetune", help="supervised classification training")
    _add_common(p)
    p.add_argument("--corpus", help="labeled corpus path (required)")
    p.add_argument("--out", help="checkpoint output path (required)")
    p.add_argument("--runlog", help="run log path (default <out stem>.runlog.json)")
    _add_train_flags(p)
    p.add_argument("--train-count", type=int,
                   help="train on this many sampled graphs (default all)")
    p.set_defaults(handler=_cmd_finetune,
                   known=frozenset(_TRAIN_FIELDS) | {"corpus", "out", "runlog"})

    p = sub.add_parser("predict", help="label probabilities for a corpus")
    _add_common(p)
    p.add_argument("--corpus", help="input corpus path (required)")
    p.add_argument("--checkpoint", help="model checkpoint path (required)")
    p.add_argument("--out", help="predictions output path, JSON (required)")
    p.set_defaults(handler=_cmd_predict,
                   known=frozenset({"corpus", "checkpoint", "out", "seed"}))

    p = sub.add_parser("evaluate", help="score a checkpoint on a labeled corpus")
    _add_common(p)
    p.add_argument("--corpus", help="labeled corpus path (required)")
    p.add_argument("--checkpoint", help="model checkpoint path (required)")
    p.add_argument("--out", help="metrics output path, JSON (required)")
    p.set_defaults(handler=_cmd_evaluate,
                   known=frozenset({"corpus", "checkpoint", "out", "seed"}))

    p = sub.add_parser("experiment",
                       help="full pre-training matrix with k-fold fine-tuning")
    _add_common(p)
    p.add_argument("--pretrain", help="pre-training corpus path (required)")
    p.add_argument("--finetune", help="labeled fine-tuning corpus path (required)")
    p.add_argument("--out", help="report output path, JSON (required)")
    p.add_argument("--table", help="also write the text table here (default none)")
    p.add_argument("--k", type=int, help="cross-validation folds (default 5)")
    p.add_argument("--hidden-dim", type=int, help="encoder width (default 64)")
    p.add_argument("--n-layers", type=int, help="encoder layers (default 2)")
    p.add_argument("--n-heads", type=int, help="attention heads (default 2)")
    p.add_argument("--batch-size", type=int, help="graphs per batch (default 128)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 0.001)")
    p.add_argument("--node-epochs", type=int,
                   help="node-level stage epochs; 0 disables (default per objective)")
    p.add_argument("--graph-epochs", type=int,
                   help="graph-level stage epochs; 0 disables (default per objective)")
    p.add_argument("--finetune-epochs", type=int,
                   help="fine-tuning epochs per fold; 0 disables (default 50)")
    p.add_argument("--low-resource", type=int,
                   help="also fine-tune on this many samples per fold (default off)")
    p.add_argument("--jobs", type=int, help="parallel worker processes (default 1)")
    p.add_argument("--alpha", type=float,
                   help="significance level for pairwise tests (default 0.01)")
    p.set_defaults(handler=_cmd_experiment,
                   known=frozenset(_EXPERIMENT_FIELDS) | {"pretrain", "finetune",
                                                          "out", "table"})
    return parser


def _read_config_file(path):
    try:
        raw = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return data


def _require(resolved, key, flag):
    if resolved.get(key) is None:
        raise UsageError(f"{flag} is required")
    return resolved[key]


def _train_config(resolved, objective) -> tr.TrainConfig:
    kwargs = {k: resolved[k] for k in _TRAIN_FIELDS
              if k in resolved and resolved[k] is not None}
    return tr.TrainConfig(objective=objective, **kwargs)


def _default_runlog(out_path) -> str:
    out = Path(out_path)
    return str(out.with_name(out.stem + ".runlog.json"))


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _note(resolved, message) -> None:
    if resolved.get("verbose"):
        print(message, file=sys.stderr)


def _cmd_corpusgen(resolved) -> int:
    out = _require(resolved, "out", "--out")
    overrides = {}
    for key in _GEN_FIELDS:
        if resolved.get(key) is None:
            continue
        value = resolved[key]
        if key in ("post_count_range", "user_count_range"):
            value = tuple(value)
        overrides[key] = value
    if resolved.get("preset"):
        presets = gen.presets()
        preset = resolved["preset"]
        if preset not in presets:
            raise UsageError(
                f"--preset must be one of {sorted(presets)}, got {preset!r}"
            )
        cfg = dataclasses.replace(presets[preset], **overrides)
        name = resolved.get("name") or preset
    else:
        cfg = gen.GenConfig(**overrides)
        name = resolved.get("name") or "synthetic"
    corpus = gen.generate(cfg, name=name)
    gr.write_corpus(corpus, out)
    _note(resolved, f"corpusgen: config {dataclasses.asdict(cfg)}")
    print(f"wrote {len(corpus)} graphs to {out}")
    return 0


def _run_training(resolved, objective, runner) -> int:
    corpus_path = _require(resolved, "corpus", "--corpus")
    out = _require(resolved, "out", "--out")
    corpus = gr.read_corpus(corpus_path)
    cfg = _train_config(resolved, objective)
    _note(resolved, f"{objective}: {len(corpus)} graphs from {corpus_path}")
    params, log = runner(corpus, cfg, checkpoint_path=out)
    runlog_path = resolved.get("runlog") or _default_runlog(out)
    payload = log.to_dict()
    payload["corpus"] = str(corpus_path)
    _write_json(runlog_path, payload)
    last = log.epoch_losses[-1] if log.epoch_losses else float("nan")
    print(f"{objective}: {log.epochs} epochs, final loss {last:.6f}, "
          f"checkpoint {out}, log {runlog_path}")
    return 0


def _cmd_pretrain(resolved) -> int:
    objective = _require(resolved, "objective", "--objective").replace("-", "_")
    if objective not in tr.PRETRAIN_OBJECTIVES:
        raise UsageError(
            f"--objective must be one of {sorted(tr.PRETRAIN_OBJECTIVES)}, "
            f"got {objective!r}"
        )
    return _run_training(resolved, objective, tr.pretrain)


def _cmd_finetune(resolved) -> int:
    return _run_training(resolved, "finetune", tr.finetune)


def _load_model(resolved):
    corpus = gr.read_corpus(_require(resolved, "corpus", "--corpus"))
    ckpt = _require(resolved, "checkpoint", "--checkpoint")
    params = enc.load_checkpoint(ckpt)
    probs, preds = tr.predict(corpus, params)
    return corpus, probs, preds


def _cmd_predict(resolved) -> int:
    out = _require(resolved, "out", "--out")
    corpus, probs, preds = _load_model(resolved)
    rows = [{"id": g.id, "prob": float(p), "pred": int(y)}
            for g, p, y in zip(corpus.graphs, probs, preds)]
    _write_json(out, {"config": _echo(resolved), "predictions": rows})
    print(f"wrote {len(rows)} predictions to {out}")
    return 0


def _cmd_evaluate(resolved) -> int:
    out = _require(resolved, "out", "--out")
    corpus, _probs, preds = _load_model(resolved)
    for i, g in enumerate(corpus.graphs):
        if g.label is None:
            raise ValueError(f"graph {i} ({g.id}) has no label; cannot score")
    m = ev.confusion_and_metrics(corpus.labels(), preds)
    _write_json(out, {"config": _echo(resolved), "n_graphs": len(corpus),
                      "metrics": m.as_dict()})
    print(f"accuracy {m.accuracy:.4f}  macro_f1 {m.macro_f1:.4f}  "
          f"precision {m.precision:.4f}  recall {m.recall:.4f}")
    return 0


def _cmd_experiment(resolved) -> int:
    pre_path = _require(resolved, "pretrain", "--pretrain")
    fin_path = _require(resolved, "finetune", "--finetune")
    out = _require(resolved, "out", "--out")
    kwargs = {k: resolved[k] for k in _EXPERIMENT_FIELDS
              if k in resolved and resolved[k] is not None}
    cfg = ev.ExperimentConfig(**kwargs)
    pre = gr.read_corpus(pre_path)
    fin = gr.read_corpus(fin_path)
    _note(resolved, f"experiment: {len(pre)} pretrain / {len(fin)} finetune graphs")
    report = ev.experiment_matrix(pre, fin, cfg)
    payload = {"invocation": _echo(resolved)}
    payload.update(report.to_dict())
    _write_json(out, payload)
    table = ev.format_report(report)
    if resolved.get("table"):
        Path(resolved["table"]).write_text(table)
    print(table, end="")
    print(f"report written to {out}")
    return 0


def _echo(resolved) -> dict:
    return {k: v for k, v in sorted(resolved.items()) if k != "verbose"}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(sys.argv[1:] if argv is None else list(argv))
        if args.cmd is None:
            raise UsageError("a subcommand is required; see newsgraph --help")
        file_cfg = {}
        if args.config:
            file_cfg = _read_config_file(args.config)
            for key in file_cfg:
                if key not in args.known and key != "seed":
                    raise UsageError(
                        f"config file {args.config}: unknown field {key!r} "
                        f"for {args.cmd}"
                    )
        given = {k: v for k, v in vars(args).items()
                 if k not in ("cmd", "handler", "known", "config") and v is not None}
        resolved = dict(file_cfg)
        resolved.update(given)
        resolved.setdefault("seed", 42)
        if resolved.get("objective"):
            resolved["objective"] = str(resolved["objective"]).replace("-", "_")
        return args.handler(resolved)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    except (gr.CorpusFormatError, enc.CheckpointError, gen.GenConfigError,
            ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
