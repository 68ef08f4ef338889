"""Command-line entry point: ``workgraph gen | preprocess | train | eval | explain``.

Options may also come from a flat ``key = value`` file given with
``--config``; explicit flags win over the file, and ``WORKGRAPH_SEED``
supplies the seed when neither sets one. Every command writes a
``manifest.json`` with the fully resolved options into its output dir.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Sequence

from . import __version__, tasks
from .errors import DataError, NumericalError
from .explain import attention_for_graph, export_dot, trace_attention
from .graph_builder import connect_z_to_all, drop_z_edges
from .kg_store import augment_inverse_edges, load_entity_embeddings, read_kg, serialize_kg
from .model import NORMALIZATION_MODES, POOLING_MODES, GraphReasoner, ModelConfig, TokenVocab
from .pipeline import PRUNE_MODES, PreprocessConfig, PreprocessStats, load_cache, preprocess, save_cache
from .relevance import SCORER_KINDS, load_external_scores, make_scorer
from .retrieval import read_examples, write_examples
from .trainer import TrainConfig, evaluate, train

logger = logging.getLogger("workgraph")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
ABLATIONS = ("no_z_edges", "z_to_all", "no_relevance", "no_type_embedding", "no_relation_embedding")
LOCK_NAME = ".workgraph.lock"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- config handling

def read_flat_config(path: str | Path) -> dict[str, str]:
    """``key = value`` per line; ``#`` starts a comment. Keys use underscores or dashes."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> argparse.Namespace:
    """Fill unset options from the config file, then the seed from the environment."""
    actions = {a.dest: a for a in parser._actions}
    if getattr(args, "config", None):
        for key, raw in read_flat_config(args.config).items():
            if key not in actions or key in ("command", "config", "help"):
                raise UsageError(f"unknown config key {key!r}")
            if getattr(args, key) is not None:
                continue
            action = actions[key]
            if isinstance(action, argparse._AppendAction):
                value = [v.strip() for v in raw.split(",") if v.strip()]
            elif isinstance(action, argparse._StoreTrueAction):
                value = raw.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    value = action.type(raw) if action.type else raw
                except (TypeError, ValueError):
                    raise UsageError(f"bad value for {key}: {raw!r}") from None
                if action.choices and value not in action.choices:
                    raise UsageError(f"{key} must be one of {list(action.choices)}")
            setattr(args, key, value)
    if hasattr(args, "seed") and args.seed is None:
        env = os.environ.get("WORKGRAPH_SEED")
        if env is not None:
            try:
                args.seed = int(env)
            except ValueError:
                raise UsageError(f"WORKGRAPH_SEED must be an integer, got {env!r}") from None
    for dest, action in actions.items():
        if dest != "help" and getattr(args, dest, None) is None and action.default is None:
            if dest in _DEFAULTS:
                setattr(args, dest, _DEFAULTS[dest])
    return args


_DEFAULTS = {
    "seed": 0, "n": 50, "m": 3, "p": 0.05, "count": 100, "k": 2, "max_nodes": 200,
    "scorer": "overlap_standin", "prune": "relevance", "epochs": 30, "batch_size": 32,
    "lr_encoder": 1e-3, "lr_gnn": 1e-3, "grad_clip": 1.0, "D": 200, "L": 5, "dropout": 0.2,
    "pooling": "attention", "normalization": "outgoing", "hit": "1,3", "choice": 0,
    "top_b": 2, "min_alpha": 0.1, "ablate": [], "marker_fraction": 0.2, "task": "logical",
}


@contextmanager
def output_lock(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataError(f"output directory {directory} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def write_manifest(directory: Path, args: argparse.Namespace, outputs: Sequence[str], extra: dict | None = None):
    opts = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    manifest = {"workgraph_version": __version__, "command": args.command, "options": opts,
                "seed": getattr(args, "seed", None), "outputs": sorted(outputs)}
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str) + "\n",
                                             encoding="utf-8")


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} path does not exist: {p}")
    return p


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    if args.n < 10 or args.m < 2 or not 0 <= args.p <= 1 or args.count < 1:
        raise UsageError("gen needs n >= 10, m >= 2, 0 <= p <= 1 and count >= 1")
    out = Path(args.out)
    with output_lock(out):
        marker = "red" if args.task == "bridge" else None
        toy = tasks.gen_toy_kg(args.n, args.m, args.p, args.seed, marker=marker,
                               marker_fraction=args.marker_fraction if marker else 0.0)
        (out / "kg.tsv").write_text(toy.tsv(), encoding="utf-8")
        files = ["kg.tsv", "dataset.jsonl"]
        if args.task == "logical":
            per = max(1, args.count // len(tasks.PATTERNS))
            examples = tasks.gen_logical_queries(toy, per, seed=args.seed)
        elif args.task == "negation":
            data = tasks.gen_negation_qa(toy, args.count, seed=args.seed)
            examples = data.pairs
            write_examples(out / "substitutions.jsonl", data.substitutions)
            files.append("substitutions.jsonl")
        else:
            examples = tasks.gen_bridge_qa(toy, args.count, seed=args.seed)
        write_examples(out / "dataset.jsonl", examples)
        write_manifest(out, args, files + ["manifest.json"], {"num_examples": len(examples)})
    print(f"wrote {len(examples)} examples to {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    kg = augment_inverse_edges(read_kg(_require(args.kg, "kg")))
    examples = read_examples(_require(args.dataset, "dataset"))
    external = None
    if args.scorer == "external_file":
        external_ids = load_external_scores(_require(args.scores, "scores").read_text(encoding="utf-8"), kg)
        external = {kg.entity_name(v): s for v, s in external_ids.items()}
    scorer = make_scorer(args.scorer, external)
    config = PreprocessConfig(k=args.k, max_nodes=args.max_nodes, prune=args.prune, seed=args.seed)
    if args.k < 1 or args.max_nodes < 1:
        raise UsageError("k and max_nodes must be >= 1")
    out = Path(args.out)
    with output_lock(out):
        stats = PreprocessStats()
        items = preprocess(kg, examples, scorer, config, stats)
        summary = stats.summary()
        retrieved = sum(stats.retrieved_nodes)
        summary["pruning_rate"] = 1.0 - sum(stats.kept_nodes) / retrieved if retrieved else 0.0
        save_cache(out, items, summary)
        (out / "kg.tsv").write_text(serialize_kg(kg), encoding="utf-8")
        write_manifest(out, args, ["graphs.wgt", "index.json", "stats.json", "kg.tsv", "manifest.json"])
    print(f"cached {summary['graphs']} graphs for {len(items)} examples; "
          f"mean |V_sub| {summary['retrieved_nodes']['mean']:.1f} -> {summary['kept_nodes']['mean']:.1f}")
    return EXIT_OK


def _graph_fn(ablations: Sequence[str]):
    if "no_z_edges" in ablations and "z_to_all" in ablations:
        raise UsageError("no_z_edges and z_to_all are mutually exclusive")
    if "no_z_edges" in ablations:
        return drop_z_edges
    if "z_to_all" in ablations:
        return connect_z_to_all
    return None


def _embeddings(args, cache: Path):
    if not args.embeddings:
        return None
    kg = read_kg(cache / "kg.tsv")
    return load_entity_embeddings(_require(args.embeddings, "embeddings").read_text(encoding="utf-8"), kg)


def cmd_train(args) -> int:
    cache = _require(args.cache, "cache")
    ablations = list(args.ablate)
    unknown = sorted(set(ablations) - set(ABLATIONS))
    if unknown:
        raise UsageError(f"unknown ablation(s) {unknown}; choose from {list(ABLATIONS)}")
    graph_fn = _graph_fn(ablations)
    items = load_cache(cache)
    if not items:
        raise DataError("graph cache holds no examples")
    dev = load_cache(_require(args.dev_cache, "dev-cache")) if args.dev_cache else None
    num_entities = read_kg(cache / "kg.tsv").num_entities
    mcfg = ModelConfig(D=args.D, L=args.L, dropout_p=args.dropout, pooling=args.pooling,
                       normalize_attention_over=args.normalization,
                       use_relevance_in_attention="no_relevance" not in ablations,
                       use_type_embedding="no_type_embedding" not in ablations,
                       use_relation_embedding="no_relation_embedding" not in ablations)
    tcfg = TrainConfig(batch_size=args.batch_size, lr_encoder=args.lr_encoder, lr_gnn=args.lr_gnn,
                       epochs=args.epochs, seed=args.seed, grad_clip_norm=args.grad_clip)
    vocab = TokenVocab.from_graphs(g for it in items for g in it.graphs)
    model = GraphReasoner(mcfg, items[0].graphs[0].num_relations, num_entities, vocab, _embeddings(args, cache),
                  seed=args.seed)
    out = Path(args.out)
    with output_lock(out):
        result = train(items, model, tcfg, dev=dev, graph_fn=graph_fn)
        model.save(out, {"ablations": ablations, "train": tcfg.to_dict(), "best_epoch": result.best_epoch})
        result.write_csv(out / "loss_curve.csv")
        write_manifest(out, args, ["checkpoint.wgt", "model.json", "loss_curve.csv", "manifest.json"])
    last = result.loss_curve[-1]
    print(f"trained {tcfg.epochs} epochs; final train loss {last[1]:.4f}; best epoch {result.best_epoch}")
    return EXIT_OK


def _load_model(args, cache: Path) -> tuple[GraphReasoner, object]:
    model_dir = _require(args.model, "model")
    model = GraphReasoner.load(model_dir, _embeddings(args, cache))
    return model, _graph_fn(model.meta.get("ablations", []))


def _check_layout(model: GraphReasoner, items) -> None:
    for it in items:
        for g in it.graphs:
            if g.num_relations != model.num_relations:
                raise DataError(f"cache has {g.num_relations} relations but the checkpoint expects "
                                f"{model.num_relations}")


def cmd_eval(args) -> int:
    cache = _require(args.cache, "cache")
    try:
        ks = sorted({int(k) for k in str(args.hit).split(",") if k.strip()})
    except ValueError:
        raise UsageError(f"--hit expects comma-separated integers, got {args.hit!r}") from None
    if not ks or min(ks) < 1:
        raise UsageError("--hit values must be >= 1")
    model, graph_fn = _load_model(args, cache)
    items = load_cache(cache)
    _check_layout(model, items)
    report = evaluate(items, model, ks, graph_fn=graph_fn)
    out = Path(args.out)
    with output_lock(out):
        with open(out / "report.csv", "w", encoding="utf-8") as fh:
            fh.write("id,gold,pred,rank," + ",".join(f"hit@{k}" for k in ks) + "\n")
            for row in report.per_example:
                hits = ",".join(str(int(row["rank"] < k)) for k in ks)
                fh.write(f"{row['id']},{row['gold']},{row['pred']},{row['rank']},{hits}\n")
        (out / "summary.txt").write_text(report.summary() + "\n", encoding="utf-8")
        write_manifest(out, args, ["report.csv", "summary.txt", "manifest.json"])
    print(report.summary())
    return EXIT_OK


def cmd_explain(args) -> int:
    cache = _require(args.cache, "cache")
    model, graph_fn = _load_model(args, cache)
    items = load_cache(cache)
    _check_layout(model, items)
    by_id = {it.example_id: i for i, it in enumerate(items)}
    if args.example in by_id:
        idx = by_id[args.example]
    else:
        try:
            idx = int(args.example)
        except (TypeError, ValueError):
            raise DataError(f"no example {args.example!r} in cache") from None
    if not 0 <= idx < len(items):
        raise DataError(f"example index {idx} outside 0..{len(items) - 1}")
    item = items[idx]
    if not 0 <= args.choice < item.num_choices:
        raise DataError(f"choice {args.choice} outside 0..{item.num_choices - 1}")
    wg = item.graphs[args.choice]
    if graph_fn:
        wg = graph_fn(wg)
    record = attention_for_graph(model, wg)
    trace = trace_attention(record, wg, top_b=args.top_b, min_alpha=args.min_alpha, layer=args.layer)
    out = Path(args.out)
    name = f"{item.example_id}_choice{args.choice}.dot"
    with output_lock(out):
        (out / name).write_text(export_dot(wg, trace, record, name=item.example_id), encoding="utf-8")
        write_manifest(out, args, [name, "manifest.json"], {"trace": [
            {"src": wg.names[s.src], "dst": wg.names[s.dst], "layer": s.layer, "alpha": s.alpha}
            for s in trace.steps]})
    for s in trace.steps:
        print(f"{wg.names[s.src]} -> {wg.names[s.dst]}  layer {s.layer}  alpha {s.alpha:.4f}")
    print(f"wrote {out / name}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="workgraph", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="flat key = value option file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("gen", help="generate a toy KG and a synthetic dataset")
    common(p)
    p.add_argument("--task", choices=("logical", "negation", "bridge"))
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--count", type=int, help="examples (logical, bridge) or pairs (negation)")
    p.add_argument("--marker-fraction", dest="marker_fraction", type=float)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("preprocess", help="link, retrieve, score, prune and cache working graphs")
    common(p)
    p.add_argument("--kg")
    p.add_argument("--dataset")
    p.add_argument("--k", type=int)
    p.add_argument("--max-nodes", dest="max_nodes", type=int)
    p.add_argument("--scorer", choices=SCORER_KINDS)
    p.add_argument("--scores", help="entity<TAB>score file for --scorer external_file")
    p.add_argument("--prune", choices=PRUNE_MODES)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train on a graph cache")
    common(p)
    p.add_argument("--cache")
    p.add_argument("--dev-cache", dest="dev_cache")
    p.add_argument("--embeddings", help="fixed entity embedding file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr-encoder", dest="lr_encoder", type=float)
    p.add_argument("--lr-gnn", dest="lr_gnn", type=float)
    p.add_argument("--grad-clip", dest="grad_clip", type=float)
    p.add_argument("--D", dest="D", type=int)
    p.add_argument("--L", dest="L", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--pooling", choices=POOLING_MODES)
    p.add_argument("--normalization", choices=NORMALIZATION_MODES)
    p.add_argument("--ablate", action="append", choices=ABLATIONS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and hit@k of a checkpoint on a cache")
    common(p)
    p.add_argument("--cache")
    p.add_argument("--model")
    p.add_argument("--embeddings")
    p.add_argument("--hit", help="comma-separated k values")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="attention trace and DOT export for one example")
    common(p)
    p.add_argument("--cache")
    p.add_argument("--model")
    p.add_argument("--embeddings")
    p.add_argument("--example", help="example id or 0-based index")
    p.add_argument("--choice", type=int)
    p.add_argument("--layer", type=int, help="1-based layer (default: last)")
    p.add_argument("--top-b", dest="top_b", type=int)
    p.add_argument("--min-alpha", dest="min_alpha", type=float)
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: gen, preprocess, train, eval or explain")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        args = _resolve(args, sub)
        if not args.out:
            raise UsageError("--out is required")
        if args.command == "explain" and args.example is None:
            raise UsageError("--example is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"workgraph: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"workgraph: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, KeyError, IndexError) as exc:
        print(f"workgraph: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"workgraph: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
