"""Command-line entry point: ``mvembed {synth,train,eval-classify,eval-link,dump-*}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from mvembed import attention, evaluate, synth
from mvembed.embedding import EmbeddingStore, TrainConfig, dump_embeddings, load_embeddings
from mvembed.graph import GraphFormatError, MultiViewGraph, Vocabulary
from mvembed.trainer import train

log = logging.getLogger("mvembed")

USAGE_ERROR = 1
RUNTIME_ERROR = 2

_BOOL_KEYS = {"no_attention", "no_collab"}
_ALIASES = {"samples": "samples_per_iter", "d": "dim", "n": "negatives", "no_attn": "no_attention"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def parse_view(text: str, base: Path | None = None):
    """``NAME=PATH[:directed]`` -> (name, path, directed)."""
    if "=" not in text:
        raise UsageError(f"bad view spec {text!r}; expected NAME=PATH[:directed]")
    name, rest = text.split("=", 1)
    directed = False
    for suffix, flag in ((":directed", True), (":undirected", False)):
        if rest.endswith(suffix):
            rest, directed = rest[: -len(suffix)], flag
    path = Path(rest)
    if base is not None and not path.is_absolute():
        path = base / path
    if not name or not rest:
        raise UsageError(f"bad view spec {text!r}")
    return name, path, directed


def read_config(path) -> dict:
    """Flat ``key=value`` file; ``view`` may repeat. Relative paths resolve against the file."""
    path = Path(path)
    base = path.parent
    out: dict = {"view": []}
    types = TrainConfig.field_types()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = _ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
            if key == "view":
                out["view"].append(parse_view(value, base))
            elif key in ("labels", "pairs", "out"):
                p = Path(value)
                out[key] = p if p.is_absolute() else base / p
            elif key in types:
                try:
                    if key in _BOOL_KEYS:
                        out[key] = value.lower() in ("1", "true", "yes", "on")
                    else:
                        out[key] = types[key](value)
                except ValueError:
                    raise UsageError(f"{path}:{lineno}: bad value for {key}") from None
            else:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
    return out


def _add_train_flags(p):
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--negatives", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--samples", type=int, dest="samples_per_iter")
    p.add_argument("--iterations", type=int)
    p.add_argument("--no-attention", action="store_const", const=True, default=None)
    p.add_argument("--no-collab", action="store_const", const=True, default=None)
    p.add_argument("--view-sampling", choices=["uniform", "edges"])
    p.add_argument("--attn-step", type=float)
    p.add_argument("--attn-epochs", type=int)
    p.add_argument("--view", action="append", default=[], metavar="NAME=PATH[:directed]")
    p.add_argument("--labels", help="attention labels, TOKEN LABEL[,LABEL...]")
    p.add_argument("--pairs", help="attention link pairs, TOKEN TOKEN")
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mvembed", description="multi-view network embedding")
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a seeded synthetic multi-view graph")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=int, default=400)
    p.add_argument("--communities", type=int, default=4)
    p.add_argument("--informative", action="append", default=[], metavar="NAME:P_IN:P_OUT")
    p.add_argument("--noise", action="append", default=[], metavar="NAME:P")
    p.add_argument("--holdout", type=float, default=0.1)
    p.add_argument("--train-fraction", type=float, default=0.1)
    p.add_argument("--weighted", action="store_true")

    p = sub.add_parser("train", help="train view-specific and robust embeddings")
    _add_train_flags(p)

    p = sub.add_parser("eval-classify", help="one-vs-rest probe, macro/micro F1")
    p.add_argument("--emb", required=True, help="embedding dump to evaluate")
    p.add_argument("--labels", required=True, help="labels of evaluation nodes")
    p.add_argument("--train", required=True, help="labels of probe training nodes")
    p.add_argument("--exclude", help="labeled-set file whose nodes are removed from test")
    p.add_argument("--penalty", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--groups", type=int, default=0, help="report per degree bucket")
    p.add_argument("--view", action="append", default=[], metavar="NAME=PATH[:directed]")
    p.add_argument("--out")

    p = sub.add_parser("eval-link", help="cosine link prediction AUC")
    p.add_argument("--emb", required=True)
    p.add_argument("--pairs", help="positive test pairs")
    p.add_argument("--negatives", help="negative pairs; sampled non-edges when omitted")
    p.add_argument("--exclude", help="pairs removed from evaluation (attention labels)")
    p.add_argument("--view", action="append", default=[], metavar="NAME=PATH[:directed]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    for name, helptext in (("dump-weights", "write per-node view weights as text"),
                           ("dump-embeddings", "write robust and view embeddings as text")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--model", required=True, help="model.npz written by train")
        p.add_argument("--vocab", help="vocabulary dump (default: next to the model)")
        p.add_argument("--out", required=True)
    return parser


def _train_config(args) -> tuple[TrainConfig, dict]:
    values = read_config(args.config) if args.config else {"view": []}
    for key in TrainConfig.field_types():
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    views = [parse_view(v) for v in args.view] if args.view else values["view"]
    paths = {k: (getattr(args, k) or values.get(k)) for k in ("labels", "pairs", "out")}
    cfg_values = {k: v for k, v in values.items() if k in TrainConfig.field_types()}
    try:
        config = TrainConfig(**cfg_values).validate()
    except ValueError as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    if not views:
        raise UsageError("train needs at least one --view NAME=PATH[:directed]")
    for _, path, _ in views:
        if not Path(path).is_file():
            raise UsageError(f"view file not found: {path}")
    if not paths["out"]:
        raise UsageError("train needs --out DIR")
    if paths["labels"] and paths["pairs"]:
        raise UsageError("give either --labels or --pairs, not both")
    for key in ("labels", "pairs"):
        if paths[key] and not Path(paths[key]).is_file():
            raise UsageError(f"{key} file not found: {paths[key]}")
    paths["views"] = views
    return config, paths


def cmd_train(args) -> int:
    config, paths = _train_config(args)
    graph = MultiViewGraph.load(paths["views"])
    labeled = None
    if paths["labels"]:
        labeled = attention.read_labels(paths["labels"], graph.vocab)
    elif paths["pairs"]:
        labeled = attention.LabeledSet("link", pairs=attention.read_pairs(paths["pairs"], graph.vocab))
    log.info("graph: %d nodes, %d views, %d directed edges", graph.num_nodes, graph.num_views,
             graph.num_edges)
    out = Path(paths["out"])
    result = train(config, graph, labeled, out_dir=out)
    arrays = dict(views=result.store.views, context=result.store.context,
                  robust=result.store.robust, weights=result.weights, z=result.attention.z)
    if result.attention.w is not None:
        arrays["w"] = result.attention.w
    np.savez(out / "model.npz", **arrays)
    with open(out / "view_names.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(v.name for v in graph.views) + "\n")
    return 0


def cmd_synth(args) -> int:
    views = []
    for text in args.informative:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"bad --informative {text!r}; expected NAME:P_IN:P_OUT")
        views.append(synth.ViewSpec(parts[0], float(parts[1]), float(parts[2])))
    for text in args.noise:
        parts = text.split(":")
        if len(parts) != 2:
            raise UsageError(f"bad --noise {text!r}; expected NAME:P")
        views.append(synth.ViewSpec.noise(parts[0], float(parts[1])))
    spec = synth.SynthSpec(num_nodes=args.nodes, communities=args.communities, holdout=args.holdout,
                           weighted=args.weighted, seed=args.seed)
    if views:
        spec.views = views
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sg = synth.generate(spec)
    paths = synth.write(sg, args.out, train_fraction=args.train_fraction)
    for key, path in paths.items():
        log.info("wrote %s: %s", key, path)
    return 0


def _emit(metrics: dict, out) -> None:
    line = evaluate.format_metrics(metrics)
    print(line)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        with open(Path(out) / "metrics.txt", "w", encoding="utf-8") as fh:
            fh.write(line + "\n")


def _require_files(*paths):
    for p in paths:
        if p and not Path(p).is_file():
            raise UsageError(f"file not found: {p}")


def cmd_eval_classify(args) -> int:
    _require_files(args.emb, args.labels, args.train, args.exclude)
    tokens, x = load_embeddings(args.emb)
    vocab = Vocabulary(tokens)
    everything = attention.read_labels(args.labels, vocab)
    names = everything.label_names
    train_set = attention.read_labels(args.train, vocab, label_names=names)
    test_nodes = np.setdiff1d(everything.nodes, train_set.nodes)
    if args.exclude:
        test_nodes = np.setdiff1d(test_nodes, attention.read_labels(args.exclude, vocab,
                                                                     label_names=names).nodes)
    y = np.zeros((len(vocab), len(names)))
    y[everything.nodes] = everything.labels
    y[train_set.nodes] = train_set.labels
    macro, micro = evaluate.evaluate_features(x, y, train_set.nodes, test_nodes, args.penalty,
                                              args.epochs, args.normalize)
    metrics = {"macro_f1": macro, "micro_f1": micro, "train": int(train_set.nodes.size),
               "test": int(test_nodes.size)}
    if args.groups > 0:
        if not args.view:
            raise UsageError("--groups needs the --view files to compute degrees")
        graph = MultiViewGraph.load([parse_view(v) for v in args.view])
        deg = np.zeros(len(vocab))
        for k in range(graph.num_views):
            d = graph.out_degree(k)
            for tok_idx, tok in enumerate(graph.vocab.tokens):
                if tok in vocab:
                    deg[vocab.index(tok)] += d[tok_idx]
        buckets = evaluate.degree_buckets(deg[test_nodes], args.groups)
        xn = evaluate.normalize_rows(x) if args.normalize else x
        clf = evaluate.fit_ovr(xn[train_set.nodes], y[train_set.nodes], args.penalty, args.epochs)
        pred = clf.predict(xn[test_nodes])
        for b in range(args.groups):
            sel = buckets == b
            if sel.any():
                metrics[f"micro_f1_group{b}"] = evaluate.f1_scores(pred[sel], y[test_nodes][sel])[1]
    _emit(metrics, args.out)
    return 0


def cmd_eval_link(args) -> int:
    if not args.pairs:
        raise UsageError("eval-link needs --pairs PATH with positive test pairs")
    _require_files(args.emb, args.pairs, args.negatives, args.exclude)
    tokens, x = load_embeddings(args.emb)
    vocab = Vocabulary(tokens)
    pos = attention.read_pairs(args.pairs, vocab)
    if args.exclude:
        drop = {tuple(sorted(p)) for p in attention.read_pairs(args.exclude, vocab).tolist()}
        pos = np.array([p for p in pos.tolist() if tuple(sorted(p)) not in drop],
                       dtype=np.int64).reshape(-1, 2)
    if args.negatives:
        neg = attention.read_pairs(args.negatives, vocab)
    else:
        if not args.view:
            raise UsageError("sampling negatives needs --view files (or pass --negatives)")
        forbidden = {tuple(p) for p in pos.tolist()}
        graph = MultiViewGraph.load([parse_view(v) for v in args.view])
        for view in graph.views:
            for s, d in zip(view.src.tolist(), view.dst.tolist()):
                a, b = graph.vocab.token(s), graph.vocab.token(d)
                if a in vocab and b in vocab:
                    forbidden.add((vocab.index(a), vocab.index(b)))
        neg = synth.sample_non_edges(len(vocab), len(pos), forbidden, args.seed)
    auc = evaluate.evaluate_links(x, pos, neg)
    _emit({"auc": auc, "positives": int(len(pos)), "negatives": int(len(neg))}, args.out)
    return 0


def _load_model(args):
    _require_files(args.model)
    model = np.load(args.model)
    vocab_path = Path(args.vocab) if args.vocab else Path(args.model).parent / "vocab.txt"
    _require_files(vocab_path)
    return model, Vocabulary.load(vocab_path)


def cmd_dump_weights(args) -> int:
    model, vocab = _load_model(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    attention.dump_weights(out / "weights.txt", model["weights"], vocab.tokens)
    return 0


def cmd_dump_embeddings(args) -> int:
    model, vocab = _load_model(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    store = EmbeddingStore(model["views"], model["context"], model["robust"])
    names_path = Path(args.model).parent / "view_names.txt"
    names = names_path.read_text().split() if names_path.is_file() else \
        [str(k) for k in range(store.num_views)]
    dump_embeddings(out / "robust.emb", store.robust, vocab.tokens)
    for k, name in enumerate(names):
        dump_embeddings(out / f"view_{name}.emb", store.views[k], vocab.tokens)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval-classify": cmd_eval_classify,
    "eval-link": cmd_eval_link,
    "dump-weights": cmd_dump_weights,
    "dump-embeddings": cmd_dump_embeddings,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return USAGE_ERROR
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return USAGE_ERROR
    except (GraphFormatError, KeyError, ValueError, OSError, FloatingPointError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
