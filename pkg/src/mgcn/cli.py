"""Command-line entry points.

One subcommand per pipeline stage plus `run` for the whole chain and
`bench` for forward-pass timings. Exit codes: 0 on success, 2 for
configuration problems, 3 for data problems, 4 when optimization
diverges.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .datagen import (TwinConfig, generate_twins, save_manifest, synth_graph,
                      twin_manifest)
from .errors import ConfigError, DataError, DivergenceError, IntegrityError
from .graph import (AnchorLinkSet, load_anchor_links, load_graph,
                    save_anchor_links, save_graph)
from .hypergraph import (HYPERGRAPH_STRATEGIES, load_hypergraph,
                         save_hypergraph)
from .model import MODES, ModelConfig, save_model
from .partition import (inject_shared_nodes, partition_graph,
                        save_partition_manifest)
from .pipeline import (PipelineConfig, bench_csv, bench_forward,
                       build_hypergraph, run_pipeline)
from .predictor import (ClassifierConfig, evaluate, format_report,
                        load_classifier, pair_features, predict,
                        save_predictions, save_report)
from .reconcile import (LinearMap, PartitionMaps, apply_maps, fit_anchor_map,
                        fit_partition_maps, load_maps, save_maps)
from .training import TrainConfig, save_loss_trace, train_embeddings

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _parse_params(tokens) -> dict:
    """key=value tokens into a dict with numeric coercion."""
    out = {}
    for tok in tokens or ():
        if "=" not in tok:
            raise ConfigError(f"expected key=value, got {tok!r}")
        key, _, value = tok.partition("=")
        try:
            out[key] = int(value)
        except ValueError:
            try:
                out[key] = float(value)
            except ValueError:
                out[key] = value
    return out


def _load_embeddings(path):
    with np.load(path, allow_pickle=False) as data:
        if "embeddings" not in data:
            raise DataError(f"{path}: not an embeddings file")
        x = data["embeddings"]
        ids = data["node_ids"] if "node_ids" in data else \
            np.arange(x.shape[0], dtype=np.int64)
    return ids, x


def _save_embeddings(path, x, ids=None) -> None:
    if ids is None:
        ids = np.arange(x.shape[0], dtype=np.int64)
    np.savez(path, embeddings=x, node_ids=np.asarray(ids, dtype=np.int64))


def _load_int_anchors(path) -> AnchorLinkSet:
    raw, labels = load_anchor_links(path)
    try:
        pairs = np.array([(int(a), int(b)) for a, b in raw], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"{path}: anchor ids must be integers here "
                        f"({exc})") from exc
    return AnchorLinkSet(pairs, labels)


def cmd_datagen(args) -> int:
    seed = _seed(args)
    params = _parse_params(args.param)
    base = synth_graph(args.kind, args.nodes, params, seed=seed)
    cfg = TwinConfig(alpha_s=args.alpha_s, alpha_c=args.alpha_c, seed=seed)
    twins = generate_twins(base, cfg)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    save_graph(out / "base.txt", base)
    save_graph(out / "g1.txt", twins.g1,
               [str(v) for v in twins.nodes1.tolist()])
    save_graph(out / "g2.txt", twins.g2,
               [str(v) for v in twins.nodes2.tolist()])
    base_pairs = [(str(twins.nodes1[i]), str(twins.nodes2[j]))
                  for i, j in twins.anchors.pairs]
    save_anchor_links(out / "anchors.txt", base_pairs, twins.anchors.labels)
    save_manifest(out / "manifest.json", twin_manifest(base, cfg, twins))
    print(f"wrote twins to {out}: {twins.g1.node_count}/"
          f"{twins.g2.node_count} nodes, {len(twins.anchors)} anchors")
    return EXIT_OK


def cmd_partition(args) -> int:
    g, labels = load_graph(args.graph)
    ps = partition_graph(g, args.n_min, args.n_max, passes=args.passes,
                         seed=_seed(args))
    if args.shared > 0:
        ps = inject_shared_nodes(ps, g, args.shared, strategy=args.strategy,
                                 seed=_seed(args))
    save_partition_manifest(args.out, ps, labels)
    sizes = ", ".join(str(len(p.owned)) for p in ps.partitions)
    print(f"{len(ps)} partition(s) with owned sizes [{sizes}], "
          f"{len(ps.shared_nodes)} shared nodes -> {args.out}")
    return EXIT_OK


def cmd_build_hypergraph(args) -> int:
    g, labels = load_graph(args.graph)
    anchor_nodes = None
    if args.anchor_nodes is not None:
        tokens = args.anchor_nodes.read_text().split()
        if labels is not None:
            lookup = {lab: i for i, lab in enumerate(labels)}
            try:
                anchor_nodes = np.array([lookup[t] for t in tokens],
                                        dtype=np.int64)
            except KeyError as exc:
                raise DataError(f"anchor node {exc} not in graph") from exc
        else:
            anchor_nodes = np.array([int(t) for t in tokens], dtype=np.int64)
    params = {"hops": args.hops, "decay": args.decay,
              "communities": args.communities, "dim": args.latent_dim}
    h = build_hypergraph(g, args.strategy, params, anchor_nodes,
                         seed=_seed(args))
    save_hypergraph(args.out, h)
    print(f"{h.edge_count} hyperedges over {h.node_count} nodes "
          f"-> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    g, _ = load_graph(args.graph)
    h = load_hypergraph(args.hypergraph)
    mc = ModelConfig(layers=args.layers, dim=args.dim,
                     activation=args.activation)
    tc = TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                     batch_size=args.batch_size, optimizer=args.optimizer,
                     negatives=args.negatives, seed=_seed(args))
    res = train_embeddings(g, h, mc, tc, mode=args.mode)
    save_model(args.model_out, res.params, mc)
    _save_embeddings(args.embeddings_out, res.embeddings)
    if args.trace_out is not None:
        save_loss_trace(args.trace_out, res.trace)
    if res.trace:
        print(f"trained {res.epochs_run} epoch(s); final loss "
              f"{res.trace[-1][1]:.4f}")
    else:
        print("trained 0 epochs")
    return EXIT_OK


def cmd_reconcile(args) -> int:
    if args.phase == "partition":
        if len(args.embeddings) < 2:
            raise ConfigError("partition phase needs at least two "
                              "embedding files (reference first)")
        if args.shared is None:
            raise ConfigError("partition phase needs --shared")
        spaces = [_load_embeddings(p) for p in args.embeddings]
        shared = np.array([int(t) for t in args.shared.read_text().split()],
                          dtype=np.int64)
        maps = fit_partition_maps(spaces, shared)
        save_maps(args.out, maps)
        if args.merged_out is not None:
            count = args.node_count
            if count == 0:
                count = max(int(ids.max()) for ids, _ in spaces) + 1
            merged = apply_maps(spaces, maps, count)
            _save_embeddings(args.merged_out, merged)
        print(f"fitted {maps.partition_count - 1} map(s) -> {args.out}")
        return EXIT_OK
    if args.embeddings1 is None or args.embeddings2 is None:
        raise ConfigError("anchor phase needs --embeddings1 and "
                          "--embeddings2")
    if args.anchors is None:
        raise ConfigError("anchor phase needs --anchors")
    _, x1 = _load_embeddings(args.embeddings1)
    _, x2 = _load_embeddings(args.embeddings2)
    anchors = _load_int_anchors(args.anchors)
    m = fit_anchor_map(x1, x2, anchors)
    save_maps(args.out, PartitionMaps([LinearMap.identity(x1.shape[1]), m],
                                      [0.0, 0.0]))
    if args.mapped_out is not None:
        _save_embeddings(args.mapped_out, m.apply(x2))
    print(f"fitted anchor map on {int((anchors.labels == 1).sum())} "
          f"pair(s) -> {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    clf = load_classifier(args.classifier)
    _, x1 = _load_embeddings(args.embeddings1)
    _, x2 = _load_embeddings(args.embeddings2)
    if args.anchor_map is not None:
        maps = load_maps(args.anchor_map)
        x2 = maps.maps[1].apply(x2)
    anchors = _load_int_anchors(args.pairs)
    feats = pair_features(x1, x2, anchors.pairs)
    scores = predict(clf, feats)
    predicted = (scores >= args.threshold).astype(np.int64)
    save_predictions(args.out, anchors.pairs, scores, predicted)
    print(f"scored {len(scores)} pair(s) -> {args.out}")
    return EXIT_OK


def _load_predictions(path):
    pairs = []
    predicted = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataError(f"{path}: expected 'id1 id2 score label' "
                                f"rows, got {line!r}")
            pairs.append((int(parts[0]), int(parts[1])))
            predicted.append(int(parts[3]))
    return pairs, np.array(predicted, dtype=np.int64)


def cmd_evaluate(args) -> int:
    pairs, predicted = _load_predictions(args.predictions)
    truth = _load_int_anchors(args.truth)
    lookup = {(int(a), int(b)): int(lab)
              for (a, b), lab in zip(truth.pairs, truth.labels)}
    try:
        labels = np.array([lookup[p] for p in pairs], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"predicted pair {exc} has no ground-truth "
                        f"label") from exc
    report = evaluate(predicted, labels)
    print(format_report(report))
    if args.out is not None:
        save_report(args.out, report)
    return EXIT_OK


def _pipeline_config(args) -> PipelineConfig:
    """Merge the JSON config file (if any) with command-line overrides."""
    settings = {}
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON "
                              f"({exc})") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        settings.update(loaded)
    model = ModelConfig(**settings.pop("model", {}))
    train = TrainConfig(**settings.pop("train", {}))
    classifier = ClassifierConfig(**settings.pop("classifier", {}))

    model_over = {k: v for k, v in (("dim", args.dim),
                                    ("layers", args.layers),
                                    ("activation", args.activation))
                  if v is not None}
    if model_over:
        model = dataclasses.replace(model, **model_over)
    train_over = {k: v for k, v in (("epochs", args.epochs),
                                    ("learning_rate", args.lr),
                                    ("batch_size", args.batch_size))
                  if v is not None}
    if train_over:
        train = dataclasses.replace(train, **train_over)
    clf_over = {k: v for k, v in (("hidden", args.hidden),
                                  ("epochs", args.clf_epochs))
                if v is not None}
    if clf_over:
        classifier = dataclasses.replace(classifier, **clf_over)

    plain = {
        "workdir": args.workdir,
        "graph1": None if args.graph1 is None else str(args.graph1),
        "graph2": None if args.graph2 is None else str(args.graph2),
        "anchors": None if args.anchors is None else str(args.anchors),
        "hyper_strategy": args.hyper_strategy,
        "partitions": args.partitions,
        "mode": args.mode,
        "train_fraction": args.train_fraction,
        "neg_ratio": args.neg_ratio,
        "n_min": args.n_min,
        "n_max": args.n_max,
        "n_shared": args.n_shared,
        "seed": args.seed,
        "jobs": args.jobs,
    }
    for key, value in plain.items():
        if value is not None:
            settings[key] = value
    if args.hyper_param:
        settings["hyper_params"] = _parse_params(args.hyper_param)
    return PipelineConfig(model=model, train=train, classifier=classifier,
                          **settings)


def cmd_run(args) -> int:
    if args.partitions == "1":
        args.partitions = "single"
    config = _pipeline_config(args)
    manifest = run_pipeline(config)
    print(format_report(manifest.report))
    if manifest.baseline is not None:
        print(f"degree baseline macro f1: {manifest.baseline.macro_f1:.4f}")
    print(f"artifacts in {config.workdir}")
    return EXIT_OK


def cmd_bench(args) -> int:
    scales = [int(t) for t in args.scales.split(",") if t]
    models = [t for t in args.models.split(",") if t]
    rows = bench_forward(scales, models, repeats=args.repeats, dim=args.dim,
                         seed=_seed(args))
    text = bench_csv(rows)
    if args.out is not None:
        args.out.write_text(text)
        print(f"wrote {len(rows)} timing row(s) to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _global_flags(parser, suppress: bool) -> None:
    """Flags accepted both before and after the subcommand name.

    The subparser copies prevail over the top-level copies, so on the
    subparsers they default to SUPPRESS: an omitted flag then leaves the
    top-level value alone instead of clobbering it with a default.
    """
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default,
                        help="root random seed (default 0)")
    parser.add_argument("--jobs", type=int, default=default,
                        help="parallel workers for partition training")
    parser.add_argument("--config", type=Path, default=default,
                        help="JSON file with pipeline settings (run only)")
    parser.add_argument("--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False,
                        help="log stage progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgcn",
        description="Multi-level graph convolution pipeline for anchor "
                    "link prediction")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        _global_flags(p, suppress=True)
        return p

    p = add_parser("datagen", help="generate twin networks")
    p.add_argument("--kind", default="preferential-attachment",
                   choices=("preferential-attachment", "small-world",
                            "planted-communities"))
    p.add_argument("--nodes", type=int, default=2000)
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="generator parameter, repeatable")
    p.add_argument("--alpha-s", type=float, default=0.9,
                   help="per-twin edge retention")
    p.add_argument("--alpha-c", type=float, default=0.9,
                   help="overlap control")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_datagen)

    p = add_parser("partition", help="partition a graph")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--n-min", type=int, default=1000)
    p.add_argument("--n-max", type=int, default=15000)
    p.add_argument("--passes", type=int, default=10)
    p.add_argument("--shared", type=int, default=1000,
                   help="shared nodes injected into every partition")
    p.add_argument("--strategy", default="degree",
                   choices=("degree", "random"))
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_partition)

    p = add_parser("build-hypergraph", help="construct hyperedges")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--strategy", default="neighborhood",
                   choices=HYPERGRAPH_STRATEGIES)
    p.add_argument("--hops", type=int, default=1)
    p.add_argument("--decay", type=float, default=1.0,
                   help="membership weight of non-center ball members")
    p.add_argument("--communities", type=int, default=12)
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--anchor-nodes", type=Path, default=None,
                   help="file listing anchor node labels")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_build_hypergraph)

    p = add_parser("train", help="train embeddings on one graph")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--hypergraph", type=Path, required=True)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dim", type=int, default=200)
    p.add_argument("--activation", default="tanh",
                   choices=("relu", "tanh"))
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--optimizer", default="adam", choices=("adam", "sgd"))
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--mode", default="mgcn", choices=MODES)
    p.add_argument("--model-out", type=Path, required=True)
    p.add_argument("--embeddings-out", type=Path, required=True)
    p.add_argument("--trace-out", type=Path, default=None)
    p.set_defaults(func=cmd_train)

    p = add_parser("reconcile", help="align embedding spaces")
    p.add_argument("--phase", required=True, choices=("partition", "anchor"))
    p.add_argument("--embeddings", type=Path, nargs="*", default=[],
                   help="partition phase: embedding files, reference first")
    p.add_argument("--shared", type=Path, default=None,
                   help="partition phase: file of shared node ids")
    p.add_argument("--embeddings1", type=Path, default=None)
    p.add_argument("--embeddings2", type=Path, default=None)
    p.add_argument("--anchors", type=Path, default=None,
                   help="anchor phase: training anchor links")
    p.add_argument("--node-count", type=int, default=0,
                   help="rows in the merged matrix (0 = from ids)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--merged-out", type=Path, default=None)
    p.add_argument("--mapped-out", type=Path, default=None)
    p.set_defaults(func=cmd_reconcile)

    p = add_parser("predict", help="score candidate pairs")
    p.add_argument("--classifier", type=Path, required=True)
    p.add_argument("--embeddings1", type=Path, required=True)
    p.add_argument("--embeddings2", type=Path, required=True)
    p.add_argument("--anchor-map", type=Path, default=None)
    p.add_argument("--pairs", type=Path, required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_predict)

    p = add_parser("evaluate", help="score predictions against truth")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = add_parser("run", help="full pipeline")
    p.add_argument("--graph1", type=Path, default=None)
    p.add_argument("--graph2", type=Path, default=None)
    p.add_argument("--anchors", type=Path, default=None)
    p.add_argument("--workdir", default=None)
    p.add_argument("--hyper-strategy", dest="hyper_strategy", default=None,
                   choices=HYPERGRAPH_STRATEGIES)
    p.add_argument("--hyper-param", action="append", metavar="KEY=VALUE",
                   help="hypergraph parameter, e.g. hops=2 or decay=0.1")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--activation", default=None,
                   choices=("relu", "tanh"))
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None,
                   help="classifier hidden width")
    p.add_argument("--clf-epochs", type=int, default=None,
                   help="classifier training epochs")
    p.add_argument("--train-fraction", type=float, default=None)
    p.add_argument("--neg-ratio", type=float, default=None)
    p.add_argument("--n-min", type=int, default=None)
    p.add_argument("--n-max", type=int, default=None)
    p.add_argument("--n-shared", type=int, default=None)
    p.add_argument("--partitions", default=None, choices=("1", "auto"))
    p.add_argument("--mode", default=None, choices=MODES)
    p.set_defaults(func=cmd_run)

    p = add_parser("bench", help="forward-pass timing table")
    p.add_argument("--scales", default="1000,5000,10000",
                   help="comma-separated node counts")
    p.add_argument("--models", default="gcn,mgcn",
                   help="comma-separated model names")
    p.add_argument("--repeats", type=int, default=1000)
    p.add_argument("--dim", type=int, default=200)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, IntegrityError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
