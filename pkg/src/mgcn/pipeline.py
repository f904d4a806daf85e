"""End-to-end run orchestration: data to evaluation report.

Stages run in a fixed order. Each network is partitioned, a hypergraph
is built per partition, embeddings are trained per partition, and the
partition spaces are merged back into one space per network through
shared-node maps. The second network's space is then projected onto the
first through the anchor map fitted on training anchors, a pair
classifier is trained on the reconciled features, and held-out anchors
are scored. Every stage writes its artifacts under the working
directory and is timed in the run manifest; a failing stage leaves a
manifest recording how far the run got.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError
from .datagen import split_anchors, synth_graph
from .graph import (AnchorLinkSet, SimpleGraph, load_anchor_links, load_graph,
                    remap_anchor_links, save_anchor_links, save_graph)
from .hypergraph import (HYPERGRAPH_STRATEGIES, build_anchor_hypergraph,
                         build_centrality_hypergraph,
                         build_latent_hypergraph,
                         build_neighborhood_hypergraph, save_hypergraph)
from .model import (CHECKPOINT_VERSION, ConvStructures, MODES, ModelConfig,
                    estimate_gains, forward_values, init_params, save_model)
from .partition import inject_shared_nodes, partition_graph
from .predictor import (CLASSIFIER_VERSION, ClassifierConfig, EvalReport,
                        degree_pair_features, evaluate, pair_features,
                        predict, sample_negative_pairs, save_classifier,
                        save_predictions, save_report, train_classifier)
from .reconcile import (MAPS_VERSION, LinearMap, PartitionMaps, apply_maps,
                        fit_anchor_map, fit_partition_maps, save_maps)
from .training import TrainConfig, train_embeddings

logger = logging.getLogger(__name__)

PARTITION_MODES = ("auto", "single")


def _seed_ints(seed_seq: np.random.SeedSequence, count: int) -> list[int]:
    """Independent integer seeds derived from one seed sequence."""
    return [int(child.generate_state(1)[0])
            for child in seed_seq.spawn(count)]


@dataclass
class PipelineConfig:
    """Everything a full run needs, with desk-scale defaults.

    The graph and anchor paths may stay unset when the corresponding
    objects are handed to :func:`run_pipeline` directly.
    """

    workdir: str = "run"
    graph1: str | None = None
    graph2: str | None = None
    anchors: str | None = None
    hyper_strategy: str = "neighborhood"
    hyper_params: dict = field(
        default_factory=lambda: {"hops": 1, "decay": 0.1})
    # a smooth activation by default: with the rectifier, the training
    # objective's all-zero plateau is absorbing (dead units cannot
    # recover), and desk-scale runs collapse into it
    model: ModelConfig = field(
        default_factory=lambda: ModelConfig(activation="tanh"))
    train: TrainConfig = field(default_factory=TrainConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    n_min: int = 1000
    n_max: int = 15000
    n_shared: int = 1000
    partitions: str = "auto"
    train_fraction: float = 0.5
    neg_ratio: float = 1.0
    mode: str = "mgcn"
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.hyper_strategy not in HYPERGRAPH_STRATEGIES:
            raise ConfigError(
                f"unknown hypergraph strategy {self.hyper_strategy!r}; "
                f"choose from {', '.join(HYPERGRAPH_STRATEGIES)}")
        if self.partitions not in PARTITION_MODES:
            raise ConfigError(f"partitions must be one of "
                              f"{PARTITION_MODES}, got {self.partitions!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, "
                              f"got {self.mode!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train fraction must be in (0, 1), "
                              f"got {self.train_fraction}")
        if self.neg_ratio <= 0.0:
            raise ConfigError(f"negative ratio must be positive, "
                              f"got {self.neg_ratio}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.n_shared < 0:
            raise ConfigError(f"shared node count must be >= 0, "
                              f"got {self.n_shared}")
        for path in (self.graph1, self.graph2, self.anchors):
            if path is not None and not Path(path).exists():
                raise ConfigError(f"input file does not exist: {path}")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return out


@dataclass
class RunManifest:
    """Resolved settings plus per-stage timings, outputs, and the result."""

    config: dict
    versions: dict
    stages: list = field(default_factory=list)
    report: EvalReport | None = None
    baseline: EvalReport | None = None
    failed_stage: str | None = None
    error: str | None = None

    def stage_names(self) -> list[str]:
        return [s["name"] for s in self.stages]


def save_run_manifest(path, manifest: RunManifest) -> None:
    data = dataclasses.asdict(manifest)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_run_manifest(path) -> RunManifest:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    report = data.get("report")
    if report is not None:
        report = EvalReport(**report)
    baseline = data.get("baseline")
    if baseline is not None:
        baseline = EvalReport(**baseline)
    return RunManifest(config=data["config"], versions=data["versions"],
                       stages=data["stages"], report=report,
                       baseline=baseline,
                       failed_stage=data.get("failed_stage"),
                       error=data.get("error"))


def build_hypergraph(g: SimpleGraph, strategy: str, params: dict,
                     anchor_nodes=None, seed: int = 0):
    """Dispatch to the configured hypergraph construction strategy."""
    params = dict(params or {})
    if strategy == "neighborhood":
        return build_neighborhood_hypergraph(g, int(params.get("hops", 1)),
                                             float(params.get("decay", 1.0)))
    if strategy == "anchor":
        if anchor_nodes is None or len(anchor_nodes) == 0:
            raise DataError("anchor hypergraph strategy needs anchor nodes")
        return build_anchor_hypergraph(g, anchor_nodes,
                                       int(params.get("hops", 1)))
    if strategy == "centrality":
        return build_centrality_hypergraph(
            g, int(params.get("communities", 12)), seed=seed)
    if strategy == "latent":
        return build_latent_hypergraph(g, int(params.get("dim", 16)),
                                       seed=seed)
    raise ConfigError(f"unknown hypergraph strategy {strategy!r}")


class _StageRunner:
    """Times stages and records partial progress on failure."""

    def __init__(self, manifest: RunManifest, manifest_path):
        self.manifest = manifest
        self.manifest_path = manifest_path

    def run(self, name: str, fn, outputs=()):
        start = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            self.manifest.failed_stage = name
            self.manifest.error = f"{type(exc).__name__}: {exc}"
            save_run_manifest(self.manifest_path, self.manifest)
            raise
        self.manifest.stages.append({
            "name": name,
            "seconds": time.perf_counter() - start,
            "outputs": [str(p) for p in outputs],
        })
        return result


def _partition_network(g: SimpleGraph, config: PipelineConfig, seed: int):
    """Partition list [(graph, global ids)] plus the shared-node ids."""
    if config.partitions == "single" or g.node_count <= config.n_min:
        return [(g, np.arange(g.node_count, dtype=np.int64))], \
            np.zeros(0, dtype=np.int64)
    ps = partition_graph(g, config.n_min, config.n_max, seed=seed)
    ps = inject_shared_nodes(ps, g, min(config.n_shared, g.node_count),
                             seed=seed)
    return [(p.graph, p.nodes) for p in ps.partitions], ps.shared_nodes


def _train_partitions(parts, config: PipelineConfig, anchor_nodes,
                      seed_seq: np.random.SeedSequence,
                      workdir: Path, tag: str, runner: _StageRunner):
    """Hypergraph construction and embedding training per partition."""
    seeds = _seed_ints(seed_seq, 2 * len(parts))
    hypergraphs = []

    def build_one(i):
        pg, ids = parts[i]
        local_anchors = None
        if anchor_nodes is not None and len(anchor_nodes):
            mask = np.isin(ids, anchor_nodes)
            local_anchors = np.flatnonzero(mask)
        return build_hypergraph(pg, config.hyper_strategy,
                                config.hyper_params, local_anchors,
                                seed=seeds[2 * i])

    def stage_hypergraphs():
        out = []
        for i in range(len(parts)):
            h = build_one(i)
            path = workdir / f"{tag}_hypergraph_{i}.npz"
            save_hypergraph(path, h)
            out.append(h)
        return out

    hypergraphs = runner.run(f"{tag}:hypergraph", stage_hypergraphs,
                             [workdir / f"{tag}_hypergraph_{i}.npz"
                              for i in range(len(parts))])

    def train_one(i):
        pg, _ = parts[i]
        tc = dataclasses.replace(config.train, seed=seeds[2 * i + 1])
        return train_embeddings(pg, hypergraphs[i], config.model, tc,
                                mode=config.mode)

    def stage_train():
        if config.jobs > 1 and len(parts) > 1:
            with ThreadPoolExecutor(max_workers=config.jobs) as pool:
                results = list(pool.map(train_one, range(len(parts))))
        else:
            results = [train_one(i) for i in range(len(parts))]
        for i, res in enumerate(results):
            save_model(workdir / f"{tag}_model_{i}.npz", res.params,
                       config.model)
        return results

    results = runner.run(f"{tag}:train", stage_train,
                         [workdir / f"{tag}_model_{i}.npz"
                          for i in range(len(parts))])
    return results


def _embed_network(g: SimpleGraph, config: PipelineConfig, anchor_nodes,
                   seed_seq: np.random.SeedSequence, workdir: Path,
                   tag: str, runner: _StageRunner) -> np.ndarray:
    """All per-network stages; returns one embedding row per node."""
    part_seed, train_seed, merge_seed = _seed_ints(seed_seq, 3)
    parts, shared = runner.run(
        f"{tag}:partition",
        lambda: _partition_network(g, config, part_seed))
    results = _train_partitions(parts, config, anchor_nodes,
                                np.random.SeedSequence(train_seed),
                                workdir, tag, runner)
    spaces = [(ids, res.embeddings) for (_, ids), res in zip(parts, results)]

    def stage_merge():
        if len(spaces) == 1:
            ids, x = spaces[0]
            merged = np.zeros((g.node_count, x.shape[1]))
            merged[ids] = x
            return merged
        maps = fit_partition_maps(spaces, shared)
        save_maps(workdir / f"{tag}_partition_maps.npz", maps)
        return apply_maps(spaces, maps, g.node_count)

    merged = runner.run(f"{tag}:merge", stage_merge,
                        [workdir / f"{tag}_partition_maps.npz"]
                        if len(spaces) > 1 else [])
    np.savez(workdir / f"{tag}_embeddings.npz", embeddings=merged)
    return merged


def _load_inputs(config: PipelineConfig, g1, g2, anchors):
    if g1 is None or g2 is None or anchors is None:
        if not (config.graph1 and config.graph2 and config.anchors):
            raise ConfigError("run needs both graphs and anchors, either "
                              "as objects or as configured paths")
        g1, labels1 = load_graph(config.graph1)
        g2, labels2 = load_graph(config.graph2)
        raw_pairs, labels = load_anchor_links(config.anchors)
        if labels1 is None or labels2 is None:
            pairs = np.array([(int(a), int(b)) for a, b in raw_pairs],
                             dtype=np.int64)
            anchors = AnchorLinkSet(pairs, labels)
        else:
            anchors = remap_anchor_links(raw_pairs, labels, labels1, labels2)
    return g1, g2, anchors


def run_pipeline(config: PipelineConfig, g1: SimpleGraph | None = None,
                 g2: SimpleGraph | None = None,
                 anchors: AnchorLinkSet | None = None) -> RunManifest:
    """Execute every stage and return the populated manifest."""
    workdir = Path(config.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        config=config.to_dict(),
        versions={"package": __version__,
                  "checkpoint": CHECKPOINT_VERSION,
                  "maps": MAPS_VERSION,
                  "classifier": CLASSIFIER_VERSION})
    manifest_path = workdir / "run.json"
    runner = _StageRunner(manifest, manifest_path)
    with open(workdir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.config, fh, indent=2, sort_keys=True)
        fh.write("\n")

    g1, g2, anchors = runner.run(
        "load", lambda: _load_inputs(config, g1, g2, anchors))
    root = np.random.SeedSequence(config.seed)
    # both networks train from the same derived seed on purpose: a
    # common broadcast initialization correlates the two embedding
    # spaces' orientations, which the anchor map can then align far
    # more accurately than two arbitrarily rotated spaces
    split_seed, net_seed, pairs_seed, clf_seed = _seed_ints(root, 4)

    def stage_split():
        train, test = split_anchors(anchors, config.train_fraction,
                                    seed=split_seed)
        save_anchor_links(workdir / "anchors_train.txt",
                          train.pairs, train.labels)
        save_anchor_links(workdir / "anchors_test.txt",
                          test.pairs, test.labels)
        return train, test

    train_anchors, test_anchors = runner.run(
        "split-anchors", stage_split,
        [workdir / "anchors_train.txt", workdir / "anchors_test.txt"])

    x1 = _embed_network(g1, config, train_anchors.positives[:, 0],
                        np.random.SeedSequence(net_seed), workdir, "g1",
                        runner)
    x2 = _embed_network(g2, config, train_anchors.positives[:, 1],
                        np.random.SeedSequence(net_seed), workdir, "g2",
                        runner)

    def stage_anchor_map():
        m = fit_anchor_map(x1, x2, train_anchors.positives)
        save_maps(workdir / "anchor_map.npz",
                  PartitionMaps([LinearMap.identity(x1.shape[1]), m],
                                [0.0, 0.0]))
        return m

    anchor_map = runner.run("anchor-map", stage_anchor_map,
                            [workdir / "anchor_map.npz"])
    x2_mapped = anchor_map.apply(x2)

    def stage_pairs():
        rng = np.random.default_rng(pairs_seed)
        all_pos = anchors.positives
        train_pos = train_anchors.positives
        test_pos = test_anchors.positives
        n_train_neg = int(round(config.neg_ratio * len(train_pos)))
        n_test_neg = int(round(config.neg_ratio * len(test_pos)))
        train_neg = sample_negative_pairs(g1.node_count, g2.node_count,
                                          all_pos, n_train_neg, rng)
        test_neg = sample_negative_pairs(
            g1.node_count, g2.node_count,
            np.concatenate([all_pos, train_neg]), n_test_neg, rng)
        train_pairs = np.concatenate([train_pos, train_neg])
        train_labels = np.concatenate(
            [np.ones(len(train_pos), dtype=np.int64),
             np.zeros(n_train_neg, dtype=np.int64)])
        test_pairs = np.concatenate([test_pos, test_neg])
        test_labels = np.concatenate(
            [np.ones(len(test_pos), dtype=np.int64),
             np.zeros(n_test_neg, dtype=np.int64)])
        return train_pairs, train_labels, test_pairs, test_labels

    train_pairs, train_labels, test_pairs, test_labels = runner.run(
        "pairs", stage_pairs)

    def stage_classifier():
        cc = dataclasses.replace(config.classifier, seed=clf_seed)
        clf = train_classifier(
            pair_features(x1, x2_mapped, train_pairs), train_labels, cc)
        save_classifier(workdir / "classifier.npz", clf)
        return clf

    clf = runner.run("classifier", stage_classifier,
                     [workdir / "classifier.npz"])

    def stage_evaluate():
        scores = predict(clf, pair_features(x1, x2_mapped, test_pairs))
        predicted = (scores >= 0.5).astype(np.int64)
        report = evaluate(predicted, test_labels)
        save_predictions(workdir / "predictions.txt", test_pairs, scores,
                         predicted)
        save_report(workdir / "report.txt", report)
        return report

    manifest.report = runner.run(
        "evaluate", stage_evaluate,
        [workdir / "predictions.txt", workdir / "report.txt"])

    def stage_baseline():
        cc = dataclasses.replace(config.classifier, seed=clf_seed)
        report = degree_baseline_report(g1, g2, train_pairs, train_labels,
                                        test_pairs, test_labels, cc)
        save_report(workdir / "baseline_report.txt", report)
        return report

    manifest.baseline = runner.run("baseline", stage_baseline,
                                   [workdir / "baseline_report.txt"])
    save_run_manifest(manifest_path, manifest)
    return manifest


def degree_baseline_report(g1: SimpleGraph, g2: SimpleGraph,
                           train_pairs, train_labels, test_pairs,
                           test_labels,
                           config: ClassifierConfig | None = None
                           ) -> EvalReport:
    """Score the same pair sets using degree-only features."""
    if config is None:
        config = ClassifierConfig()
    clf = train_classifier(degree_pair_features(g1, g2, train_pairs),
                           train_labels, config)
    scores = predict(clf, degree_pair_features(g1, g2, test_pairs))
    return evaluate((scores >= 0.5).astype(np.int64), test_labels)


BENCH_MODELS = ("gcn", "hgnn-style", "mgcn")


def bench_forward(scales, models=("gcn", "mgcn"), repeats: int = 1000,
                  dim: int = 200, attach: int = 5, seed: int = 0) -> list:
    """Wall-clock seconds for repeated full forward passes.

    Graphs come from the preferential-attachment generator with a
    one-hop neighborhood hypergraph; each row of the result is a dict
    with model, node count, and total seconds over all repeats. The
    default width matches the model default, where the dense products
    shared by all models dominate.
    """
    for m in models:
        if m not in BENCH_MODELS:
            raise ConfigError(f"unknown bench model {m!r}; choose from "
                              f"{', '.join(BENCH_MODELS)}")
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    rows = []
    for n in scales:
        if n < 3:
            raise ConfigError(f"bench scale must be >= 3, got {n}")
        g = synth_graph("preferential-attachment", int(n),
                        {"m": attach}, seed=seed)
        h = build_neighborhood_hypergraph(g, 1)
        structs = ConvStructures(g, h)
        mc = ModelConfig(dim=dim)
        for model in models:
            mode = "gcn" if model == "gcn" else "mgcn"
            params = init_params(g.node_count, mc, seed=seed,
                                 gains=estimate_gains(structs, mode))
            if model == "hgnn-style":
                def forward():
                    x = params.x0.value
                    for k in range(mc.layers):
                        z = structs.theta_half @ (
                            structs.theta_half_t
                            @ (x @ params.hyper_w[k].value))
                        x = np.maximum(z, 0.0) if k < mc.layers - 1 else z
                    return x
            else:
                def forward(mode=mode):
                    return forward_values(structs, params, mc, mode)
            forward()
            start = time.perf_counter()
            for _ in range(repeats):
                forward()
            rows.append({"model": model, "nodes": int(n),
                         "seconds": time.perf_counter() - start})
    return rows


def bench_csv(rows) -> str:
    lines = ["model,nodes,seconds"]
    for row in rows:
        lines.append(f"{row['model']},{row['nodes']},{row['seconds']:.6f}")
    return "\n".join(lines) + "\n"
