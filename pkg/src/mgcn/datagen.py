"""Synthetic graphs and twin sub-network sampling.

Real cross-network datasets cannot ship with the library, so experiments
run on generated stand-ins: a base graph is sampled once, then split
into two overlapping sub-networks by an edge-level rule controlled by a
sparsity knob (how many base edges each twin keeps) and an overlap knob
(how many kept edges the twins share). Nodes isolated by the sampling
are dropped from that twin, and the surviving common nodes become the
ground-truth anchor matching.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .graph import AnchorLinkSet, SimpleGraph

GRAPH_KINDS = ("preferential-attachment", "small-world",
               "planted-communities")


@dataclass
class TwinConfig:
    """Edge-sampling knobs for twin generation.

    ``alpha_s`` is each twin's expected share of base edges;
    ``alpha_c`` scales how much of that share the twins have in common
    (expected shared fraction of base edges is ``alpha_s * alpha_c``).
    """

    alpha_s: float
    alpha_c: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha_s <= 1.0:
            raise ConfigError(f"alpha_s must be in (0, 1], got {self.alpha_s}")
        if not 0.0 <= self.alpha_c <= 1.0:
            raise ConfigError(f"alpha_c must be in [0, 1], got {self.alpha_c}")
        t1, t2, t3 = self.thresholds()
        if not (t1 <= t2 <= t3 <= 1.0):
            raise ConfigError("interval boundaries must be non-decreasing; "
                              f"got {t1}, {t2}, {t3}")

    def thresholds(self) -> tuple[float, float, float]:
        """Cut points of the per-edge uniform draw.

        Draws up to the first value discard the edge; up to the second
        keep it in the first twin only; up to the third keep it in the
        second twin only; anything above keeps it in both.
        """
        both = self.alpha_s * self.alpha_c
        t1 = 1.0 - 2.0 * self.alpha_s + both
        return t1, 1.0 - self.alpha_s, 1.0 - both


@dataclass
class TwinNetworks:
    """Two overlapping sub-networks with their ground-truth matching.

    ``nodes1[i]`` is the base-graph id of node ``i`` in ``g1`` (same for
    ``nodes2``/``g2``); anchor pairs are (g1 id, g2 id) for base nodes
    surviving in both twins.
    """

    g1: SimpleGraph
    g2: SimpleGraph
    anchors: AnchorLinkSet
    nodes1: np.ndarray
    nodes2: np.ndarray


def generate_twins(base: SimpleGraph, cfg: TwinConfig) -> TwinNetworks:
    """Sample two overlapping sub-networks from one base graph."""
    edges = base.edges()
    if len(edges) == 0:
        raise DataError("base graph has no edges to sample from")
    rng = np.random.default_rng(cfg.seed)
    p = rng.random(len(edges))
    t1, t2, t3 = cfg.thresholds()
    in_first = p > t1
    in_first &= ~((p > t2) & (p <= t3))
    in_second = p > t2
    g1_full = SimpleGraph.from_edges(base.node_count, edges[in_first])
    g2_full = SimpleGraph.from_edges(base.node_count, edges[in_second])
    g1, nodes1 = g1_full.induced_subgraph(
        np.flatnonzero(g1_full.degrees() > 0))
    g2, nodes2 = g2_full.induced_subgraph(
        np.flatnonzero(g2_full.degrees() > 0))
    new1 = np.full(base.node_count, -1, dtype=np.int64)
    new1[nodes1] = np.arange(len(nodes1))
    new2 = np.full(base.node_count, -1, dtype=np.int64)
    new2[nodes2] = np.arange(len(nodes2))
    common = np.flatnonzero((new1 >= 0) & (new2 >= 0))
    pairs = np.stack([new1[common], new2[common]], axis=1)
    anchors = AnchorLinkSet(pairs, np.ones(len(pairs), dtype=np.int64))
    return TwinNetworks(g1=g1, g2=g2, anchors=anchors,
                        nodes1=nodes1, nodes2=nodes2)


def _preferential_attachment(n: int, m: int, rng) -> SimpleGraph:
    """Degree-proportional growth: a seed clique, then m edges per node."""
    if m < 1:
        raise ConfigError(f"attachment count must be >= 1, got {m}")
    m0 = max(m, 2)
    if n <= m0:
        raise ConfigError(f"need more than {m0} nodes for attachment "
                          f"count {m}, got {n}")
    edges = [(i, j) for i in range(m0) for j in range(i + 1, m0)]
    degrees = np.zeros(n, dtype=np.float64)
    for u, v in edges:
        degrees[u] += 1
        degrees[v] += 1
    for v in range(m0, n):
        weights = degrees[:v] / degrees[:v].sum()
        targets: set[int] = set()
        while len(targets) < m:
            draw = int(rng.choice(v, p=weights))
            targets.add(draw)
        for u in sorted(targets):
            edges.append((u, v))
            degrees[u] += 1
            degrees[v] += 1
    return SimpleGraph.from_edges(n, edges)


def _small_world(n: int, k: int, beta: float, rng) -> SimpleGraph:
    """Ring lattice with k nearest neighbors, each edge rewired w.p. beta."""
    if k < 2 or k % 2 != 0:
        raise ConfigError(f"neighbor count must be even and >= 2, got {k}")
    if k >= n:
        raise ConfigError(f"neighbor count {k} must be below node count {n}")
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"rewire probability must be in [0, 1], got {beta}")
    present = set()
    for u in range(n):
        for j in range(1, k // 2 + 1):
            present.add((min(u, (u + j) % n), max(u, (u + j) % n)))
    edges = sorted(present)
    for idx, (u, v) in enumerate(edges):
        if rng.random() >= beta:
            continue
        for _ in range(2 * n):
            w = int(rng.integers(0, n))
            cand = (min(u, w), max(u, w))
            if w != u and cand not in present:
                present.remove((u, v))
                present.add(cand)
                edges[idx] = cand
                break
    return SimpleGraph.from_edges(n, sorted(present))


def planted_communities(sizes, p_in: float, p_out: float,
                        rng) -> tuple[SimpleGraph, np.ndarray]:
    """Random graph with dense blocks; returns (graph, block membership)."""
    sizes = [int(s) for s in sizes]
    if any(s < 1 for s in sizes):
        raise ConfigError("community sizes must be positive")
    for name, value in (("p_in", p_in), ("p_out", p_out)):
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name} must be in [0, 1], got {value}")
    n = sum(sizes)
    membership = np.repeat(np.arange(len(sizes)), sizes)
    iu, ju = np.triu_indices(n, k=1)
    same = membership[iu] == membership[ju]
    prob = np.where(same, p_in, p_out)
    keep = rng.random(len(prob)) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    return SimpleGraph.from_edges(n, edges), membership


def synth_graph(kind: str, n: int, params: dict | None = None,
                seed=0) -> SimpleGraph:
    """Generate a named family of synthetic base graphs."""
    if n < 3:
        raise ConfigError(f"need at least 3 nodes, got {n}")
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if kind == "preferential-attachment":
        return _preferential_attachment(n, int(params.pop("m", 3)), rng)
    if kind == "small-world":
        default_k = 2 if n < 5 else 4
        k = int(params.pop("k", default_k))
        beta = float(params.pop("beta", 0.1))
        return _small_world(n, k, beta, rng)
    if kind == "planted-communities":
        blocks = int(params.pop("blocks", 2))
        if blocks < 1 or n % blocks != 0:
            raise ConfigError(f"{n} nodes do not divide into {blocks} blocks")
        sizes = [n // blocks] * blocks
        p_in = float(params.pop("p_in", 0.3))
        p_out = float(params.pop("p_out", 0.01))
        g, _ = planted_communities(sizes, p_in, p_out, rng)
        return g
    raise ConfigError(f"unknown graph kind {kind!r}; choose from "
                      f"{', '.join(GRAPH_KINDS)}")


def split_anchors(anchors: AnchorLinkSet, train_fraction: float,
                  seed=0) -> tuple[AnchorLinkSet, AnchorLinkSet]:
    """Deterministic label-stratified split into train and test sets."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("train fraction must be in (0, 1), "
                          f"got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx = []
    test_idx = []
    for cls in (0, 1):
        members = np.flatnonzero(anchors.labels == cls)
        members = members[rng.permutation(len(members))]
        cut = int(round(train_fraction * len(members)))
        train_idx.append(members[:cut])
        test_idx.append(members[cut:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    if len(train) == 0 or len(test) == 0:
        raise DataError(f"split left an empty side: {len(train)} train, "
                        f"{len(test)} test")
    return (AnchorLinkSet(anchors.pairs[train], anchors.labels[train]),
            AnchorLinkSet(anchors.pairs[test], anchors.labels[test]))


def subsample_anchors(anchors: AnchorLinkSet, fraction: float,
                      seed=0) -> AnchorLinkSet:
    """Label-stratified subsample, for training-ratio sweeps."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return anchors
    rng = np.random.default_rng(seed)
    keep = []
    for cls in (0, 1):
        members = np.flatnonzero(anchors.labels == cls)
        members = members[rng.permutation(len(members))]
        keep.append(members[:int(round(fraction * len(members)))])
    keep = np.sort(np.concatenate(keep))
    if len(keep) == 0:
        raise DataError("subsample kept no anchors")
    return AnchorLinkSet(anchors.pairs[keep], anchors.labels[keep])


def twin_manifest(base: SimpleGraph, cfg: TwinConfig,
                  twins: TwinNetworks) -> dict:
    """Generation settings plus realized statistics, for provenance files."""
    g2_edges = {frozenset((int(twins.nodes2[u]), int(twins.nodes2[v])))
                for u, v in twins.g2.edges()}
    shared = sum(
        1 for u, v in twins.g1.edges()
        if frozenset((int(twins.nodes1[u]), int(twins.nodes1[v]))) in g2_edges)
    return {
        "alpha_s": cfg.alpha_s,
        "alpha_c": cfg.alpha_c,
        "seed": cfg.seed,
        "base_nodes": base.node_count,
        "base_edges": base.edge_count,
        "g1_nodes": twins.g1.node_count,
        "g1_edges": twins.g1.edge_count,
        "g2_nodes": twins.g2.node_count,
        "g2_edges": twins.g2.edge_count,
        "shared_edges": shared,
        "anchor_count": len(twins.anchors),
    }


def save_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
