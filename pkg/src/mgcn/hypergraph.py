"""Hypergraph construction strategies and incidence-derived operators.

A hypergraph is a list of hyperedges, each mapping member node ids to a
membership weight in (0, 1]. Four constructors are provided: hop
neighborhoods around every node, hop neighborhoods around anchor nodes
only, centrality profiles plus community one-hots, and latent dimensions
of an adjacency autoencoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .centrality import (betweenness_centrality, closeness_centrality,
                         clustering_coefficient, degree_centrality,
                         eigenvector_centrality, node_clique_number, pagerank)
from .errors import ConfigError, DataError
from .graph import SimpleGraph, bfs_ball
from .partition import louvain

MIN_MEMBERS = 3
CENTRALITY_FLOOR = 1e-3
LATENT_TRUNCATION = 0.05


@dataclass
class Hypergraph:
    """Weighted incidence structure over a fixed node set.

    ``members[e]`` holds the sorted node ids of hyperedge e and
    ``weights[e]`` the matching membership weights.
    """

    node_count: int
    members: list
    weights: list

    def __post_init__(self):
        if len(self.members) != len(self.weights):
            raise DataError("members and weights length mismatch")
        norm_m, norm_w = [], []
        for e, (m, w) in enumerate(zip(self.members, self.weights)):
            m = np.asarray(m, dtype=np.int64)
            w = np.asarray(w, dtype=np.float64)
            if len(m) != len(w):
                raise DataError(f"hyperedge {e}: member/weight length mismatch")
            if len(m) < MIN_MEMBERS:
                raise DataError(f"hyperedge {e} has {len(m)} members; "
                                f"need at least {MIN_MEMBERS}")
            order = np.argsort(m)
            m, w = m[order], w[order]
            if len(np.unique(m)) != len(m):
                raise DataError(f"hyperedge {e} repeats a node")
            if m[0] < 0 or m[-1] >= self.node_count:
                raise DataError(f"hyperedge {e}: node id out of range")
            if np.any(w <= 0.0) or np.any(w > 1.0):
                raise DataError(f"hyperedge {e}: weights must lie in (0, 1]")
            norm_m.append(m)
            norm_w.append(w)
        self.members = norm_m
        self.weights = norm_w

    @property
    def edge_count(self) -> int:
        return len(self.members)

    def incidence(self) -> sp.csr_matrix:
        """Node-by-hyperedge weight matrix H."""
        if not self.members:
            return sp.csr_matrix((self.node_count, 0), dtype=np.float64)
        rows = np.concatenate(self.members)
        cols = np.concatenate([np.full(len(m), e, dtype=np.int64)
                               for e, m in enumerate(self.members)])
        data = np.concatenate(self.weights)
        return sp.csr_matrix((data, (rows, cols)),
                             shape=(self.node_count, self.edge_count))


@dataclass
class HyperDegrees:
    node_degrees: np.ndarray
    edge_degrees: np.ndarray


@dataclass
class HypergraphOperator:
    """Symmetric propagation matrix over nodes covered by hyperedges.

    ``half`` is the degree-scaled incidence factor with
    ``theta == half @ half.T``. Products against a feature matrix should
    go through the factor: two passes over the incidence entries beat
    one pass over the materialized operator, whose fill-in couples every
    pair of nodes that co-occur in any hyperedge.
    """

    theta: sp.csr_matrix
    half: sp.csr_matrix


def hyper_degrees(h: Hypergraph) -> HyperDegrees:
    inc = h.incidence()
    return HyperDegrees(np.asarray(inc.sum(axis=1)).ravel(),
                        np.asarray(inc.sum(axis=0)).ravel())


def hypergraph_adjacency(h: Hypergraph) -> sp.csr_matrix:
    """Pairwise co-membership weight matrix with degrees subtracted from
    the diagonal."""
    inc = h.incidence()
    deg = np.asarray(inc.sum(axis=1)).ravel()
    a = (inc @ inc.T) - sp.diags(deg, format="csr")
    a = a.tocsr()
    a.sort_indices()
    return a


def hypergraph_operator(h: Hypergraph) -> HypergraphOperator:
    """Degree-normalized co-membership operator.

    Rows and columns of uncovered nodes are zero, so the operator neither
    reads nor writes them.
    """
    inc = h.incidence()
    deg = np.asarray(inc.sum(axis=1)).ravel()
    dinv = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=dinv, where=deg > 0)
    scaled = sp.diags(dinv) @ inc
    theta = (scaled @ scaled.T).tocsr()
    theta.sort_indices()
    half = scaled.tocsr()
    half.sort_indices()
    return HypergraphOperator(theta, half)


def build_neighborhood_hypergraph(g: SimpleGraph, hops: int,
                                  decay: float = 1.0) -> Hypergraph:
    """One hyperedge per node: its hop-limited BFS ball.

    Balls with fewer than three nodes are dropped. The center keeps
    membership weight 1; other members get ``decay``. Values below 1
    sharpen the induced operator's diagonal, which counters the rank
    collapse that repeated convolutions otherwise cause on
    small-diameter graphs (every pair within two hops gets coupled).
    """
    if hops < 1:
        raise ConfigError(f"hops must be >= 1, got {hops}")
    if not 0.0 < decay <= 1.0:
        raise ConfigError(f"decay must be in (0, 1], got {decay}")
    members = []
    weights = []
    for v in range(g.node_count):
        ball = bfs_ball(g, v, hops)
        if len(ball) >= MIN_MEMBERS:
            members.append(ball)
            w = np.full(len(ball), decay)
            w[ball == v] = 1.0
            weights.append(w)
    return Hypergraph(g.node_count, members, weights)


def build_anchor_hypergraph(g: SimpleGraph, anchors, hops: int) -> Hypergraph:
    """Hop-ball hyperedges seeded only at the given anchor nodes."""
    if hops < 1:
        raise ConfigError(f"hops must be >= 1, got {hops}")
    seeds = np.unique(np.asarray(list(anchors), dtype=np.int64))
    if seeds.size == 0:
        raise DataError("anchor seed set is empty")
    if seeds[0] < 0 or seeds[-1] >= g.node_count:
        raise DataError("anchor seed outside the node range")
    members = []
    for v in seeds:
        ball = bfs_ball(g, int(v), hops)
        if len(ball) >= MIN_MEMBERS:
            members.append(ball)
    return Hypergraph(g.node_count, members,
                      [np.ones(len(m)) for m in members])


def _minmax_floor(x: np.ndarray, floor: float) -> np.ndarray:
    """Map scores to [floor, 1]; constant vectors map to all ones."""
    lo, hi = float(x.min()), float(x.max())
    if hi - lo <= 0.0:
        return np.ones_like(x)
    return floor + (1.0 - floor) * (x - lo) / (hi - lo)


def community_membership_counts(g: SimpleGraph, runs: int = 5, seed=0) -> np.ndarray:
    """How many distinct communities each node lands in across reruns.

    Communities from different runs are compared by their node sets, so a
    node solidly inside one cluster counts 1 and boundary nodes count
    higher.
    """
    seen: list[set] = [set() for _ in range(g.node_count)]
    for child in np.random.SeedSequence(seed).spawn(runs):
        assignment = louvain(g, np.random.default_rng(child)).assignment
        groups = {}
        for v, c in enumerate(assignment):
            groups.setdefault(int(c), []).append(v)
        for nodes in groups.values():
            key = tuple(nodes)
            for v in nodes:
                seen[v].add(key)
    return np.array([len(s) for s in seen], dtype=np.float64)


def build_centrality_hypergraph(g: SimpleGraph, n_communities: int = 12,
                                seed=0, floor: float = CENTRALITY_FLOOR) -> Hypergraph:
    """Eight score-weighted hyperedges plus community one-hot hyperedges.

    Each centrality score is min-max normalized to [floor, 1] and used as
    the membership weight, so every node belongs to every score hyperedge
    at some small weight. Louvain communities contribute unit-weight
    hyperedges; when there are more communities than slots, the largest
    n_communities - 1 keep their own hyperedge and the remainder share one.
    """
    if n_communities < 1:
        raise ConfigError("n_communities must be >= 1")
    features = [
        degree_centrality(g),
        betweenness_centrality(g),
        clustering_coefficient(g),
        eigenvector_centrality(g),
        pagerank(g),
        closeness_centrality(g),
        node_clique_number(g),
        community_membership_counts(g, seed=seed),
    ]
    all_nodes = np.arange(g.node_count)
    members, weights = [], []
    for feat in features:
        w = _minmax_floor(feat, floor)
        keep = w > 0.0
        if keep.sum() >= MIN_MEMBERS:
            members.append(all_nodes[keep])
            weights.append(w[keep])

    assignment = louvain(g, seed).assignment
    groups = [np.flatnonzero(assignment == c)
              for c in range(int(assignment.max()) + 1)]
    groups.sort(key=lambda grp: (-len(grp), int(grp[0])))
    if len(groups) > n_communities:
        head = groups[:n_communities - 1]
        tail = np.sort(np.concatenate(groups[n_communities - 1:]))
        groups = head + [tail]
    for grp in groups:
        if len(grp) >= MIN_MEMBERS:
            members.append(grp)
            weights.append(np.ones(len(grp)))
    return Hypergraph(g.node_count, members, weights)


def adjacency_autoencoder(g: SimpleGraph, dim: int, epochs: int = 200,
                          lr: float = 0.05, seed=0, init_scale: float = 0.1):
    """Squared-error autoencoder over adjacency rows.

    Single hidden layer with logistic activations; plain full-batch
    gradient descent. Returns (hidden activations in (0,1), loss trace).
    """
    n = g.node_count
    x = g.adjacency().toarray()
    rng = np.random.default_rng(seed)
    w_enc = ad.Tensor(rng.normal(size=(n, dim)) * init_scale)
    b_enc = ad.Tensor(np.zeros(dim))
    w_dec = ad.Tensor(rng.normal(size=(dim, n)) * init_scale)
    b_dec = ad.Tensor(np.zeros(n))
    params = [w_enc, b_enc, w_dec, b_dec]
    data = ad.Tensor(x)
    losses = []
    for _ in range(epochs):
        hidden = ad.sigmoid(ad.add(ad.matmul(data, w_enc), b_enc))
        recon = ad.add(ad.matmul(hidden, w_dec), b_dec)
        err = recon - data
        loss = ad.tmean(ad.mul(err, err))
        ad.zero_grads(params)
        ad.backward(loss)
        losses.append(float(loss.value))
        for p in params:
            p.value = p.value - lr * p.grad
    hidden = 1.0 / (1.0 + np.exp(-(x @ w_enc.value + b_enc.value)))
    return hidden, np.asarray(losses)


def build_latent_hypergraph(g: SimpleGraph, dim: int,
                            tau: float = LATENT_TRUNCATION, epochs: int = 200,
                            lr: float = 0.05, seed=0) -> Hypergraph:
    """One hyperedge per latent dimension of an adjacency autoencoder.

    Membership weight is the logistic hidden activation; entries below tau
    are cut, and dimensions left with fewer than three members are
    dropped.
    """
    if dim < 1:
        raise ConfigError(f"latent dimension must be >= 1, got {dim}")
    if dim >= g.node_count:
        raise ConfigError(f"latent dimension {dim} must be smaller than the "
                          f"node count {g.node_count}")
    hidden, _ = adjacency_autoencoder(g, dim, epochs=epochs, lr=lr, seed=seed)
    members, weights = [], []
    for e in range(dim):
        col = hidden[:, e]
        keep = np.flatnonzero(col >= tau)
        if len(keep) >= MIN_MEMBERS:
            members.append(keep)
            weights.append(np.minimum(col[keep], 1.0))
    return Hypergraph(g.node_count, members, weights)


HYPERGRAPH_STRATEGIES = ("neighborhood", "anchor", "centrality", "latent")


def save_hypergraph(path, h: Hypergraph) -> None:
    """One `edge_id node_id weight` line per membership."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# nodes {h.node_count}\n")
        for e, (m, w) in enumerate(zip(h.members, h.weights)):
            for v, p in zip(m, w):
                fh.write(f"{e} {v} {float(p)!r}\n")


def load_hypergraph(path) -> Hypergraph:
    node_count = None
    edges: dict[int, list[tuple[int, float]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                parts = stripped[1:].split()
                if len(parts) == 2 and parts[0] == "nodes":
                    node_count = int(parts[1])
                continue
            parts = stripped.split()
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected "
                                f"'edge_id node_id weight'")
            try:
                e, v, w = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            edges.setdefault(e, []).append((v, w))
    if node_count is None:
        node_count = 1 + max((v for rows in edges.values()
                              for v, _ in rows), default=-1)
    members, weights = [], []
    for e in sorted(edges):
        rows = edges[e]
        members.append(np.array([v for v, _ in rows], dtype=np.int64))
        weights.append(np.array([w for _, w in rows], dtype=np.float64))
    return Hypergraph(node_count, members, weights)
