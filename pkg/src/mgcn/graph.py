"""Sparse undirected graph representation, derived operators, and file I/O.

Graphs are stored in compressed sparse row form with sorted neighbor
lists. Node ids are dense integers in ``[0, node_count)``; loaders remap
arbitrary external ids and keep the mapping for output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DataError

logger = logging.getLogger(__name__)

GRAPH_FORMAT_VERSION = 1


class SimpleGraph:
    """Undirected simple graph in CSR form.

    Invariants: symmetric adjacency, no duplicate edges, no stored
    self-loops, neighbor lists sorted ascending. Instances are immutable
    after construction and safe to share across workers.
    """

    __slots__ = ("node_count", "indptr", "indices")

    def __init__(self, node_count: int, indptr: np.ndarray, indices: np.ndarray):
        self.node_count = int(node_count)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)

    @classmethod
    def from_edges(cls, node_count: int, edges) -> "SimpleGraph":
        """Build a graph from an iterable of (u, v) pairs.

        Pairs are symmetrized and deduplicated; self-loops are dropped.
        """
        n = int(node_count)
        arr = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise ValueError("edge endpoint out of range")
        arr = arr[arr[:, 0] != arr[:, 1]]
        if arr.size == 0:
            return cls(n, np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))
        both = np.concatenate([arr, arr[:, ::-1]])
        keys = np.unique(both[:, 0] * n + both[:, 1])
        rows = keys // n
        cols = keys % n
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(n, indptr, cols)

    @property
    def edge_count(self) -> int:
        return len(self.indices) // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def has_edge(self, u: int, v: int) -> bool:
        nbrs = self.neighbors(u)
        i = np.searchsorted(nbrs, v)
        return i < len(nbrs) and nbrs[i] == v

    def edges(self) -> np.ndarray:
        """All edges as an (m, 2) array with u < v, sorted lexicographically."""
        rows = np.repeat(np.arange(self.node_count), np.diff(self.indptr))
        mask = rows < self.indices
        return np.column_stack([rows[mask], self.indices[mask]])

    def adjacency(self) -> sp.csr_matrix:
        """Binary adjacency matrix as float64 CSR."""
        data = np.ones(len(self.indices), dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr),
                             shape=(self.node_count, self.node_count))

    def induced_subgraph(self, nodes) -> tuple["SimpleGraph", np.ndarray]:
        """Subgraph on ``nodes``; returns (subgraph, sorted original ids).

        New ids are positions in the returned id array.
        """
        nodes = np.unique(np.asarray(nodes, dtype=np.int64))
        if nodes.size and (nodes[0] < 0 or nodes[-1] >= self.node_count):
            raise ValueError("node id out of range")
        new_id = np.full(self.node_count, -1, dtype=np.int64)
        new_id[nodes] = np.arange(len(nodes))
        edges = self.edges()
        if edges.size:
            keep = (new_id[edges[:, 0]] >= 0) & (new_id[edges[:, 1]] >= 0)
            sub_edges = new_id[edges[keep]]
        else:
            sub_edges = np.zeros((0, 2), dtype=np.int64)
        return SimpleGraph.from_edges(len(nodes), sub_edges), nodes

    def __eq__(self, other) -> bool:
        return (isinstance(other, SimpleGraph)
                and self.node_count == other.node_count
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def __hash__(self):  # identity hashing; structural equality via ==
        return id(self)

    def __repr__(self) -> str:
        return f"SimpleGraph(nodes={self.node_count}, edges={self.edge_count})"


@dataclass
class AnchorLinkSet:
    """Labeled cross-network node pairs.

    ``pairs[k] = (node in G1, node in G2)``; ``labels[k]`` in {0, 1}.
    Positives form a one-to-one matching; pairs are unique.
    """

    pairs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.pairs) != len(self.labels):
            raise ValueError("pairs and labels length mismatch")
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise DataError("anchor labels must be 0 or 1")
        seen = set(map(tuple, self.pairs))
        if len(seen) != len(self.pairs):
            raise DataError("duplicate anchor pairs")
        pos = self.pairs[self.labels == 1]
        if len(set(pos[:, 0])) != len(pos) or len(set(pos[:, 1])) != len(pos):
            raise DataError("positive anchors must be a one-to-one matching")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def positives(self) -> np.ndarray:
        return self.pairs[self.labels == 1]


def degree_matrix(g: SimpleGraph) -> np.ndarray:
    """Diagonal of the degree matrix D as a float vector."""
    return g.degrees().astype(np.float64)


def normalized_adjacency(g: SimpleGraph) -> sp.csr_matrix:
    """Normalized adjacency I + D^{-1/2} A D^{-1/2}.

    Degree-0 rows of D^{-1/2} are taken as 0, so the operator acts as the
    identity on isolated nodes.
    """
    deg = degree_matrix(g)
    dinv = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=dinv, where=deg > 0)
    adj = g.adjacency()
    rows = np.repeat(np.arange(g.node_count), np.diff(g.indptr))
    adj.data *= dinv[rows] * dinv[g.indices]
    ahat = (adj + sp.identity(g.node_count, format="csr", dtype=np.float64)).tocsr()
    ahat.sort_indices()
    return ahat


def _parse_tokens(path, min_cols, max_cols, skip_header=False):
    """Yield (lineno, tokens) for non-comment lines, validating column count."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if skip_header and lineno == 1:
                continue
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if not (min_cols <= len(parts) <= max_cols):
                raise DataError(f"{path}:{lineno}: expected {min_cols} to {max_cols} "
                                f"columns, got {len(parts)}")
            yield lineno, parts


def load_edge_list(path) -> tuple[SimpleGraph, list[str]]:
    """Read a whitespace-separated edge list.

    External ids may be arbitrary tokens; they are remapped to dense
    internal ids in order of first appearance. Returns the graph and the
    internal-to-external label list. Self-loop lines are dropped (counted
    in a single warning).
    """
    label_to_id: dict[str, int] = {}
    labels: list[str] = []
    edges = []
    self_loops = 0

    def intern(tok: str) -> int:
        if tok not in label_to_id:
            label_to_id[tok] = len(labels)
            labels.append(tok)
        return label_to_id[tok]

    for lineno, parts in _parse_tokens(path, 2, 2):
        u, v = intern(parts[0]), intern(parts[1])
        if u == v:
            self_loops += 1
            continue
        edges.append((u, v))
    if self_loops:
        logger.warning("%s: dropped %d self-loop line(s)", path, self_loops)
    return SimpleGraph.from_edges(len(labels), edges), labels


def save_edge_list(path, g: SimpleGraph, labels=None) -> None:
    """Write one line per undirected edge, using external labels if given."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in g.edges():
            if labels is not None:
                fh.write(f"{labels[u]} {labels[v]}\n")
            else:
                fh.write(f"{u} {v}\n")


def save_graph(path, g: SimpleGraph, labels=None) -> None:
    """Serialize a graph (and its id map) in the versioned line format."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"mgcn-graph {GRAPH_FORMAT_VERSION} {g.node_count} {g.edge_count}\n")
        if labels is not None:
            for i, lab in enumerate(labels):
                fh.write(f"n {i} {lab}\n")
        for u, v in g.edges():
            fh.write(f"e {u} {v}\n")


def load_graph(path) -> tuple[SimpleGraph, list[str] | None]:
    """Read a graph written by :func:`save_graph`."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "mgcn-graph":
            raise DataError(f"{path}: not an mgcn graph file")
        version, n, m = int(header[1]), int(header[2]), int(header[3])
        if version != GRAPH_FORMAT_VERSION:
            raise DataError(f"{path}: unsupported graph format version {version}")
        labels: list[str] | None = None
        edges = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "n":
                if labels is None:
                    labels = [""] * n
                labels[int(parts[1])] = parts[2]
            elif parts[0] == "e":
                edges.append((int(parts[1]), int(parts[2])))
            else:
                raise DataError(f"{path}:{lineno}: unknown record '{parts[0]}'")
    g = SimpleGraph.from_edges(n, edges)
    if g.edge_count != m:
        raise DataError(f"{path}: header says {m} edges, found {g.edge_count}")
    return g, labels


def load_anchor_links(path, header: bool = False) -> tuple[list[tuple[str, str]], np.ndarray]:
    """Read `id1 id2 label` rows; returns raw external id pairs and labels."""
    pairs = []
    labels = []
    for lineno, parts in _parse_tokens(path, 3, 3, skip_header=header):
        if parts[2] not in ("0", "1"):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {parts[2]!r}")
        pairs.append((parts[0], parts[1]))
        labels.append(int(parts[2]))
    return pairs, np.asarray(labels, dtype=np.int64)


def save_anchor_links(path, pairs, labels, header: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write("id1 id2 label\n")
        for (a, b), lab in zip(pairs, labels):
            fh.write(f"{a} {b} {int(lab)}\n")


def remap_anchor_links(raw_pairs, labels, labels_g1: list[str],
                       labels_g2: list[str]) -> AnchorLinkSet:
    """Convert external-id anchor pairs to internal ids of two graphs."""
    map1 = {lab: i for i, lab in enumerate(labels_g1)}
    map2 = {lab: i for i, lab in enumerate(labels_g2)}
    out = []
    for a, b in raw_pairs:
        if a not in map1:
            raise DataError(f"anchor node {a!r} not present in first graph")
        if b not in map2:
            raise DataError(f"anchor node {b!r} not present in second graph")
        out.append((map1[a], map2[b]))
    return AnchorLinkSet(np.asarray(out, dtype=np.int64).reshape(-1, 2), labels)


def bfs_ball(g: SimpleGraph, seed: int, hops: int) -> np.ndarray:
    """Sorted ids of all nodes within ``hops`` of ``seed`` (seed included)."""
    visited = np.zeros(g.node_count, dtype=bool)
    visited[seed] = True
    frontier = np.array([seed], dtype=np.int64)
    for _ in range(hops):
        if frontier.size == 0:
            break
        nxt = np.unique(g.indices[np.concatenate(
            [np.arange(g.indptr[v], g.indptr[v + 1]) for v in frontier])]) \
            if frontier.size else frontier
        nxt = nxt[~visited[nxt]]
        visited[nxt] = True
        frontier = nxt
    return np.flatnonzero(visited)


def bfs_order(g: SimpleGraph, start: int) -> np.ndarray:
    """Nodes of ``start``'s component in BFS visit order (FIFO, sorted ties)."""
    visited = np.zeros(g.node_count, dtype=bool)
    visited[start] = True
    order = [start]
    head = 0
    while head < len(order):
        v = order[head]
        head += 1
        for u in g.neighbors(v):
            if not visited[u]:
                visited[u] = True
                order.append(u)
    return np.asarray(order, dtype=np.int64)
