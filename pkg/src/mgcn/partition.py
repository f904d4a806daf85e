"""Community detection and size-constrained graph partitioning.

Louvain here works on an explicit weighted multilevel representation
(list-of-pairs adjacency plus per-node self-loop weight) so aggregation
levels stay self-contained. The partitioning loop enforces size bounds by
dissolving under-sized communities into their neighbors and recursively
re-splitting over-sized ones.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .graph import SimpleGraph, bfs_order

logger = logging.getLogger(__name__)

_MIN_IMPROVEMENT = 1e-7
_MAX_SWEEPS = 1000


@dataclass
class CommunityAssignment:
    """Dense community id per node plus from-scratch modularity."""

    assignment: np.ndarray
    modularity: float

    @property
    def community_count(self) -> int:
        return int(self.assignment.max()) + 1 if len(self.assignment) else 0

    def groups(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.assignment == c)
                for c in range(self.community_count)]


@dataclass
class Partition:
    """One partition: induced subgraph, its global ids, and owned subset.

    ``nodes[i]`` is the global id of local node i. ``owned`` is the
    pre-injection node set; after shared-node injection ``nodes`` is the
    union of ``owned`` and the shared set.
    """

    graph: SimpleGraph
    nodes: np.ndarray
    owned: np.ndarray

    def local_id(self, global_ids) -> np.ndarray:
        idx = np.searchsorted(self.nodes, global_ids)
        idx = np.clip(idx, 0, len(self.nodes) - 1)
        ok = self.nodes[idx] == global_ids
        if not np.all(ok):
            raise DataError("node not present in partition")
        return idx


@dataclass
class PartitionSet:
    partitions: list[Partition]
    shared_nodes: np.ndarray
    n_min: int
    n_max: int
    passes_used: int = 0

    def __len__(self) -> int:
        return len(self.partitions)

    def owner_of(self, node_count: int) -> np.ndarray:
        """Partition index owning each global node (pre-injection sets)."""
        owner = np.full(node_count, -1, dtype=np.int64)
        for i, p in enumerate(self.partitions):
            owner[p.owned] = i
        return owner


def modularity(g: SimpleGraph, assignment) -> float:
    """Standard unweighted modularity of a community assignment."""
    m = g.edge_count
    if m == 0:
        return 0.0
    comm = np.asarray(assignment, dtype=np.int64)
    e = g.edges()
    intra = np.count_nonzero(comm[e[:, 0]] == comm[e[:, 1]])
    deg = g.degrees().astype(np.float64)
    tot = np.bincount(comm, weights=deg)
    return intra / m - float(((tot / (2.0 * m)) ** 2).sum())


def _level_degrees(adj, selfw):
    return np.array([sum(w for _, w in nbrs) for nbrs in adj]) + 2.0 * np.asarray(selfw)


def _level_modularity(adj, selfw, k, m2, comm):
    nc = int(max(comm)) + 1
    sigma_in = np.zeros(nc)
    sigma_tot = np.zeros(nc)
    for v in range(len(adj)):
        c = comm[v]
        sigma_tot[c] += k[v]
        sigma_in[c] += 2.0 * selfw[v]
        for u, w in adj[v]:
            if comm[u] == c:
                sigma_in[c] += w
    return float((sigma_in / m2 - (sigma_tot / m2) ** 2).sum())


def _local_moves(adj, k, m2, rng):
    """Greedy modularity moves to a fixed point; returns community ids."""
    n = len(adj)
    comm = np.arange(n)
    sigma_tot = k.astype(np.float64).copy()
    for _ in range(_MAX_SWEEPS):
        moved = False
        for v in rng.permutation(n):
            cv = comm[v]
            ncw: dict[int, float] = {}
            for u, w in adj[v]:
                c = int(comm[u])
                ncw[c] = ncw.get(c, 0.0) + w
            sigma_tot[cv] -= k[v]
            best_c = cv
            best_gain = ncw.get(cv, 0.0) - sigma_tot[cv] * k[v] / m2
            for c in sorted(ncw):
                if c == cv:
                    continue
                gain = ncw[c] - sigma_tot[c] * k[v] / m2
                if gain > best_gain:
                    best_gain, best_c = gain, c
            sigma_tot[best_c] += k[v]
            if best_c != cv:
                comm[v] = best_c
                moved = True
        if not moved:
            return comm
    logger.warning("local move phase hit the sweep cap")
    return comm


def _aggregate(adj, selfw, comm, n_comms):
    """Collapse communities into nodes, summing weights."""
    new_selfw = [0.0] * n_comms
    acc: list[dict[int, float]] = [dict() for _ in range(n_comms)]
    for v in range(len(adj)):
        cv = comm[v]
        new_selfw[cv] += selfw[v]
        for u, w in adj[v]:
            cu = comm[u]
            if cu == cv:
                new_selfw[cv] += 0.5 * w  # both directions visited
            else:
                acc[cv][cu] = acc[cv].get(cu, 0.0) + w
    new_adj = [sorted(d.items()) for d in acc]
    return new_adj, new_selfw


def _dense_relabel(comm):
    """Relabel ids densely in first-appearance order; returns (new, count)."""
    remap: dict[int, int] = {}
    out = np.empty(len(comm), dtype=np.int64)
    for v, c in enumerate(comm):
        c = int(c)
        if c not in remap:
            remap[c] = len(remap)
        out[v] = remap[c]
    return out, len(remap)


def louvain(g: SimpleGraph, seed=0) -> CommunityAssignment:
    """Two-phase Louvain with seeded node visit order.

    Repeats local-move passes and community aggregation until the
    modularity improvement falls to 1e-7 or below.
    """
    n = g.node_count
    if n == 0:
        raise DataError("louvain requires a nonempty graph")
    if g.edge_count == 0:
        return CommunityAssignment(np.arange(n), 0.0)
    rng = np.random.default_rng(seed)

    adj = [[(int(u), 1.0) for u in g.neighbors(v)] for v in range(n)]
    selfw = [0.0] * n
    m2 = float(2 * g.edge_count)
    node_comm = np.arange(n)
    q_prev = _level_modularity(adj, selfw, _level_degrees(adj, selfw), m2,
                               np.arange(n))
    while True:
        k = _level_degrees(adj, selfw)
        comm = _local_moves(adj, k, m2, rng)
        comm, n_comms = _dense_relabel(comm)
        node_comm = comm[node_comm]
        q = _level_modularity(adj, selfw, k, m2, comm)
        if q - q_prev <= _MIN_IMPROVEMENT or n_comms == len(adj):
            break
        q_prev = q
        adj, selfw = _aggregate(adj, selfw, comm, n_comms)
    node_comm, _ = _dense_relabel(node_comm)
    return CommunityAssignment(node_comm, modularity(g, node_comm))


def _full_bfs_order(g: SimpleGraph) -> np.ndarray:
    """BFS visit order covering all components, seeds in ascending id."""
    seen = np.zeros(g.node_count, dtype=bool)
    chunks = []
    for s in range(g.node_count):
        if not seen[s]:
            comp = bfs_order(g, s)
            seen[comp] = True
            chunks.append(comp)
    return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)


def _split_group(g: SimpleGraph, grp: np.ndarray, n_max: int, rng) -> list[np.ndarray]:
    """Split an over-sized node group until every piece fits under n_max."""
    sub, ids = g.induced_subgraph(grp)
    comm = louvain(sub, rng)
    if comm.community_count <= 1:
        logger.info("community split failed on %d nodes; using balanced "
                    "bisection by BFS order", len(grp))
        order = _full_bfs_order(sub)
        half = (len(order) + 1) // 2
        pieces = [ids[np.sort(order[:half])], ids[np.sort(order[half:])]]
    else:
        pieces = [ids[m] for m in comm.groups()]
    out = []
    for piece in pieces:
        if len(piece) > n_max:
            out.extend(_split_group(g, piece, n_max, rng))
        else:
            out.append(piece)
    return out


def _refine_once(g: SimpleGraph, groups, n_min, n_max, rng):
    """One refinement pass: dissolve under-sized groups, split over-sized."""
    changed = False
    survivors = [i for i, grp in enumerate(groups) if len(grp) >= n_min]
    if len(survivors) < len(groups):
        changed = True
        if not survivors:
            groups = [np.unique(np.concatenate(groups))]
        else:
            owner = np.full(g.node_count, -1, dtype=np.int64)
            for rank, i in enumerate(survivors):
                owner[groups[i]] = rank
            snap_sizes = np.array([len(groups[i]) for i in survivors])
            members = [list(groups[i]) for i in survivors]
            dissolved = sorted(
                int(v) for i, grp in enumerate(groups)
                if i not in set(survivors) for v in grp)
            for v in dissolved:
                counts = np.zeros(len(survivors), dtype=np.int64)
                for u in g.neighbors(v):
                    if owner[u] >= 0:
                        counts[owner[u]] += 1
                best = min(range(len(survivors)),
                           key=lambda r: (-counts[r], snap_sizes[r], r))
                members[best].append(v)
            groups = [np.array(sorted(m), dtype=np.int64) for m in members]
    out = []
    for grp in groups:
        if len(grp) > n_max:
            changed = True
            out.extend(_split_group(g, grp, n_max, rng))
        else:
            out.append(grp)
    return out, changed


def partition_graph(g: SimpleGraph, n_min: int = 1000, n_max: int = 15000,
                    passes: int = 10, seed=0) -> PartitionSet:
    """Community-driven partitioning with size bounds.

    Starts from Louvain communities, then iterates refinement passes
    (dissolve groups smaller than n_min into the neighboring partition
    with the most adjacent nodes, re-split groups larger than n_max)
    until a fixed point or the pass cap. After completion no partition
    exceeds n_max; at most a residual partition may sit below n_min when
    there is nothing to merge into.
    """
    if not 3 <= n_min < n_max:
        raise ConfigError(
            f"need 3 <= n_min < n_max, got n_min={n_min}, n_max={n_max}")
    rng = np.random.default_rng(seed)
    groups = louvain(g, rng).groups()
    passes_used = 0
    for _ in range(passes):
        groups, changed = _refine_once(g, groups, n_min, n_max, rng)
        passes_used += 1
        if not changed:
            break
    groups.sort(key=lambda grp: (-len(grp), int(grp[0])))
    parts = []
    for grp in groups:
        sub, ids = g.induced_subgraph(grp)
        parts.append(Partition(sub, ids, ids))
    return PartitionSet(parts, np.zeros(0, dtype=np.int64), n_min, n_max,
                        passes_used)


def select_shared_nodes(g: SimpleGraph, n: int, strategy: str = "degree",
                        seed=0) -> np.ndarray:
    if not 0 <= n <= g.node_count:
        raise ConfigError(f"shared node count {n} outside [0, {g.node_count}]")
    if strategy == "degree":
        order = np.lexsort((np.arange(g.node_count), -g.degrees()))
        chosen = order[:n]
    elif strategy == "random":
        chosen = np.random.default_rng(seed).choice(
            g.node_count, size=n, replace=False)
    else:
        raise ConfigError(f"unknown shared-node strategy {strategy!r}")
    return np.sort(chosen)


def inject_shared_nodes(ps: PartitionSet, g: SimpleGraph, n: int,
                        strategy: str = "degree", seed=0) -> PartitionSet:
    """Add n globally selected nodes (and their incident edges) to every
    partition. Ownership is unchanged; each partition's graph becomes the
    induced subgraph on its owned set united with the shared set.
    """
    shared = select_shared_nodes(g, n, strategy, seed)
    parts = []
    for part in ps.partitions:
        nodes = np.union1d(part.owned, shared)
        sub, ids = g.induced_subgraph(nodes)
        parts.append(Partition(sub, ids, part.owned))
    return PartitionSet(parts, shared, ps.n_min, ps.n_max, ps.passes_used)


PARTITION_FORMAT_VERSION = 1


def save_partition_manifest(path, ps: PartitionSet, labels=None) -> None:
    """Line format: header, `s <node>` shared rows, `p <idx> <node>` rows."""
    def name(v):
        return labels[v] if labels is not None else str(int(v))

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"mgcn-partitions {PARTITION_FORMAT_VERSION} "
                 f"{len(ps.partitions)} {ps.n_min} {ps.n_max}\n")
        for v in ps.shared_nodes:
            fh.write(f"s {name(v)}\n")
        for i, part in enumerate(ps.partitions):
            for v in part.owned:
                fh.write(f"p {i} {name(v)}\n")


def load_partition_manifest(path, g: SimpleGraph, labels=None) -> PartitionSet:
    """Rebuild a PartitionSet from a manifest plus the source graph."""
    to_id = ({lab: i for i, lab in enumerate(labels)} if labels is not None
             else None)

    def ident(tok):
        if to_id is not None:
            if tok not in to_id:
                raise DataError(f"{path}: unknown node {tok!r}")
            return to_id[tok]
        return int(tok)

    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[0] != "mgcn-partitions":
            raise DataError(f"{path}: not a partition manifest")
        if int(header[1]) != PARTITION_FORMAT_VERSION:
            raise DataError(f"{path}: unsupported manifest version {header[1]}")
        count, n_min, n_max = int(header[2]), int(header[3]), int(header[4])
        shared = []
        owned: list[list[int]] = [[] for _ in range(count)]
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "s" and len(parts) == 2:
                shared.append(ident(parts[1]))
            elif parts[0] == "p" and len(parts) == 3:
                idx = int(parts[1])
                if not 0 <= idx < count:
                    raise DataError(f"{path}:{lineno}: partition index out of range")
                owned[idx].append(ident(parts[2]))
            else:
                raise DataError(f"{path}:{lineno}: bad record")
    all_owned = np.concatenate([np.asarray(o, dtype=np.int64) for o in owned]) \
        if count else np.zeros(0, dtype=np.int64)
    if len(np.unique(all_owned)) != len(all_owned):
        raise DataError(f"{path}: a node is owned by multiple partitions")
    if len(all_owned) != g.node_count:
        raise DataError(f"{path}: manifest covers {len(all_owned)} of "
                        f"{g.node_count} nodes")
    shared_arr = np.sort(np.asarray(shared, dtype=np.int64))
    parts = []
    for o in owned:
        own = np.sort(np.asarray(o, dtype=np.int64))
        nodes = np.union1d(own, shared_arr)
        sub, ids = g.induced_subgraph(nodes)
        parts.append(Partition(sub, ids, own))
    return PartitionSet(parts, shared_arr, n_min, n_max)
