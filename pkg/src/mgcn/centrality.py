"""Node centrality measures on SimpleGraph.

All functions return a float64 vector indexed by node id. These back the
centrality-driven hyperedge constructor, so determinism matters more than
raw speed: every tie is broken by node id and no wall-clock cutoffs are
used.
"""

from __future__ import annotations

import heapq
from collections import deque

import numpy as np

from .graph import SimpleGraph


def degree_centrality(g: SimpleGraph) -> np.ndarray:
    return g.degrees().astype(np.float64)


def betweenness_centrality(g: SimpleGraph) -> np.ndarray:
    """Shortest-path betweenness via Brandes' accumulation.

    Unnormalized; each unordered pair contributes to both directions, so
    values match the standard undirected definition after halving.
    """
    n = g.node_count
    bc = np.zeros(n)
    for s in range(n):
        sigma = np.zeros(n)
        sigma[s] = 1.0
        dist = np.full(n, -1, dtype=np.int64)
        dist[s] = 0
        preds: list[list[int]] = [[] for _ in range(n)]
        order = []
        queue = deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in g.neighbors(v):
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(n)
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc / 2.0


def clustering_coefficient(g: SimpleGraph) -> np.ndarray:
    """Fraction of closed wedges at each node; 0 for degree < 2."""
    n = g.node_count
    out = np.zeros(n)
    for v in range(n):
        nbrs = g.neighbors(v)
        k = len(nbrs)
        if k < 2:
            continue
        links = 0
        nbr_set = set(nbrs.tolist())
        for u in nbrs:
            links += len(nbr_set.intersection(g.neighbors(u).tolist()))
        out[v] = links / (k * (k - 1))
    return out


def eigenvector_centrality(g: SimpleGraph, max_iter: int = 200,
                           tol: float = 1e-10) -> np.ndarray:
    """Dominant adjacency eigenvector by power iteration, L2-normalized.

    Starts from the uniform vector; isolated nodes stay at 0 because the
    adjacency annihilates them.
    """
    n = g.node_count
    adj = g.adjacency()
    x = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(max_iter):
        nxt = adj @ x
        norm = np.linalg.norm(nxt)
        if norm == 0.0:
            return np.zeros(n)
        nxt /= norm
        if np.max(np.abs(nxt - x)) < tol:
            x = nxt
            break
        x = nxt
    return x


def pagerank(g: SimpleGraph, damping: float = 0.85, max_iter: int = 200,
             tol: float = 1e-12) -> np.ndarray:
    """Power-iteration PageRank; dangling mass is redistributed uniformly."""
    n = g.node_count
    deg = g.degrees().astype(np.float64)
    adj = g.adjacency()
    inv_deg = np.zeros(n)
    np.divide(1.0, deg, out=inv_deg, where=deg > 0)
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        dangling = x[deg == 0].sum()
        nxt = damping * (adj.T @ (x * inv_deg)) \
            + (damping * dangling + 1.0 - damping) / n
        if np.abs(nxt - x).sum() < tol:
            x = nxt
            break
        x = nxt
    return x


def closeness_centrality(g: SimpleGraph) -> np.ndarray:
    """Component-local closeness: (reachable - 1) / sum of distances.

    Uses the Wasserman-Faust style scaling by component coverage so values
    are comparable across disconnected graphs. Isolated nodes get 0.
    """
    n = g.node_count
    out = np.zeros(n)
    for s in range(n):
        dist = np.full(n, -1, dtype=np.int64)
        dist[s] = 0
        queue = deque([s])
        total = 0
        reach = 0
        while queue:
            v = queue.popleft()
            for w in g.neighbors(v):
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    total += dist[w]
                    reach += 1
                    queue.append(w)
        if total > 0:
            out[s] = (reach / (n - 1)) * (reach / total) if n > 1 else 0.0
    return out


def core_numbers(g: SimpleGraph) -> np.ndarray:
    """k-core decomposition by repeated removal of minimum-degree nodes."""
    n = g.node_count
    deg = g.degrees().astype(np.int64).copy()
    core = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    # lazy-deletion heap over (degree, id); stale entries are skipped
    heap = [(int(deg[v]), v) for v in range(n)]
    heapq.heapify(heap)
    current = 0
    removed = 0
    while removed < n:
        d, v = heapq.heappop(heap)
        if not alive[v] or d != deg[v]:
            continue
        current = max(current, d)
        core[v] = current
        alive[v] = False
        removed += 1
        for u in g.neighbors(v):
            if alive[u]:
                deg[u] -= 1
                heapq.heappush(heap, (int(deg[u]), u))
    return core


class _CliqueBudget:
    """Deterministic work budget for the clique search.

    Counts branch expansions instead of wall time so results do not depend
    on machine speed.
    """

    def __init__(self, limit: int):
        self.limit = limit
        self.spent = 0

    def tick(self) -> bool:
        self.spent += 1
        return self.spent <= self.limit


def _max_clique_with(g: SimpleGraph, v: int, budget: _CliqueBudget) -> int | None:
    """Size of the largest clique containing v, or None if budget runs out.

    Bron-Kerbosch with greedy pivoting, restricted to v's neighborhood.
    """
    nbrs = {int(u): set(g.neighbors(u).tolist()) for u in g.neighbors(v)}
    best = 1  # v alone

    def expand(r_size: int, cand: set, excl: set) -> bool:
        nonlocal best
        if not budget.tick():
            return False
        if not cand and not excl:
            best = max(best, r_size)
            return True
        if r_size + len(cand) <= best:
            return True
        pivot_pool = cand | excl
        pivot = max(pivot_pool,
                    key=lambda u: (len(cand & nbrs.get(u, set())), -u))
        for u in sorted(cand - nbrs.get(pivot, set())):
            if not expand(r_size + 1, cand & nbrs[u], excl & nbrs[u]):
                return False
            cand = cand - {u}
            excl = excl | {u}
        return True

    ok = expand(1, set(nbrs.keys()), set())
    return best if ok else None


def node_clique_number(g: SimpleGraph, budget_per_node: int = 200_000) -> np.ndarray:
    """Largest clique size containing each node.

    Exact where the per-node branch budget allows; when the search is cut
    off the value falls back to the core-number bound (core + 1), which is
    an upper bound and keeps the output deterministic.
    """
    n = g.node_count
    core = core_numbers(g)
    deg = g.degrees()
    out = np.ones(n)
    for v in range(n):
        if deg[v] == 0:
            out[v] = 1.0
            continue
        size = _max_clique_with(g, v, _CliqueBudget(budget_per_node))
        out[v] = float(size) if size is not None else float(core[v] + 1)
    return out
