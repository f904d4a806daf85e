"""Shared oracles and generators for the test suite.

Everything here is deliberately naive: dense matrices, dict-of-set graphs,
explicit loops. The point is that these implementations are simple enough
to be obviously correct so the fast library code can be checked against
them.
"""

import numpy as np

from mgcn.graph import SimpleGraph


def random_graph(rng, n, p):
    """Erdos-Renyi style graph via the library constructor."""
    mask = rng.random((n, n)) < p
    iu = np.triu_indices(n, k=1)
    edges = [(int(i), int(j)) for i, j in zip(*iu) if mask[i, j]]
    return SimpleGraph.from_edges(n, edges)


def edge_set(g):
    """Set of frozenset edges, independent of storage order."""
    return {frozenset(e) for e in g.edges().tolist()}


def dense_adjacency(g):
    a = np.zeros((g.node_count, g.node_count))
    for u, v in g.edges():
        a[u, v] = a[v, u] = 1.0
    return a


def dense_normalized_adjacency(g):
    """I + D^{-1/2} A D^{-1/2} computed with dense numpy, loops and all."""
    a = dense_adjacency(g)
    d = a.sum(axis=1)
    dinv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    return np.eye(g.node_count) + dinv[:, None] * a * dinv[None, :]


def dense_hypergraph_operator(incidence_dense):
    """D_n^{-1/2} H H^T D_n^{-1/2} with weighted node degrees."""
    h = np.asarray(incidence_dense, dtype=float)
    dn = h.sum(axis=1)
    dinv = np.where(dn > 0, 1.0 / np.sqrt(np.where(dn > 0, dn, 1.0)), 0.0)
    return dinv[:, None] * (h @ h.T) * dinv[None, :]


def brute_force_bfs_ball(g, seed, hops):
    """Hop-limited reachability by repeated neighbor expansion."""
    ball = {seed}
    frontier = {seed}
    for _ in range(hops):
        nxt = set()
        for v in frontier:
            nxt.update(int(u) for u in g.neighbors(v))
        frontier = nxt - ball
        ball |= frontier
    return np.array(sorted(ball), dtype=np.int64)


def finite_difference_gradient(f, x, step=1e-6):
    """Central-difference gradient of scalar f at x (same shape as x)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        fp = f(x)
        x[idx] = orig - step
        fm = f(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * step)
        it.iternext()
    return grad


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom
