"""Alignment of independently trained embedding spaces.

Two alignment problems share the same affine map family x -> x G + b:

* partition alignment: each partition of one network is trained on its
  own, so the spaces differ by an arbitrary affine change of basis.
  Nodes injected into every partition give matched observations, and a
  per-partition map is fitted by log-sigmoid ascent toward the
  reference (first) partition, which stays fixed.
* cross-network alignment: labeled anchor pairs give matched rows
  between the two networks; the map is the ridge least-squares
  projection of the second network's rows onto the first's, solved in
  closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from .errors import DataError, IntegrityError

logger = logging.getLogger(__name__)

MAPS_VERSION = 1

WEIGHT_DECAY = 1e-4
ANCHOR_RIDGE = 1e-6


@dataclass
class LinearMap:
    """Affine row map x -> x @ matrix + bias."""

    matrix: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise DataError(f"map matrix must be square, got {self.matrix.shape}")
        if self.bias.shape != (self.matrix.shape[0],):
            raise DataError("map bias length does not match matrix")
        if not (np.isfinite(self.matrix).all() and np.isfinite(self.bias).all()):
            raise DataError("map parameters must be finite")

    @classmethod
    def identity(cls, dim: int) -> "LinearMap":
        return cls(np.eye(dim), np.zeros(dim))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x @ self.matrix + self.bias


@dataclass
class PartitionMaps:
    """One fitted map per partition; index 0 is the untouched reference."""

    maps: list[LinearMap]
    objectives: list[float] = field(default_factory=list)

    @property
    def partition_count(self) -> int:
        return len(self.maps)


def _shared_rows(ids, x, shared):
    """Rows of x for the shared nodes, in the order of ``shared``."""
    pos = {int(v): i for i, v in enumerate(ids)}
    take = []
    for v in shared:
        if int(v) not in pos:
            raise DataError(f"shared node {int(v)} missing from a partition")
        take.append(pos[int(v)])
    return x[np.array(take, dtype=np.int64)]


def partition_objective(m: LinearMap, x_src: np.ndarray,
                        x_ref: np.ndarray) -> float:
    """Sum of log-sigmoid inner products between mapped and reference rows."""
    z = np.einsum("ij,ij->i", m.apply(x_src), x_ref)
    return float(log_expit(z).sum())


def _whiten_matrix(u):
    """Symmetric whitener of centered rows and its inverse."""
    n, d = u.shape
    cov = u.T @ u / n
    cov = cov + np.eye(d) * (1e-8 * np.trace(cov) / d + 1e-12)
    lam, vec = np.linalg.eigh(cov)
    w = vec @ np.diag(1.0 / np.sqrt(lam)) @ vec.T
    w_inv = vec @ np.diag(np.sqrt(lam)) @ vec.T
    return w, w_inv


def _canonicalize(x, rounds=2):
    """Center and whiten rows, tracking the affine pieces.

    Returns (mean, whitener, inverse whitener, canonical rows). The
    canonical rows are additionally scaled to unit norm per row; the
    per-row scaling is a property of the fitting inputs only and is
    never part of the returned affine map.
    """
    d = x.shape[1]
    mu = x.mean(axis=0)
    u = x - mu
    total = np.eye(d)
    total_inv = np.eye(d)
    for _ in range(rounds):
        w, w_inv = _whiten_matrix(u)
        u = u @ w
        total = total @ w
        total_inv = w_inv @ total_inv
        norms = np.linalg.norm(u, axis=1, keepdims=True)
        u = u / np.where(norms > 0.0, norms, 1.0)
    return mu, total, total_inv, u


def _fit_single_map(x_src, x_ref, weight_decay, epochs, tol):
    """Line-searched gradient ascent on the decayed log-sigmoid objective.

    The raw objective is scale-sensitive: it rewards unbounded inner
    products, and once products saturate the sigmoid its optimum stops
    constraining directions, so fitting it directly degrades the very
    alignment it is meant to produce. The ascent therefore runs on
    canonicalized copies of both spaces (centered, whitened, rows on
    the unit sphere), where every shared pair has identical geometry
    and the unique optimum of the concave regularized objective is the
    direction-preserving one. The whitening/centering pieces are affine
    and fold into the returned map, which acts on the original spaces;
    if that map somehow scores below the identity start on the raw
    objective, the identity is returned instead.
    """
    n, d = x_src.shape
    ident = partition_objective(LinearMap.identity(d), x_src, x_ref)
    mu_s, w_s, _, u_src = _canonicalize(x_src)
    mu_r, w_r, w_r_inv, u_ref = _canonicalize(x_ref)

    def compose(m, b):
        # x -> ((x - mu_s) W_s m + b) W_r^{-1} + mu_r, flattened to one map
        return LinearMap(w_s @ m @ w_r_inv,
                         (b - mu_s @ w_s @ m) @ w_r_inv + mu_r)

    def reg_value(m, b):
        z = np.einsum("ij,ij->i", u_src @ m + b, u_ref)
        return float(log_expit(z).mean()) - 0.5 * weight_decay * float(
            (m * m).sum())

    mat = np.eye(d)
    bias = np.zeros(d)
    current = reg_value(mat, bias)
    step = 1.0
    for _ in range(epochs):
        z = np.einsum("ij,ij->i", u_src @ mat + bias, u_ref)
        s = expit(-z) / n
        g_mat = u_src.T @ (s[:, None] * u_ref) - weight_decay * mat
        g_bias = s @ u_ref
        g_sq = float((g_mat * g_mat).sum() + g_bias @ g_bias)
        if g_sq <= tol * tol:
            break
        step = min(step * 2.0, 1e6 / np.sqrt(g_sq))
        improved = False
        while step * np.sqrt(g_sq) > 1e-12:
            cand_m = mat + step * g_mat
            cand_b = bias + step * g_bias
            cand = reg_value(cand_m, cand_b)
            if cand > current + 1e-4 * step * g_sq:
                mat, bias, current = cand_m, cand_b, cand
                improved = True
                break
            step /= 2.0
        if not improved:
            break
    fitted = compose(mat, bias)
    raw = partition_objective(fitted, x_src, x_ref)
    if raw < ident:
        return LinearMap.identity(d), ident
    return fitted, raw


def fit_partition_maps(partition_embeddings, shared_nodes,
                       weight_decay: float = WEIGHT_DECAY,
                       epochs: int = 500, tol: float = 1e-8) -> PartitionMaps:
    """Fit one affine map per non-reference partition.

    ``partition_embeddings`` is a sequence of (node_ids, embedding
    matrix) pairs; the first entry is the reference space and keeps the
    identity map. Each map maximizes the summed log-sigmoid inner
    product between its mapped shared-node rows and the reference rows.
    """
    if not partition_embeddings:
        raise DataError("no partitions to reconcile")
    shared = np.asarray(shared_nodes, dtype=np.int64)
    if len(partition_embeddings) > 1 and shared.size == 0:
        raise DataError("partition reconciliation needs shared nodes")
    d = partition_embeddings[0][1].shape[1]
    if 0 < shared.size < d:
        logger.warning("only %d shared nodes for %d-dimensional maps; "
                       "fit is underdetermined", shared.size, d)
    maps = [LinearMap.identity(d)]
    objectives = [0.0]
    if len(partition_embeddings) == 1:
        return PartitionMaps(maps, objectives)
    ref_ids, ref_x = partition_embeddings[0]
    x_ref = _shared_rows(ref_ids, ref_x, shared)
    for ids, x in partition_embeddings[1:]:
        x_src = _shared_rows(ids, x, shared)
        fitted, value = _fit_single_map(x_src, x_ref, weight_decay, epochs,
                                        tol)
        maps.append(fitted)
        objectives.append(value)
    return PartitionMaps(maps, objectives)


def apply_maps(partition_embeddings, maps: PartitionMaps,
               node_count: int) -> np.ndarray:
    """Merge per-partition embeddings into one matrix over all nodes.

    Reference-partition rows pass through untouched; every other
    partition's rows go through its map. A node present in several
    partitions gets the average of its mapped rows; a node present in
    none is an integrity failure.
    """
    if len(partition_embeddings) != maps.partition_count:
        raise DataError(f"{len(partition_embeddings)} partitions but "
                        f"{maps.partition_count} maps")
    d = partition_embeddings[0][1].shape[1]
    total = np.zeros((node_count, d))
    counts = np.zeros(node_count, dtype=np.int64)
    for p, (ids, x) in enumerate(partition_embeddings):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.min(initial=0) < 0 or (ids >= node_count).any():
            raise DataError(f"partition {p} references nodes outside the "
                            f"graph")
        mapped = x if p == 0 else maps.maps[p].apply(x)
        np.add.at(total, ids, mapped)
        counts[ids] += 1
    if (counts == 0).any():
        missing = int((counts == 0).sum())
        raise IntegrityError(f"{missing} node(s) missing from every "
                             f"partition embedding")
    return total / counts[:, None]


def fit_anchor_map(x1: np.ndarray, x2: np.ndarray, anchors,
                   ridge: float = ANCHOR_RIDGE) -> LinearMap:
    """Closed-form ridge projection of the second space onto the first.

    ``anchors`` is either an (m, 2) array of (node-in-first,
    node-in-second) index pairs or an anchor-link set, in which case
    only its positive pairs are used. Minimizes the summed squared
    residual between first-space rows and affinely mapped second-space
    rows, plus ``ridge`` times the squared parameter norm.
    """
    pairs = getattr(anchors, "pairs", None)
    if pairs is not None:
        pairs = pairs[np.asarray(anchors.labels) == 1]
    else:
        pairs = np.asarray(anchors, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise DataError("anchor pairs must be an (m, 2) array")
    if len(pairs) == 0:
        raise DataError("anchor map fitting needs at least one pair")
    if ridge < 0:
        raise DataError(f"ridge must be non-negative, got {ridge}")
    target = x1[pairs[:, 0]]
    source = x2[pairs[:, 1]]
    m, d = source.shape
    z = np.concatenate([source, np.ones((m, 1))], axis=1)
    gram = z.T @ z
    rhs = z.T @ target
    eye = np.eye(d + 1)
    try:
        w = np.linalg.solve(gram + ridge * eye, rhs)
    except np.linalg.LinAlgError:
        fallback = ridge if ridge > 0 else ANCHOR_RIDGE
        logger.warning("anchor normal matrix singular; refitting with "
                       "ridge %g", fallback)
        w = np.linalg.solve(gram + fallback * eye, rhs)
    if not np.isfinite(w).all():
        fallback = max(ridge, ANCHOR_RIDGE)
        logger.warning("anchor solve produced non-finite values; refitting "
                       "with ridge %g", fallback)
        w = np.linalg.solve(gram + fallback * eye, rhs)
    return LinearMap(w[:d], w[d])


def anchor_residual(m: LinearMap, x1: np.ndarray, x2: np.ndarray,
                    pairs: np.ndarray, ridge: float = ANCHOR_RIDGE) -> float:
    """Ridge-regularized squared residual of a candidate anchor map."""
    diff = x1[pairs[:, 0]] - m.apply(x2[pairs[:, 1]])
    penalty = ridge * (float((m.matrix * m.matrix).sum())
                       + float(m.bias @ m.bias))
    return float((diff * diff).sum()) + penalty


def save_maps(path, pm: PartitionMaps) -> None:
    arrays = {
        "maps_version": np.int64(MAPS_VERSION),
        "count": np.int64(pm.partition_count),
        "objectives": np.asarray(pm.objectives, dtype=np.float64),
    }
    for p, m in enumerate(pm.maps):
        arrays[f"matrix_{p}"] = m.matrix
        arrays[f"bias_{p}"] = m.bias
    np.savez(path, **arrays)


def load_maps(path) -> PartitionMaps:
    with np.load(path, allow_pickle=False) as data:
        if "maps_version" not in data:
            raise DataError(f"{path}: not a reconciliation map file")
        if int(data["maps_version"]) != MAPS_VERSION:
            raise DataError(f"{path}: unsupported map file version")
        count = int(data["count"])
        maps = [LinearMap(data[f"matrix_{p}"], data[f"bias_{p}"])
                for p in range(count)]
        objectives = [float(v) for v in data["objectives"]]
    return PartitionMaps(maps, objectives)
