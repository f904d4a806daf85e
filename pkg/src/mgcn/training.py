"""Skip-gram style embedding objective over graph edges, with degree-biased
negative sampling and the optimizer loop.

The objective rewards high inner products on observed edges and low inner
products against noise nodes drawn with probability proportional to
degree^0.75, M per endpoint. Training minimizes the negated objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, DivergenceError
from .graph import SimpleGraph
from .model import (ConvStructures, ModelConfig, ModelParams, calibrate_x0,
                    estimate_gains, forward_tensors, forward_values,
                    init_params)

logger = logging.getLogger(__name__)

NEGATIVE_EXPONENT = 0.75


class NegativeSampler:
    """Draws node ids with probability proportional to degree^0.75.

    Isolated nodes carry zero mass and are never drawn.
    """

    def __init__(self, degrees, m: int = 5, seed=0):
        degrees = np.asarray(degrees, dtype=np.float64)
        if m < 0:
            raise ConfigError(f"negatives per side must be >= 0, got {m}")
        mass = degrees ** NEGATIVE_EXPONENT
        total = mass.sum()
        if total <= 0.0:
            raise DataError("cannot build a sampler: every node is isolated")
        self.m = m
        self.cumulative = np.cumsum(mass)
        self.total = self.cumulative[-1]
        self.rng = np.random.default_rng(seed)

    @property
    def probabilities(self) -> np.ndarray:
        mass = np.diff(self.cumulative, prepend=0.0)
        return mass / self.total

    def sample(self, count: int) -> np.ndarray:
        u = self.rng.random(count) * self.total
        return np.searchsorted(self.cumulative, u, side="right")


def sample_negatives(sampler: NegativeSampler, edge) -> np.ndarray:
    """2M noise nodes for one edge: M against each endpoint."""
    del edge  # noise draws are independent of the fixed endpoints
    return sampler.sample(2 * sampler.m)


@dataclass
class LossValue:
    """Objective value (to be maximized) and its per-term breakdown."""

    value: float
    positive: float
    negative_left: float
    negative_right: float
    loss_tensor: ad.Tensor = field(repr=False, default=None)

    @property
    def loss(self) -> float:
        return -self.value


def embedding_loss(x: ad.Tensor, edges: np.ndarray,
                   negatives: np.ndarray) -> LossValue:
    """Edge objective: sum over edges (i,j) of
    log s(x_i . x_j) + sum_k log s(-x_i . x_k) + sum_k log s(-x_j . x_k)
    with s the logistic function; negatives[:, :M] pair with i and the
    rest with j. Returns the objective and a tensor holding its negation.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    negatives = np.asarray(negatives, dtype=np.int64).reshape(len(edges), -1)
    if negatives.shape[1] % 2 != 0:
        raise DataError("negatives must come in two equal halves")
    m = negatives.shape[1] // 2
    xi = ad.gather_rows(x, edges[:, 0])
    xj = ad.gather_rows(x, edges[:, 1])
    pos = ad.tsum(ad.logsigmoid(ad.tsum(ad.mul(xi, xj), axis=1)))
    terms = [pos]
    sides = []
    for col, fixed in ((negatives[:, :m], edges[:, 0]),
                       (negatives[:, m:], edges[:, 1])):
        if m == 0:
            sides.append(ad.Tensor(0.0))
            continue
        xf = ad.gather_rows(x, np.repeat(fixed, m))
        xk = ad.gather_rows(x, col.ravel())
        logits = ad.tsum(ad.mul(xf, xk), axis=1)
        sides.append(ad.tsum(ad.logsigmoid(ad.mul(logits, -1.0))))
    terms.extend(sides)
    objective = ad.add(ad.add(terms[0], terms[1]), terms[2])
    loss_tensor = ad.mul(objective, -1.0)
    return LossValue(float(objective.value), float(pos.value),
                     float(sides[0].value), float(sides[1].value),
                     loss_tensor)


def gradients(structs: ConvStructures, params: ModelParams,
              config: ModelConfig, edges, negatives,
              mode: str = "mgcn") -> tuple[LossValue, list[np.ndarray]]:
    """Loss and exact gradients of the negated objective for one batch,
    aligned with params.trainable(mode)."""
    trainable = params.trainable(mode)
    ad.zero_grads(trainable)
    x = forward_tensors(structs, params, config, mode)
    lv = embedding_loss(x, edges, negatives)
    ad.backward(lv.loss_tensor)
    grads = [p.grad.copy() if p.grad is not None else np.zeros_like(p.value)
             for p in trainable]
    return lv, grads


class SGD:
    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.value = p.value - self.lr * p.grad


class Adam:
    """Per-parameter adaptive steps with bias-corrected moments."""

    def __init__(self, params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * p.grad ** 2
            mhat = self.m[i] / b1t
            vhat = self.v[i] / b2t
            p.value = p.value - self.lr * mhat / (np.sqrt(vhat) + self.eps)


OPTIMIZERS = {"adam": Adam, "sgd": SGD}


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 1024
    optimizer: str = "adam"
    negatives: int = 5
    seed: int = 0
    early_stop_rel: float = 1e-4
    early_stop_window: int = 10

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.negatives < 0:
            raise ConfigError("negatives must be >= 0")


@dataclass
class TrainResult:
    params: ModelParams
    embeddings: np.ndarray
    trace: list
    epochs_run: int


def train_embeddings(g: SimpleGraph, hypergraph, model_config: ModelConfig,
                     train_config: TrainConfig, params: ModelParams = None,
                     mode: str = "mgcn") -> TrainResult:
    """Optimize the edge objective; returns params, final embeddings, and a
    per-epoch trace of (epoch, loss, positive term, negative term).

    Positive edges are shuffled each epoch and negatives redrawn per edge.
    Stops early when the loss improves by less than early_stop_rel
    relative over early_stop_window epochs. Raises DivergenceError when
    the loss stops being finite.
    """
    edges = g.edges()
    if len(edges) == 0:
        raise DataError("training requires at least one edge")
    root = np.random.SeedSequence(train_config.seed)
    init_seed, sampler_seed, shuffle_seed = root.spawn(3)
    structs = ConvStructures(g, hypergraph)
    if params is None:
        params = init_params(g.node_count, model_config, init_seed,
                             gains=estimate_gains(structs, mode))
        calibrate_x0(structs, params, model_config, mode)
    sampler = NegativeSampler(g.degrees(), train_config.negatives,
                              sampler_seed)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    opt = OPTIMIZERS[train_config.optimizer](params.trainable(mode),
                                             train_config.learning_rate)
    trace = []
    epochs_run = 0
    for epoch in range(train_config.epochs):
        order = shuffle_rng.permutation(len(edges))
        total = pos_total = neg_total = 0.0
        for start in range(0, len(order), train_config.batch_size):
            batch = edges[order[start:start + train_config.batch_size]]
            negs = sampler.sample(2 * sampler.m * len(batch)) \
                .reshape(len(batch), 2 * sampler.m)
            trainable = params.trainable(mode)
            ad.zero_grads(trainable)
            x = forward_tensors(structs, params, model_config, mode)
            lv = embedding_loss(x, batch, negs)
            if not np.isfinite(lv.value):
                raise DivergenceError(
                    f"objective became non-finite at epoch {epoch}")
            ad.backward(lv.loss_tensor)
            opt.step()
            total += lv.loss
            pos_total += lv.positive
            neg_total += lv.negative_left + lv.negative_right
        trace.append((epoch, total, pos_total, neg_total))
        epochs_run = epoch + 1
        w = train_config.early_stop_window
        if len(trace) > w:
            prev = trace[-w - 1][1]
            if (prev - total) / max(abs(prev), 1e-12) < train_config.early_stop_rel:
                logger.info("early stop at epoch %d", epoch)
                break
    embeddings = forward_values(structs, params, model_config, mode)
    if not np.isfinite(embeddings).all():
        raise DivergenceError("embeddings contain non-finite values")
    return TrainResult(params, embeddings, trace, epochs_run)


def save_loss_trace(path, trace) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,pos_term,neg_term\n")
        for epoch, loss, pos, neg in trace:
            fh.write(f"{epoch},{loss!r},{pos!r},{neg!r}\n")
