"""Pair features, the anchor-pair classifier, and macro-averaged scoring.

A candidate pair (node in the first network, node in the second) is
represented by concatenating the two reconciled embedding rows. A small
fully connected network with one rectified hidden layer and a softmax
head scores each pair; macro metrics average the per-class precision,
recall, and F1 with equal class weight.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError
from .training import Adam, SGD

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-12

CLASSIFIER_VERSION = 1


def pair_features(x1: np.ndarray, x2: np.ndarray,
                  pairs: np.ndarray) -> np.ndarray:
    """Concatenated embedding rows for (first-network, second-network) pairs."""
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise DataError("pairs must be an (m, 2) array")
    return np.concatenate([x1[pairs[:, 0]], x2[pairs[:, 1]]], axis=1)


def degree_pair_features(g1, g2, pairs: np.ndarray) -> np.ndarray:
    """Structure-only baseline features: raw and log degrees per side."""
    pairs = np.asarray(pairs, dtype=np.int64)
    d1 = g1.degrees().astype(np.float64)
    d2 = g2.degrees().astype(np.float64)
    a = d1[pairs[:, 0]]
    b = d2[pairs[:, 1]]
    return np.stack([a, np.log1p(a), b, np.log1p(b)], axis=1)


@dataclass
class ClassifierConfig:
    hidden: int = 128
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 256
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1:
            raise ConfigError(f"hidden width must be >= 1, got {self.hidden}")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


class MLPClassifier:
    """Two-layer network: inputs -> rectified hidden -> two softmax logits."""

    def __init__(self, w1, b1, w2, b2):
        self.w1 = w1 if isinstance(w1, ad.Tensor) else ad.Tensor(w1)
        self.b1 = b1 if isinstance(b1, ad.Tensor) else ad.Tensor(b1)
        self.w2 = w2 if isinstance(w2, ad.Tensor) else ad.Tensor(w2)
        self.b2 = b2 if isinstance(b2, ad.Tensor) else ad.Tensor(b2)

    @classmethod
    def init(cls, in_dim: int, hidden: int, seed=0) -> "MLPClassifier":
        rng = np.random.default_rng(seed)
        w1 = rng.uniform(-1, 1, size=(in_dim, hidden)) * np.sqrt(3.0 / in_dim)
        w2 = rng.uniform(-1, 1, size=(hidden, 2)) * np.sqrt(3.0 / hidden)
        return cls(w1, np.zeros(hidden), w2, np.zeros(2))

    @property
    def in_dim(self) -> int:
        return self.w1.value.shape[0]

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def _check_features(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.in_dim:
            raise DataError(f"classifier expects {self.in_dim} features per "
                            f"row, got shape {features.shape}")
        return features

    def logits_tensor(self, features: np.ndarray) -> ad.Tensor:
        x = ad.Tensor(self._check_features(features))
        h = ad.relu(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.add(ad.matmul(h, self.w2), self.b2)

    def logits(self, features: np.ndarray) -> np.ndarray:
        x = self._check_features(features)
        h = np.maximum(x @ self.w1.value + self.b1.value, 0.0)
        return h @ self.w2.value + self.b2.value

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        """Per-row (P(not anchor), P(anchor)), rows summing to one."""
        z = self.logits(features)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def predict(clf: MLPClassifier, features: np.ndarray) -> np.ndarray:
    """Probability that each pair is an anchor link."""
    return clf.predict_proba(features)[:, 1]


def predict_labels(clf: MLPClassifier, features: np.ndarray,
                   threshold: float = 0.5) -> np.ndarray:
    return (predict(clf, features) >= threshold).astype(np.int64)


def cross_entropy(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log likelihood with probabilities clamped away from 0."""
    p = np.clip(probabilities, PROB_CLAMP, 1.0 - PROB_CLAMP)
    picked = np.where(np.asarray(labels) == 1, p[:, 1], p[:, 0])
    return float(-np.log(picked).mean())


def train_classifier(features: np.ndarray, labels: np.ndarray,
                     config: ClassifierConfig | None = None) -> MLPClassifier:
    """Minibatch cross-entropy training of the pair classifier."""
    if config is None:
        config = ClassifierConfig()
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or len(features) != len(labels):
        raise DataError("features and labels must align")
    classes = np.unique(labels)
    if not np.array_equal(classes, np.array([0, 1])):
        raise DataError("training set must contain both classes with "
                        "labels 0 and 1")
    root = np.random.SeedSequence(config.seed)
    init_seed, shuffle_seed = root.spawn(2)
    clf = MLPClassifier.init(features.shape[1], config.hidden, init_seed)
    opt_cls = Adam if config.optimizer == "adam" else SGD
    opt = opt_cls(clf.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(shuffle_seed)
    n = len(labels)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            ad.zero_grads(clf.parameters())
            loss = ad.softmax_cross_entropy(clf.logits_tensor(features[batch]),
                                            labels[batch])
            ad.backward(loss)
            opt.step()
    return clf


def classifier_loss_and_grads(clf: MLPClassifier, features: np.ndarray,
                              labels: np.ndarray):
    """One full-batch loss evaluation with gradients, for verification."""
    ad.zero_grads(clf.parameters())
    loss = ad.softmax_cross_entropy(clf.logits_tensor(features), labels)
    ad.backward(loss)
    return float(loss.value), [p.grad.copy() for p in clf.parameters()]


@dataclass(frozen=True)
class EvalReport:
    """Confusion counts plus macro-averaged metrics.

    Counts are from the anchor (label-1) perspective: tp are true
    anchors predicted as anchors, tn are true non-anchors predicted as
    non-anchors.
    """

    tp: int
    fp: int
    fn: int
    tn: int
    macro_precision: float
    macro_recall: float
    macro_f1: float

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def class_metrics(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, F1 for one class given its confusion counts.

    A class that is never predicted has precision 0; a class absent
    from the truth has recall 0; F1 is 0 whenever precision + recall
    is 0.
    """
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    return precision, recall, f1


def evaluate(predictions: np.ndarray, labels: np.ndarray) -> EvalReport:
    """Macro precision/recall/F1 of binary predictions against labels."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise DataError("predictions and labels must have equal length")
    tp = int(((predictions == 1) & (labels == 1)).sum())
    fp = int(((predictions == 1) & (labels == 0)).sum())
    fn = int(((predictions == 0) & (labels == 1)).sum())
    tn = int(((predictions == 0) & (labels == 0)).sum())
    p1, r1, f1_pos = class_metrics(tp, fp, fn)
    p0, r0, f1_neg = class_metrics(tn, fn, fp)
    return EvalReport(tp=tp, fp=fp, fn=fn, tn=tn,
                      macro_precision=(p1 + p0) / 2.0,
                      macro_recall=(r1 + r0) / 2.0,
                      macro_f1=(f1_pos + f1_neg) / 2.0)


def format_report(report: EvalReport) -> str:
    p1, r1, f1 = class_metrics(report.tp, report.fp, report.fn)
    p0, r0, f0 = class_metrics(report.tn, report.fn, report.fp)
    lines = [
        "class      precision  recall     f1",
        f"anchor     {p1:<10.4f} {r1:<10.4f} {f1:.4f}",
        f"non-anchor {p0:<10.4f} {r0:<10.4f} {f0:.4f}",
        f"macro      {report.macro_precision:<10.4f} "
        f"{report.macro_recall:<10.4f} {report.macro_f1:.4f}",
        f"confusion  tp={report.tp} fp={report.fp} "
        f"fn={report.fn} tn={report.tn}",
    ]
    return "\n".join(lines)


def save_report(path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in ("tp", "fp", "fn", "tn"):
            fh.write(f"{key}={getattr(report, key)}\n")
        for key in ("macro_precision", "macro_recall", "macro_f1"):
            fh.write(f"{key}={getattr(report, key)!r}\n")


def load_report(path) -> EvalReport:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}: malformed report line {line!r}")
            key, _, value = line.partition("=")
            values[key] = value
    try:
        return EvalReport(
            tp=int(values["tp"]), fp=int(values["fp"]),
            fn=int(values["fn"]), tn=int(values["tn"]),
            macro_precision=float(values["macro_precision"]),
            macro_recall=float(values["macro_recall"]),
            macro_f1=float(values["macro_f1"]))
    except KeyError as exc:
        raise DataError(f"{path}: missing report field {exc}") from exc


def sample_negative_pairs(n1: int, n2: int, positives: np.ndarray,
                          count: int, rng) -> np.ndarray:
    """Uniform cross-network pairs avoiding the positive set."""
    taken = {(int(a), int(b)) for a, b in positives}
    capacity = n1 * n2 - len(taken)
    if capacity < count:
        raise DataError(f"cannot sample {count} negative pairs: only "
                        f"{capacity} non-anchor pairs exist")
    out = []
    seen = set()
    while len(out) < count:
        draw = max(count - len(out), 16)
        a = rng.integers(0, n1, size=draw)
        b = rng.integers(0, n2, size=draw)
        for pair in zip(a.tolist(), b.tolist()):
            if pair in taken or pair in seen:
                continue
            seen.add(pair)
            out.append(pair)
            if len(out) == count:
                break
    return np.array(out, dtype=np.int64)


def stratified_split(labels: np.ndarray, train_fraction: float, rng):
    """Index split keeping each class's train share within one example."""
    labels = np.asarray(labels)
    train_idx = []
    test_idx = []
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(len(members))]
        cut = int(round(train_fraction * len(members)))
        train_idx.append(members[:cut])
        test_idx.append(members[cut:])
    train = np.concatenate(train_idx)
    test = np.concatenate(test_idx)
    return np.sort(train), np.sort(test)


@dataclass
class PairDataset:
    train_pairs: np.ndarray
    train_features: np.ndarray
    train_labels: np.ndarray
    test_pairs: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray


def build_pair_dataset(x1: np.ndarray, x2: np.ndarray, positives,
                       neg_ratio: float = 1.0, split: float = 0.5,
                       seed=0) -> PairDataset:
    """Labeled pair features from positive anchors plus sampled negatives.

    Negatives are drawn uniformly over cross-network pairs outside the
    positive set at ``neg_ratio`` per positive; the result is split
    into train and test stratified by label.
    """
    pairs = getattr(positives, "pairs", None)
    if pairs is not None:
        pairs = pairs[np.asarray(positives.labels) == 1]
    else:
        pairs = np.asarray(positives, dtype=np.int64)
    if len(pairs) == 0:
        raise DataError("pair dataset needs at least one positive anchor")
    if not 0.0 < split < 1.0:
        raise ConfigError(f"split fraction must be in (0, 1), got {split}")
    if neg_ratio < 0:
        raise ConfigError(f"negative ratio must be >= 0, got {neg_ratio}")
    root = np.random.SeedSequence(seed)
    neg_seed, split_seed = root.spawn(2)
    n_neg = int(round(neg_ratio * len(pairs)))
    negatives = sample_negative_pairs(x1.shape[0], x2.shape[0], pairs, n_neg,
                                      np.random.default_rng(neg_seed))
    all_pairs = np.concatenate([pairs, negatives]) if n_neg else pairs
    labels = np.concatenate([np.ones(len(pairs), dtype=np.int64),
                             np.zeros(n_neg, dtype=np.int64)])
    train, test = stratified_split(labels, split,
                                   np.random.default_rng(split_seed))
    features = pair_features(x1, x2, all_pairs)
    return PairDataset(
        train_pairs=all_pairs[train], train_features=features[train],
        train_labels=labels[train], test_pairs=all_pairs[test],
        test_features=features[test], test_labels=labels[test])


def save_classifier(path, clf: MLPClassifier) -> None:
    np.savez(path, classifier_version=np.int64(CLASSIFIER_VERSION),
             w1=clf.w1.value, b1=clf.b1.value,
             w2=clf.w2.value, b2=clf.b2.value)


def load_classifier(path) -> MLPClassifier:
    with np.load(path, allow_pickle=False) as data:
        if "classifier_version" not in data:
            raise DataError(f"{path}: not a classifier checkpoint")
        if int(data["classifier_version"]) != CLASSIFIER_VERSION:
            raise DataError(f"{path}: unsupported classifier version")
        return MLPClassifier(data["w1"], data["b1"], data["w2"], data["b2"])


def save_predictions(path, pairs: np.ndarray, scores: np.ndarray,
                     labels: np.ndarray) -> None:
    """Rows of `id1 id2 score label` for downstream inspection."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# id1 id2 score label\n")
        for (a, b), s, y in zip(pairs, scores, labels):
            fh.write(f"{int(a)} {int(b)} {float(s)!r} {int(y)}\n")
