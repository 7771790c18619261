"""Standardisation, splitting, loss, the training loop and classification metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import TelemetryDataset
from .network import KanNetwork, classify_batch, decide, init_network

log = logging.getLogger(__name__)

SQUASH_SCALE = 3.0


class TrainingError(ValueError):
    pass


class DegenerateFeatureError(TrainingError):
    pass


class ClassStarvationError(TrainingError):
    pass


class DivergedLossError(TrainingError):
    pass


@dataclass
class Standardizer:
    """z-score, divide by ``scale``, then ``tanh`` into (-1, 1)."""

    mean: np.ndarray
    std: np.ndarray
    scale: float = SQUASH_SCALE

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if np.any(self.std <= 0):
            raise DegenerateFeatureError(f"non-positive feature std {self.std.tolist()}")

    def transform(self, x):
        return np.tanh((np.asarray(x, dtype=float) - self.mean) / self.std / self.scale)

    def inverse_transform(self, u):
        return np.arctanh(np.asarray(u, dtype=float)) * self.scale * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(d["mean"], d["std"], d.get("scale", SQUASH_SCALE))


def fit_standardizer(train_split) -> Standardizer:
    x = train_split.features if isinstance(train_split, TelemetryDataset) else np.asarray(train_split, dtype=float)
    if len(x) < 2:
        raise TrainingError("need at least two samples to standardise")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale_ref = np.maximum(np.abs(mean), 1.0)
    dead = std <= 1e-12 * scale_ref
    if dead.any():
        raise DegenerateFeatureError(f"constant feature column(s) {np.flatnonzero(dead).tolist()}")
    return Standardizer(mean, std)


def standardizer_of(net: KanNetwork) -> Optional[Standardizer]:
    d = net.metadata.get("standardizer")
    return Standardizer.from_dict(d) if d else None


def stratified_split(ds: TelemetryDataset, fraction: float = 0.8, seed: int = 0):
    """Seeded per-class shuffle; each class contributes ``round(n_c * fraction)`` rows to train."""
    if not 0.0 < fraction < 1.0:
        raise TrainingError(f"split fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label in (0, 1):
        idx = np.flatnonzero(ds.labels == label)
        if len(idx) < 2:
            raise ClassStarvationError(f"class {label} has {len(idx)} samples; need at least 2")
        idx = idx[rng.permutation(len(idx))]
        n_train = int(math.floor(len(idx) * fraction + 0.5))
        n_train = min(max(n_train, 1), len(idx) - 1)
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return ds.subset(train_idx), ds.subset(test_idx)


def weighted_cross_entropy(logits, label: int, weights=(1.0, 1.0)):
    """Returns ``(loss, dloss/dlogits)`` for one sample, computed with max-subtraction."""
    z = np.asarray(logits, dtype=float)
    w = float(np.asarray(weights, dtype=float)[label])
    shifted = z - z.max()
    lse = math.log(np.exp(shifted).sum())
    loss = w * (lse - shifted[label])
    grad = np.exp(shifted - lse)
    grad[label] -= 1.0
    return loss, w * grad


def _batch_cross_entropy(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(labels))
    w = weights[labels]
    losses = w * (lse - shifted[rows, labels])
    grad = np.exp(shifted - lse[:, None])
    grad[rows, labels] -= 1.0
    return losses, grad * w[:, None]


class Adam:
    def __init__(self, params: list, lr: float = 1e-2, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 50
    split_fraction: float = 0.8
    seed: int = 0
    learning_rate: float = 1e-2
    batch_size: int = 256
    class_weighting: str = "balanced"
    widths: list = field(default_factory=lambda: [4, 5, 2])
    degree: int = 3
    num_intervals: int = 3
    base_weight: float = 1.0

    def validate(self) -> None:
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.split_fraction < 1.0:
            raise TrainingError(f"split_fraction must be in (0, 1), got {self.split_fraction}")
        if not self.learning_rate > 0:
            raise TrainingError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.class_weighting not in ("balanced", "none"):
            raise TrainingError(f"class_weighting must be 'balanced' or 'none', got {self.class_weighting!r}")
        if len(self.widths) < 2 or self.widths[-1] != 2:
            raise TrainingError(f"widths must end in 2 output logits, got {self.widths}")


def class_weights(labels: np.ndarray, mode: str = "balanced") -> np.ndarray:
    if mode == "none":
        return np.ones(2)
    counts = np.bincount(labels, minlength=2).astype(float)
    if (counts == 0).any():
        raise ClassStarvationError("both classes must be present to train")
    return len(labels) / (2.0 * counts)


def _predict_standardized(net: KanNetwork, u: np.ndarray) -> np.ndarray:
    logits = net.forward(u)
    return decide(logits[:, 0], logits[:, 1])


def train(ds: TelemetryDataset, cfg: TrainConfig, train_split: Optional[TelemetryDataset] = None):
    """Fit a classifier on the training split of ``ds``.

    Returns ``(net, history)``. The network keeps the epoch with the best
    training balanced accuracy and carries the standardiser, split settings and
    selected epoch in ``net.metadata``. Pass ``train_split`` to skip the
    internal stratified split.
    """
    cfg.validate()
    if cfg.widths[0] != ds.features.shape[1]:
        raise TrainingError(f"first width {cfg.widths[0]} != feature count {ds.features.shape[1]}")
    if train_split is None:
        train_split, _ = stratified_split(ds, cfg.split_fraction, cfg.seed)
    std = fit_standardizer(train_split)
    u = std.transform(train_split.features)
    y = train_split.labels
    weights = class_weights(y, cfg.class_weighting)

    net = init_network(cfg.widths, cfg.degree, cfg.num_intervals, cfg.seed, base_weight=cfg.base_weight)
    net.metadata.update(
        standardizer=std.to_dict(),
        split={"fraction": cfg.split_fraction, "seed": cfg.seed},
        train_config=asdict(cfg),
    )
    opt = Adam(net.params(), lr=cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, 1])

    history = []
    best = (-1.0, None, 0)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            caches: list = []
            logits = net.forward(u[idx], caches)
            losses, dlogits = _batch_cross_entropy(logits, y[idx], weights)
            total += losses.sum()
            grads = net.backward(caches, dlogits / len(idx))
            opt.step(grads)
        loss = total / len(y)
        if not math.isfinite(loss) or not all(np.isfinite(p).all() for p in net.params()):
            raise DivergedLossError(f"loss diverged at epoch {epoch}")
        report = metrics_from_predictions(y, _predict_standardized(net, u))
        history.append({"epoch": epoch, "loss": loss, "balanced_accuracy": report.balanced_accuracy})
        log.info("epoch %d loss %.5f balanced accuracy %.4f", epoch, loss, report.balanced_accuracy)
        if report.balanced_accuracy > best[0]:
            best = (report.balanced_accuracy, [p.copy() for p in net.params()], epoch)

    for p, saved in zip(net.params(), best[1]):
        p[...] = saved
    net.metadata["selected_epoch"] = best[2]
    return net, history


@dataclass
class EvalReport:
    tn: int
    fp: int
    fn: int
    tp: int
    precision: float
    recall: float
    f1: float
    balanced_accuracy: float
    accuracy: float
    undefined: list = field(default_factory=list)

    @property
    def counts(self) -> tuple:
        return self.tn, self.fp, self.fn, self.tp

    @property
    def percentages(self) -> dict:
        """Row-normalised confusion matrix in percent (true class -> predicted class)."""
        n0, n1 = self.tn + self.fp, self.fn + self.tp
        pct = lambda a, b: 100.0 * a / b if b else 0.0  # noqa: E731
        return {
            "normal_as_normal": pct(self.tn, n0),
            "normal_as_attack": pct(self.fp, n0),
            "attack_as_normal": pct(self.fn, n1),
            "attack_as_attack": pct(self.tp, n1),
        }

    def to_dict(self) -> dict:
        pct = self.percentages
        metrics = {k: getattr(self, k) for k in ("precision", "recall", "f1", "balanced_accuracy", "accuracy")}
        return {
            "counts": {"tn": self.tn, "fp": self.fp, "fn": self.fn, "tp": self.tp},
            "confusion_percent": {k: round(v, 1) for k, v in pct.items()},
            "metrics": {k: round(v, 2) for k, v in metrics.items()},
            "full_precision": {"confusion_percent": pct, "metrics": metrics},
            "undefined": list(self.undefined),
        }

    def summary(self) -> str:
        p = self.percentages
        return "\n".join(
            [
                "confusion (%)     pred normal  pred attack",
                f"  true normal       {p['normal_as_normal']:6.1f}       {p['normal_as_attack']:6.1f}",
                f"  true attack       {p['attack_as_normal']:6.1f}       {p['attack_as_attack']:6.1f}",
                f"precision {self.precision:.2f}  recall {self.recall:.2f}  f1 {self.f1:.2f}  "
                f"balanced accuracy {self.balanced_accuracy:.2f}",
            ]
        )


def _ratio(num: float, den: float, name: str, undefined: list) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def metrics_from_counts(tn, fp, fn, tp) -> EvalReport:
    """Metrics from the attack class's point of view; zero denominators give 0 and are flagged."""
    undefined: list = []
    precision = _ratio(tp, tp + fp, "precision", undefined)
    recall = _ratio(tp, tp + fn, "recall", undefined)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1", undefined)
    tnr = _ratio(tn, tn + fp, "specificity", undefined)
    balanced = (tnr + recall) / 2.0
    accuracy = _ratio(tn + tp, tn + fp + fn + tp, "accuracy", undefined)
    return EvalReport(int(tn), int(fp), int(fn), int(tp), precision, recall, f1, balanced, accuracy, undefined)


def metrics_from_predictions(labels, preds) -> EvalReport:
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    tp = int(np.sum((labels == 1) & (preds == 1)))
    tn = int(np.sum((labels == 0) & (preds == 0)))
    fp = int(np.sum((labels == 0) & (preds == 1)))
    fn = int(np.sum((labels == 1) & (preds == 0)))
    return metrics_from_counts(tn, fp, fn, tp)


def predict(net: KanNetwork, features) -> np.ndarray:
    """Labels for raw (unstandardised) feature rows."""
    std = standardizer_of(net)
    u = std.transform(features) if std is not None else np.asarray(features, dtype=float)
    return classify_batch(net, u)


def evaluate(net: KanNetwork, ds: TelemetryDataset) -> EvalReport:
    if len(ds) == 0:
        raise TrainingError("cannot evaluate on an empty dataset")
    return metrics_from_predictions(ds.labels, predict(net, ds.features))


def fit_regression(
    net: KanNetwork,
    x,
    y,
    epochs: int = 200,
    learning_rate: float = 1e-2,
    batch_size: int = 64,
    seed: int = 0,
) -> list:
    """Mean-squared-error fit of a single-output network in place; returns per-epoch RMSE."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(len(x), -1)
    opt = Adam(net.params(), lr=learning_rate)
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            caches: list = []
            resid = net.forward(x[idx], caches) - y[idx]
            opt.step(net.backward(caches, 2.0 * resid / len(idx)))
        history.append(float(np.sqrt(np.mean((net.forward(x) - y) ** 2))))
    return history
