"""Self-training: a linear probe fitted to consensus pseudo-labels.

One training round only.  The classifier is a single affine map over
standardized features, optimized with momentum SGD and decoupled weight
decay for a fixed iteration budget, then used as the inference model.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import LoadError, TrainingError
from .featstore import EmbeddingMatrix, NormStats, fit_standardizer, standardize_array
from .heads import softmax
from .labeling import Labeling, canonicalize

CLASSIFIER_MAGIC = b"CLF1"


@dataclass(frozen=True)
class SelfTrainConfig:
    steps: int = 12500
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class Classifier:
    """Affine d -> C map over standardized features, plus the id table that
    maps class indices back to the pseudo-label ids seen at fit time."""

    weight: np.ndarray  # (C, d)
    bias: np.ndarray  # (C,)
    norm: NormStats
    class_ids: np.ndarray  # (C,)
    config: SelfTrainConfig

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]


def ce_loss_and_grads(
    weight: np.ndarray, bias: np.ndarray, s: np.ndarray, targets: np.ndarray
):
    """Mean softmax cross entropy over a standardized batch, with analytic
    gradients for the affine parameters."""
    b_count = s.shape[0]
    logits = s @ weight.T + bias
    probs = softmax(logits)
    picked = probs[np.arange(b_count), targets]
    loss = float(-np.log(np.maximum(picked, 1e-12)).mean())
    dlogits = probs.copy()
    dlogits[np.arange(b_count), targets] -= 1.0
    # rows on the probability floor are clamped in the loss, so they carry
    # no gradient
    dlogits[picked <= 1e-12] = 0.0
    dlogits /= b_count
    return loss, {"weight": dlogits.T @ s, "bias": dlogits.sum(axis=0)}


def self_train(
    features: EmbeddingMatrix, pseudo: Labeling, cfg: SelfTrainConfig = SelfTrainConfig()
) -> Classifier:
    """Fit the linear probe to pseudo-labels by mini-batch momentum SGD.

    Deterministic under ``cfg.seed``; weights start at zero, standardization
    statistics are fitted from the features themselves.
    """
    if pseudo.n != features.n:
        raise ValueError(f"pseudo-labels cover {pseudo.n} samples, features hold {features.n}")
    canon = canonicalize(pseudo)
    targets = canon.labels - 1
    num_classes = canon.k
    # first-appearance order matches the canonical ids 1..C
    _, first_pos = np.unique(pseudo.labels, return_index=True)
    class_ids = pseudo.labels[np.sort(first_pos)]

    norm = fit_standardizer(features)
    s = standardize_array(features.data, norm)
    n, d = s.shape

    weight = np.zeros((num_classes, d))
    bias = np.zeros(num_classes)
    buf_w = np.zeros_like(weight)
    buf_b = np.zeros_like(bias)
    rng = np.random.default_rng(cfg.seed)
    batch = min(cfg.batch_size, n)

    order = np.empty(0, dtype=np.int64)
    cursor = 0
    for step in range(cfg.steps):
        if cursor + batch > order.size:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + batch]
        cursor += batch

        loss, grads = ce_loss_and_grads(weight, bias, s[idx], targets[idx])
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite self-train loss at step {step}", step=step)
        buf_w = cfg.momentum * buf_w + grads["weight"]
        buf_b = cfg.momentum * buf_b + grads["bias"]
        weight -= cfg.lr * buf_w + cfg.lr * cfg.weight_decay * weight
        bias -= cfg.lr * buf_b

    return Classifier(weight=weight, bias=bias, norm=norm, class_ids=class_ids, config=cfg)


def predict(clf: Classifier, features: EmbeddingMatrix) -> Labeling:
    """Per-sample argmax class (ties to the lowest class index)."""
    if features.d != clf.dim:
        raise ValueError(f"dimension mismatch: features d={features.d}, classifier d={clf.dim}")
    s = standardize_array(features.data, clf.norm)
    logits = s @ clf.weight.T + clf.bias
    return Labeling(clf.class_ids[np.argmax(logits, axis=1)])


def save_classifier(clf: Classifier, path) -> None:
    """Write the ``CLF1`` checkpoint: dims, class ids, float64 parameters
    and standardizer statistics."""
    with open(path, "wb") as f:
        f.write(CLASSIFIER_MAGIC)
        f.write(struct.pack("<II", clf.num_classes, clf.dim))
        f.write(clf.class_ids.astype("<u4").tobytes())
        for arr in (clf.weight, clf.bias, clf.norm.mean, clf.norm.var,
                    clf.norm.gamma, clf.norm.beta):
            f.write(np.asarray(arr, dtype="<f8").tobytes())


def load_classifier(path) -> Classifier:
    with open(path, "rb") as f:
        if f.read(4) != CLASSIFIER_MAGIC:
            raise LoadError(f"{path}: not a classifier checkpoint")
        c, d = struct.unpack("<II", f.read(8))
        raw = f.read(4 * c)
        if len(raw) != 4 * c:
            raise LoadError(f"{path}: truncated class-id table")
        class_ids = np.frombuffer(raw, dtype="<u4").astype(np.int64)

        def read(*shape):
            count = int(np.prod(shape))
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise LoadError(f"{path}: truncated classifier payload")
            return np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)

        weight = read(c, d)
        bias = read(c)
        mean, var, gamma, beta = read(d), read(d), read(d), read(d)
        if f.read(1):
            raise LoadError(f"{path}: trailing bytes in checkpoint")
    norm = NormStats(mean=mean, var=var, gamma=gamma, beta=beta)
    return Classifier(
        weight=weight, bias=bias, norm=norm, class_ids=class_ids, config=SelfTrainConfig()
    )
