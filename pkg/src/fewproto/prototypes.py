"""Class prototypes: mean baseline and training against a composite loss.

A prototype bank holds one vector per episode class. The baseline is the
arithmetic mean of each class's aggregated support rows. The trained
variant starts from random vectors and minimizes

    total = entropy_weight * entropy_term
          + class_weight   * classification_term
          + metric_term

with the frozen head supplying predictions for the first two terms and
class-wise cosine scores against the support rows driving the third.
Every term keeps the double 1/N normalization of its definition (one
factor from averaging rows, one inside each row's term); the weights can
absorb the rescaling, so it is implemented verbatim rather than
simplified.

All gradients here are closed forms with respect to the prototypes only;
head parameters and support features are constants during this phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagnostics import EpisodeAbort
from .head import LinearHead, head_predict
from .optim import LOG_FLOOR, AdamState, adam_update, softmax


@dataclass
class PrototypeBank:
    """One prototype row per class; `trained` marks the optimized variant."""

    protos: np.ndarray  # (n_classes, e)
    trained: bool


@dataclass
class LossWeights:
    """Non-negative weights for the entropy and classification terms."""

    entropy_weight: float = 0.1
    class_weight: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.entropy_weight) and np.isfinite(self.class_weight)):
            raise ValueError("loss weights must be finite")
        if self.entropy_weight < 0 or self.class_weight < 0:
            raise ValueError("loss weights must be non-negative")


def mean_prototypes(support_feats: np.ndarray, labels: np.ndarray) -> PrototypeBank:
    """Per-class arithmetic mean of the aggregated support rows."""
    support_feats = np.asarray(support_feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1
    protos = np.empty((n_classes, support_feats.shape[1]))
    for c in range(n_classes):
        rows = support_feats[labels == c]
        if rows.shape[0] == 0:
            raise ValueError(f"class {c} has no support rows")
        protos[c] = rows.mean(axis=0)
    return PrototypeBank(protos=protos, trained=False)


def loss_class(protos: np.ndarray, head: LinearHead) -> float:
    """Cross-entropy of the head classifying each prototype as its own class."""
    n = protos.shape[0]
    probs = head_predict(head, protos)
    own = probs[np.arange(n), np.arange(n)]
    return float(np.sum(-np.log(np.maximum(own, LOG_FLOOR))) / (n * n))


def loss_entropy(protos: np.ndarray, head: LinearHead) -> float:
    """Mean entropy of the head's prediction for each prototype."""
    n = protos.shape[0]
    probs = head_predict(head, protos)
    ent = -np.sum(probs * np.log(np.maximum(probs, LOG_FLOOR)), axis=1)
    return float(np.sum(ent) / (n * n))


def _cosine_scores(rows: np.ndarray, protos: np.ndarray):
    """Pairwise cosines plus the unit rows and norms the gradient reuses."""
    row_norms = np.linalg.norm(rows, axis=1)
    proto_norms = np.linalg.norm(protos, axis=1)
    if np.any(row_norms == 0.0):
        raise EpisodeAbort("zero_support_row",
                           "cosine undefined for a zero-norm support row")
    if np.any(proto_norms == 0.0):
        raise EpisodeAbort("zero_prototype_row",
                           "cosine undefined for a zero-norm prototype")
    unit_rows = rows / row_norms[:, None]
    unit_protos = protos / proto_norms[:, None]
    scores = np.clip(unit_rows @ unit_protos.T, -1.0, 1.0)
    return scores, unit_rows, unit_protos, proto_norms


def loss_metric(protos: np.ndarray, support_feats: np.ndarray,
                labels: np.ndarray) -> float:
    """Cross-entropy of softmax over class-wise cosines, on support rows.

    Queries are unlabeled during task training, so the support rows stand
    in. The softmax runs over the N raw cosine values, no temperature.
    """
    support_feats = np.asarray(support_feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    scores, _, _, _ = _cosine_scores(support_feats, protos)
    probs = softmax(scores, axis=1)
    n_rows, n_classes = probs.shape
    picked = probs[np.arange(n_rows), labels]
    return float(np.sum(-np.log(np.maximum(picked, LOG_FLOOR)))
                 / (n_rows * n_classes))


def loss_total(protos: np.ndarray, head: LinearHead,
               support_feats: np.ndarray, labels: np.ndarray,
               weights: LossWeights) -> float:
    """entropy_weight * entropy + class_weight * classification + metric."""
    return (weights.entropy_weight * loss_entropy(protos, head)
            + weights.class_weight * loss_class(protos, head)
            + loss_metric(protos, support_feats, labels))


def grad_total(protos: np.ndarray, head: LinearHead,
               support_feats: np.ndarray, labels: np.ndarray,
               weights: LossWeights) -> np.ndarray:
    """Analytic gradient of loss_total with respect to the prototypes.

    Matches central finite differences to <1e-4 relative error; the
    gradcheck suite is the gate for this function.
    """
    n = protos.shape[0]
    probs = head_predict(head, protos)

    # Classification: d/dz of -log(p_own) is (p - onehot); rows map back
    # through the head's weight matrix.
    delta_class = (probs - np.eye(n)) / (n * n)

    # Entropy of softmax: d/dz_k = -p_k * (log p_k + H).
    logp = np.log(np.maximum(probs, LOG_FLOOR))
    ent = -np.sum(probs * logp, axis=1, keepdims=True)
    delta_ent = -probs * (logp + ent) / (n * n)

    grad = (weights.class_weight * delta_class
            + weights.entropy_weight * delta_ent) @ head.weights

    # Metric: softmax over cosines; d cos(f, p)/dp = (f_hat - cos * p_hat)/|p|.
    support_feats = np.asarray(support_feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    scores, unit_rows, unit_protos, proto_norms = _cosine_scores(
        support_feats, protos)
    q = softmax(scores, axis=1)
    n_rows = support_feats.shape[0]
    t = q.copy()
    t[np.arange(n_rows), labels] -= 1.0
    t /= n_rows * n
    grad += (t.T @ unit_rows - (t * scores).sum(axis=0)[:, None] * unit_protos) \
        / proto_norms[:, None]
    return grad


def _step_loss_and_grad(protos: np.ndarray, head: LinearHead,
                        unit_rows: np.ndarray, labels: np.ndarray,
                        weights: LossWeights) -> tuple[float, np.ndarray]:
    """Fused loss_total/grad_total for the training loop.

    Shares the head pass and the cosine pass between value and gradient
    and takes pre-normalized support rows; must stay numerically equal
    to the public pair (unit-tested).
    """
    n = protos.shape[0]
    logits = protos @ head.weights.T + head.bias
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits, out=logits)
    probs /= probs.sum(axis=1, keepdims=True)
    logp = np.log(np.maximum(probs, LOG_FLOOR))
    ent = -(probs * logp).sum(axis=1)
    own = probs.diagonal()
    loss = (-weights.class_weight * np.log(np.maximum(own, LOG_FLOOR)).sum()
            + weights.entropy_weight * ent.sum()) / (n * n)
    delta = weights.class_weight * probs \
        - weights.entropy_weight * probs * (logp + ent[:, None])
    delta[np.arange(n), np.arange(n)] -= weights.class_weight
    delta /= n * n
    grad = delta @ head.weights

    proto_norms = np.sqrt(np.einsum("ij,ij->i", protos, protos))
    if not proto_norms.all():
        raise EpisodeAbort("zero_prototype_row",
                           "cosine undefined for a zero-norm prototype")
    unit_protos = protos / proto_norms[:, None]
    scores = (unit_rows @ unit_protos.T).clip(-1.0, 1.0)
    shifted = scores - scores.max(axis=1, keepdims=True)
    q = np.exp(shifted, out=shifted)
    q /= q.sum(axis=1, keepdims=True)
    n_rows = unit_rows.shape[0]
    idx = np.arange(n_rows)
    loss += -np.log(np.maximum(q[idx, labels], LOG_FLOOR)).sum() / (n_rows * n)
    t = q
    t[idx, labels] -= 1.0
    t /= n_rows * n
    grad += (t.T @ unit_rows - (t * scores).sum(axis=0)[:, None] * unit_protos) \
        / proto_norms[:, None]
    return float(loss), grad


def init_prototypes(n_classes: int, dim: int, rng: np.random.Generator,
                    support_feats: np.ndarray | None = None,
                    labels: np.ndarray | None = None,
                    mode: str = "random") -> np.ndarray:
    """Starting point for training: random Gaussian rows, or class means.

    Random entries have standard deviation 1/sqrt(dim) so initial row
    norms are O(1). The means mode exists for experimentation and is off
    by default.
    """
    if mode == "random":
        return rng.normal(0.0, 1.0 / np.sqrt(dim), (n_classes, dim))
    if mode == "means":
        return mean_prototypes(support_feats, labels).protos.copy()
    raise ValueError(f"unknown init mode {mode!r}")


def train_prototypes(head: LinearHead, support_feats: np.ndarray,
                     labels: np.ndarray, weights: LossWeights, epochs: int,
                     lr: float, rng: np.random.Generator,
                     init_mode: str = "random",
                     trajectory: list[float] | None = None) -> PrototypeBank:
    """Full-batch Adam on loss_total with the prototypes as sole parameters.

    The head is frozen. Appends the per-epoch loss (evaluated before each
    update) to `trajectory` when given. Raises EpisodeAbort on a
    non-finite loss or a degenerate final bank.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    support_feats = np.asarray(support_feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1
    row_norms = np.linalg.norm(support_feats, axis=1)
    if np.any(row_norms == 0.0):
        raise EpisodeAbort("zero_support_row",
                           "cosine undefined for a zero-norm support row")
    unit_rows = support_feats / row_norms[:, None]
    protos = init_prototypes(n_classes, support_feats.shape[1], rng,
                             support_feats, labels, init_mode)
    state = AdamState.fresh(protos.shape, lr=lr)
    for _ in range(epochs):
        loss, grad = _step_loss_and_grad(protos, head, unit_rows, labels,
                                         weights)
        if not np.isfinite(loss):
            raise EpisodeAbort("proto_loss_diverged", f"loss={loss}")
        if trajectory is not None:
            trajectory.append(loss)
        state, protos = adam_update(state, protos, grad)
    validate_prototypes(protos)
    return PrototypeBank(protos=protos, trained=True)


def validate_prototypes(protos: np.ndarray) -> None:
    """Reject banks a cosine classifier cannot use."""
    if not np.all(np.isfinite(protos)):
        raise EpisodeAbort("proto_nonfinite")
    if np.any(np.linalg.norm(protos, axis=1) == 0.0):
        raise EpisodeAbort("zero_prototype_row")
