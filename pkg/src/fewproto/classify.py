"""Query classification by attention-masked cosine distance to prototypes.

Each class gets a mask: a probability vector over feature dimensions,
softmax(scale * |prototype|). Before scoring a query against class n, the
query is corrected to boost * (query * mask_n) + query, elementwise; the
class with the highest cosine wins. With uniform masks the correction is
a uniform rescaling, which cosine ignores, so masked and unmasked
predictions coincide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagnostics import Diagnostics
from .embeddings import Episode
from .optim import softmax
from .prototypes import PrototypeBank


@dataclass
class AttentionMasks:
    """Per-class probability vectors over feature dimensions.

    masks[n] sums to 1 with positive entries; `scale` sharpened the
    softmax, `boost` weights the correction term at query time.
    """

    masks: np.ndarray  # (n_classes, e)
    scale: float
    boost: float


def build_masks(protos: PrototypeBank, scale: float,
                boost: float = 10000.0) -> AttentionMasks:
    """Mask row n = softmax over dimensions of scale * |proto_n|.

    The absolute value makes masks invariant to negating a prototype;
    scale=0 (or an all-zero prototype row) yields the uniform mask.
    """
    p = np.asarray(protos.protos, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("prototypes must be finite")
    return AttentionMasks(masks=softmax(scale * np.abs(p), axis=1),
                          scale=scale, boost=boost)


def correct_query(query: np.ndarray, masks: AttentionMasks,
                  class_index: int) -> np.ndarray:
    """Elementwise boost * (query * mask_n) + query."""
    query = np.asarray(query, dtype=np.float64)
    mask = masks.masks[class_index]
    if query.shape != mask.shape:
        raise ValueError(f"query {query.shape} vs mask {mask.shape}")
    return masks.boost * query * mask + query


def classify(query: np.ndarray, protos: PrototypeBank,
             masks: AttentionMasks | None, use_mask: bool,
             diag: Diagnostics | None = None) -> tuple[int, np.ndarray]:
    """Predict one query's class; returns (argmax index, cosine scores).

    score_n = cos(corrected query for class n, proto_n) when masking,
    cos(query, proto_n) otherwise. Ties break toward the lowest class
    index. A zero query has no direction: all scores are 0, class 0 is
    predicted, and a `zero_query` diagnostic is recorded.
    """
    pred, scores = classify_batch(np.asarray(query, dtype=np.float64)[None, :],
                                  protos, masks, use_mask, diag)
    return int(pred[0]), scores[0]


def classify_batch(queries: np.ndarray, protos: PrototypeBank,
                   masks: AttentionMasks | None, use_mask: bool,
                   diag: Diagnostics | None = None):
    """Vectorized `classify` over a (n_queries, e) matrix."""
    queries = np.asarray(queries, dtype=np.float64)
    p = protos.protos
    proto_norms = np.linalg.norm(p, axis=1)
    if np.any(proto_norms == 0.0):
        raise ValueError("zero-norm prototype row; bank is unusable")
    unit_protos = p / proto_norms[:, None]
    n_classes = p.shape[0]
    scores = np.empty((queries.shape[0], n_classes))
    if use_mask:
        if masks is None:
            raise ValueError("use_mask=True requires masks")
        for c in range(n_classes):
            corrected = masks.boost * queries * masks.masks[c] + queries
            scores[:, c] = _cosine_to(corrected, unit_protos[c])
    else:
        for c in range(n_classes):
            scores[:, c] = _cosine_to(queries, unit_protos[c])
    # A zero query stays zero under correction, so its scores are all 0
    # and argmax falls through to class 0.
    zero_q = np.linalg.norm(queries, axis=1) == 0.0
    if zero_q.any() and diag is not None:
        diag.record("zero_query", int(zero_q.sum()))
    return np.argmax(scores, axis=1), scores


def _cosine_to(rows: np.ndarray, unit_proto: np.ndarray) -> np.ndarray:
    """Cosines of each row against one unit vector; zero rows score 0."""
    norms = np.linalg.norm(rows, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    return np.clip((rows @ unit_proto) / safe, -1.0, 1.0)


def score_episode(episode: Episode, predictions: np.ndarray) -> float:
    """Fraction of queries whose prediction matches the hidden label."""
    predictions = np.asarray(predictions, dtype=np.int64)
    truth = episode.hidden_labels
    if predictions.shape != truth.shape:
        raise ValueError(
            f"{predictions.shape[0] if predictions.ndim else 0} predictions "
            f"for {truth.shape[0]} queries")
    return float(np.mean(predictions == truth))
