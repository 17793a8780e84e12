"""Embedding datasets: binary I/O, episode sampling, synthetic generation.

An embedding set is a labeled pool of fixed-dimension feature vectors
produced by some external extractor. Episodes (N-way k-shot tasks) are
drawn from the pool without replacement; query labels ride along marked
as hidden so that only the scorer reads them.

Binary file format (little-endian):

    magic   4 bytes  b"EMB1"
    dim     u32      embedding dimension
    count   u32      number of records
    classes u32      number of distinct class ids in the payload
    records count x [ class_id: u32 | vector: dim x f32 ]

An optional plain-text sidecar at ``<path>.labels.txt`` may map class ids
to names ("id<TAB>name" per line); it is informational only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"EMB1"
HEADER_SIZE = 16


class EmbeddingFormatError(ValueError):
    """Malformed embedding file; `offset` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


@dataclass
class EmbeddingSet:
    """Immutable labeled pool of embedding vectors.

    Attributes:
        dim: embedding dimension; every vector has exactly this length.
        vectors: (n, dim) float32 array, all entries finite.
        labels: (n,) int64 array of non-negative class ids.
        class_index: class id -> sorted array of record indices; every
            listed class has at least one record.
    """

    dim: int
    vectors: np.ndarray
    labels: np.ndarray
    class_index: dict[int, np.ndarray] = field(repr=False)

    @classmethod
    def from_arrays(cls, vectors: np.ndarray, labels: np.ndarray) -> "EmbeddingSet":
        """Build and validate a set from raw arrays (copied to float32/int64)."""
        vectors = np.array(vectors, dtype=np.float32, order="C")
        labels = np.array(labels, dtype=np.int64)
        if vectors.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {vectors.shape}")
        if labels.shape != (vectors.shape[0],):
            raise ValueError("labels length does not match record count")
        if vectors.shape[1] < 1:
            raise ValueError("embedding dimension must be positive")
        if labels.size and labels.min() < 0:
            raise ValueError("class ids must be non-negative")
        if not np.all(np.isfinite(vectors)):
            bad = np.argwhere(~np.isfinite(vectors))[0]
            raise ValueError(
                f"non-finite value in record {bad[0]} component {bad[1]}")
        index = {
            int(c): np.flatnonzero(labels == c) for c in np.unique(labels)
        }
        vectors.flags.writeable = False
        labels.flags.writeable = False
        return cls(dim=vectors.shape[1], vectors=vectors, labels=labels,
                   class_index=index)

    @property
    def n_records(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_index)


@dataclass
class Episode:
    """One N-way k-shot task with locally relabeled classes 0..N-1.

    Support rows are grouped by local class (class 0's k shots first),
    queries likewise. `hidden_labels` carries the held-out query labels;
    by contract only scoring code reads it.
    """

    n_ways: int
    k_shots: int
    n_queries: int
    support_x: np.ndarray        # (N*k, dim) float64
    support_y: np.ndarray        # (N*k,) int64 local classes
    query_x: np.ndarray          # (N*q, dim) float64
    hidden_labels: np.ndarray    # (N*q,) int64, scorer-only
    support_idx: np.ndarray      # source record indices, for audits
    query_idx: np.ndarray


def save_embedding_set(emb: EmbeddingSet, path) -> None:
    """Write `emb` in the binary format; load_embedding_set inverts this.

    Raises ValueError if the set violates its invariants (checked before
    any bytes are written).
    """
    # Revalidate: callers may have built the instance by hand.
    checked = EmbeddingSet.from_arrays(emb.vectors, emb.labels)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", checked.dim, checked.n_records,
                            checked.n_classes))
        rec = np.empty(
            checked.n_records,
            dtype=np.dtype([("class_id", "<u4"), ("vec", "<f4", (checked.dim,))]),
        )
        rec["class_id"] = checked.labels
        rec["vec"] = checked.vectors
        f.write(rec.tobytes())


def load_embedding_set(path) -> EmbeddingSet:
    """Read and validate an embedding file.

    Raises:
        EmbeddingFormatError: bad magic, zero dimension, class-count
            mismatch, truncated payload, trailing bytes, or a non-finite
            value; the error carries the failing byte offset.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < HEADER_SIZE:
        raise EmbeddingFormatError("truncated header", len(blob))
    if blob[:4] != MAGIC:
        raise EmbeddingFormatError(
            f"bad magic {blob[:4]!r}, expected {MAGIC!r}", 0)
    dim, count, n_classes = struct.unpack_from("<III", blob, 4)
    if dim == 0:
        raise EmbeddingFormatError("embedding dimension is zero", 4)
    record_size = 4 + 4 * dim
    expected = HEADER_SIZE + count * record_size
    if len(blob) < expected:
        raise EmbeddingFormatError(
            f"truncated payload: need {expected} bytes, have {len(blob)}",
            len(blob))
    if len(blob) > expected:
        raise EmbeddingFormatError(
            f"{len(blob) - expected} trailing bytes after last record",
            expected)
    rec_dtype = np.dtype([("class_id", "<u4"), ("vec", "<f4", (dim,))])
    records = np.frombuffer(blob, dtype=rec_dtype, count=count,
                            offset=HEADER_SIZE)
    vectors = np.array(records["vec"], dtype=np.float32).reshape(count, dim)
    labels = records["class_id"].astype(np.int64)
    finite = np.isfinite(vectors)
    if not finite.all():
        i, j = np.argwhere(~finite)[0]
        raise EmbeddingFormatError(
            f"non-finite value in record {i} component {j}",
            HEADER_SIZE + int(i) * record_size + 4 + 4 * int(j))
    if count and len(np.unique(labels)) != n_classes:
        raise EmbeddingFormatError(
            f"header declares {n_classes} classes, payload has "
            f"{len(np.unique(labels))}", 12)
    return EmbeddingSet.from_arrays(vectors, labels)


def sample_episode(emb: EmbeddingSet, n_ways: int, k_shots: int,
                   n_queries: int, rng: np.random.Generator) -> Episode:
    """Draw one episode uniformly without replacement.

    Picks `n_ways` classes, then `k_shots + n_queries` records per class;
    the first k go to support, the rest to query. Classes are relabeled
    0..N-1 in sampling order. Deterministic given the generator state.

    Raises:
        ValueError: fewer than `n_ways` classes in the pool, or a sampled
            class has fewer than `k_shots + n_queries` records.
    """
    if n_ways < 1 or k_shots < 1 or n_queries < 1:
        raise ValueError("n_ways, k_shots, n_queries must be positive")
    class_ids = sorted(emb.class_index)
    if len(class_ids) < n_ways:
        raise ValueError(
            f"pool has {len(class_ids)} classes, episode needs {n_ways}")
    need = k_shots + n_queries
    short = [c for c in class_ids if len(emb.class_index[c]) < need]
    if short:
        raise ValueError(
            f"classes {short} have fewer than {need} records")
    picked_classes = rng.choice(len(class_ids), size=n_ways, replace=False)
    sup_idx, qry_idx = [], []
    for local in range(n_ways):
        records = emb.class_index[class_ids[picked_classes[local]]]
        picked = rng.choice(len(records), size=need, replace=False)
        sup_idx.append(records[picked[:k_shots]])
        qry_idx.append(records[picked[k_shots:]])
    sup_idx = np.concatenate(sup_idx)
    qry_idx = np.concatenate(qry_idx)
    return Episode(
        n_ways=n_ways, k_shots=k_shots, n_queries=n_queries,
        support_x=emb.vectors[sup_idx].astype(np.float64),
        support_y=np.repeat(np.arange(n_ways, dtype=np.int64), k_shots),
        query_x=emb.vectors[qry_idx].astype(np.float64),
        hidden_labels=np.repeat(np.arange(n_ways, dtype=np.int64), n_queries),
        support_idx=sup_idx, query_idx=qry_idx,
    )


def generate_synthetic(n_classes: int, per_class: int, dim: int,
                       mean_scale: float, noise_sigma: float,
                       rng: np.random.Generator) -> EmbeddingSet:
    """Gaussian blobs around class means drawn uniformly on a sphere.

    Class means sit on the sphere of radius `mean_scale`; each record is
    mean + iid Gaussian noise with standard deviation `noise_sigma`.
    Deterministic given the generator state.
    """
    if n_classes < 1 or per_class < 1 or dim < 1:
        raise ValueError("n_classes, per_class, dim must be positive")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    means = rng.normal(size=(n_classes, dim))
    means *= mean_scale / np.linalg.norm(means, axis=1, keepdims=True)
    vectors = np.empty((n_classes * per_class, dim))
    labels = np.repeat(np.arange(n_classes), per_class)
    for c in range(n_classes):
        block = slice(c * per_class, (c + 1) * per_class)
        vectors[block] = means[c] + noise_sigma * rng.normal(size=(per_class, dim))
    return EmbeddingSet.from_arrays(vectors, labels)
