"""Per-episode similarity graph and feature aggregation.

The episode's stacked features (support rows first, then query rows)
become graph vertices. Pairwise cosine similarity with a zero diagonal
gives a dense matrix; keeping each row's top-m entries (union with the
transposed selection, so the result stays symmetric) sparsifies it; a
symmetric degree normalization turns it into the adjacency; features are
then smoothed by `rounds` applications of x <- self_weight*x + A x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .diagnostics import Diagnostics


def cosine(a: np.ndarray, b: np.ndarray, diag: Diagnostics | None = None) -> float:
    """Cosine similarity clamped to [-1, 1].

    A zero-norm input carries no similarity information: the result is
    0.0 and a `zero_vector_cosine` diagnostic is recorded instead of
    failing the episode.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        if diag is not None:
            diag.record("zero_vector_cosine")
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def build_similarity(v: np.ndarray, diag: Diagnostics | None = None) -> np.ndarray:
    """Dense pairwise cosine matrix with zero diagonal, exactly symmetric.

    Zero-norm rows follow the same rule as `cosine`: their similarities
    are 0 and one diagnostic is recorded per zero row.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least two rows")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite feature rows")
    norms = np.linalg.norm(v, axis=1)
    zero = norms == 0.0
    if zero.any():
        if diag is not None:
            diag.record("zero_vector_cosine", int(zero.sum()))
        norms = np.where(zero, 1.0, norms)
    unit = v / norms[:, None]
    s = np.clip(unit @ unit.T, -1.0, 1.0)
    s = (s + s.T) / 2.0  # force exact symmetry against BLAS rounding
    np.fill_diagonal(s, 0.0)
    return s


def sparsify_top_m(s: np.ndarray, m: int) -> sparse.csr_array:
    """Keep entries in the top-m of their row or of their column.

    The union rule preserves symmetry and never isolates a vertex that
    some row still ranks highly. Ties break toward the lowest column
    index; the diagonal is excluded from ranking (it is structurally 0).
    """
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    if s.shape != (n, n):
        raise ValueError("similarity matrix must be square")
    if not 1 <= m <= n - 1:
        raise ValueError(f"m must be in [1, {n - 1}], got {m}")
    ranked = s.copy()
    np.fill_diagonal(ranked, -np.inf)
    # argsort is stable: equal values order by ascending column index.
    order = np.argsort(-ranked, axis=1, kind="stable")[:, :m]
    keep = np.zeros_like(s, dtype=bool)
    np.put_along_axis(keep, order, True, axis=1)
    keep |= keep.T
    np.fill_diagonal(keep, False)
    return sparse.csr_array(np.where(keep, s, 0.0))


def normalize_adjacency(s: sparse.csr_array,
                        diag: Diagnostics | None = None) -> sparse.csr_array:
    """Symmetric degree normalization D^{-1/2} S D^{-1/2}.

    Degrees are the row sums of the sparsified similarity. Negative
    cosines can push a degree to zero or below; such a vertex has no
    usable normalization, so its row and column are zeroed and an
    `isolated_vertex` diagnostic is recorded per vertex.
    """
    degrees = np.asarray(s.sum(axis=1)).ravel()
    usable = degrees > 0.0
    if not usable.all() and diag is not None:
        diag.record("isolated_vertex", int((~usable).sum()))
    inv_sqrt = np.zeros_like(degrees)
    inv_sqrt[usable] = 1.0 / np.sqrt(degrees[usable])
    scaled = s.multiply(inv_sqrt[:, None]).multiply(inv_sqrt[None, :])
    return sparse.csr_array(scaled)


def propagate(v: np.ndarray, adjacency: sparse.csr_array,
              self_weight: float, rounds: int) -> np.ndarray:
    """Aggregate features: (self_weight*I + A)^rounds applied to v.

    Computed as `rounds` successive sparse multiplications
    x <- self_weight*x + A x, never forming the dense matrix power.
    rounds=0 returns v unchanged.
    """
    v = np.asarray(v, dtype=np.float64)
    if rounds < 0:
        raise ValueError("rounds must be non-negative")
    if adjacency.shape != (v.shape[0], v.shape[0]):
        raise ValueError(
            f"adjacency {adjacency.shape} incompatible with features {v.shape}")
    out = v.copy()
    for _ in range(rounds):
        out = self_weight * out + adjacency @ out
    return out


@dataclass
class TaskGraph:
    """One episode's graph: vertices, sparse edges, aggregated features."""

    features: np.ndarray           # (M, e) stacked support then query
    similarity: sparse.csr_array   # sparsified cosine matrix, zero diagonal
    adjacency: sparse.csr_array    # degree-normalized similarity
    aggregated: np.ndarray         # (M, e) propagated features
    support_rows: slice
    query_rows: slice


def build_task_graph(support_x: np.ndarray, query_x: np.ndarray, m: int,
                     self_weight: float, rounds: int,
                     diag: Diagnostics | None = None) -> TaskGraph:
    """Run the full graph stage for one episode's features."""
    v = np.vstack([np.asarray(support_x, dtype=np.float64),
                   np.asarray(query_x, dtype=np.float64)])
    dense = build_similarity(v, diag)
    s = sparsify_top_m(dense, m)
    adjacency = normalize_adjacency(s, diag)
    aggregated = propagate(v, adjacency, self_weight, rounds)
    n_support = support_x.shape[0]
    return TaskGraph(
        features=v, similarity=s, adjacency=adjacency, aggregated=aggregated,
        support_rows=slice(0, n_support), query_rows=slice(n_support, v.shape[0]),
    )
