import numpy as np
import pytest

from fewproto.diagnostics import Diagnostics
from fewproto.graph import (build_similarity, build_task_graph, cosine,
                            normalize_adjacency, propagate, sparsify_top_m)


def dense_normalize_oracle(s):
    """Explicit D^{-1/2} S D^{-1/2} with dense matrices."""
    d = s.sum(axis=1)
    inv = np.diag(1.0 / np.sqrt(d))
    return inv @ s @ inv


def dense_power_oracle(v, adjacency, self_weight, rounds):
    """Explicit (self_weight*I + A)^rounds @ V."""
    a = self_weight * np.eye(adjacency.shape[0]) + adjacency
    return np.linalg.matrix_power(a, rounds) @ v


def test_cosine_orthogonal():
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0


def test_cosine_parallel():
    assert cosine(np.array([1.0, 2.0]), np.array([2.0, 4.0])) == pytest.approx(
        1.0, abs=1e-15)


def test_cosine_analytic_45_degrees():
    assert cosine(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(
        0.70710678, abs=1e-8)


def test_cosine_zero_vector_rule():
    diag = Diagnostics()
    assert cosine(np.zeros(3), np.ones(3), diag) == 0.0
    assert cosine(np.zeros(3), np.zeros(3), diag) == 0.0
    assert diag.counts["zero_vector_cosine"] == 2


def test_cosine_dimension_mismatch():
    with pytest.raises(ValueError):
        cosine(np.ones(2), np.ones(3))


def test_similarity_identical_unit_rows():
    s = build_similarity(np.array([[0.6, 0.8], [0.6, 0.8]]))
    np.testing.assert_allclose(s, [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)


def test_similarity_orthogonal_rows():
    s = build_similarity(np.array([[1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_array_equal(s, np.zeros((2, 2)))


def test_similarity_matches_double_loop_oracle():
    rng = np.random.default_rng(0)
    for n in (3, 5, 9):
        v = rng.normal(size=(n, 7))
        s = build_similarity(v)
        for i in range(n):
            for j in range(n):
                want = 0.0 if i == j else cosine(v[i], v[j])
                assert s[i, j] == pytest.approx(want, abs=1e-12)


def test_similarity_exactly_symmetric_zero_diagonal():
    rng = np.random.default_rng(1)
    for _ in range(20):
        s = build_similarity(rng.normal(size=(12, 5)))
        assert np.max(np.abs(s - s.T)) == 0.0
        assert np.all(np.diag(s) == 0.0)
        assert s.min() >= -1.0 and s.max() <= 1.0


def test_similarity_zero_row_diagnostic():
    diag = Diagnostics()
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    s = build_similarity(v, diag)
    assert diag.counts["zero_vector_cosine"] == 1
    np.testing.assert_array_equal(s[0], np.zeros(3))


def test_sparsify_m_max_keeps_everything():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(6, 4))
    s = build_similarity(v)  # includes negative entries
    kept = sparsify_top_m(s, 5).toarray()
    np.testing.assert_array_equal(kept, s)


def test_sparsify_chain_union_rule():
    # Hand-enumerated: row tops are 0->1, 1->0, 2->1; the union keeps the
    # two chain edges 0-1 and 1-2 symmetrically and drops 0-2.
    s = np.array([
        [0.0, 0.9, 0.1],
        [0.9, 0.0, 0.5],
        [0.1, 0.5, 0.0],
    ])
    kept = sparsify_top_m(s, 1).toarray()
    want = np.array([
        [0.0, 0.9, 0.0],
        [0.9, 0.0, 0.5],
        [0.0, 0.5, 0.0],
    ])
    np.testing.assert_array_equal(kept, want)


def test_sparsify_tie_breaks_to_lowest_index():
    # All off-diagonal entries equal: each row keeps its lowest-index
    # neighbor (0 keeps 1, rows 1 and 2 keep 0), union symmetrizes.
    s = np.full((3, 3), 0.5)
    np.fill_diagonal(s, 0.0)
    kept = sparsify_top_m(s, 1).toarray()
    want = np.array([
        [0.0, 0.5, 0.5],
        [0.5, 0.0, 0.0],
        [0.5, 0.0, 0.0],
    ])
    np.testing.assert_array_equal(kept, want)
    assert np.max(np.abs(kept - kept.T)) == 0.0


def test_sparsify_symmetric_on_random_inputs():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(3, 12))
        s = build_similarity(rng.normal(size=(n, 4)))
        m = int(rng.integers(1, n))
        kept = sparsify_top_m(s, m).toarray()
        assert np.max(np.abs(kept - kept.T)) == 0.0
        assert np.all(np.diag(kept) == 0.0)


def test_sparsify_m_out_of_range():
    s = np.zeros((4, 4))
    with pytest.raises(ValueError):
        sparsify_top_m(s, 0)
    with pytest.raises(ValueError):
        sparsify_top_m(s, 4)


def test_normalize_unit_degrees():
    from scipy import sparse
    s = sparse.csr_array(np.array([[0.0, 1.0], [1.0, 0.0]]))
    e = normalize_adjacency(s).toarray()
    np.testing.assert_allclose(e, [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)


def test_normalize_scaling_cancels():
    from scipy import sparse
    s = sparse.csr_array(np.array([[0.0, 2.0], [2.0, 0.0]]))
    e = normalize_adjacency(s).toarray()
    np.testing.assert_allclose(e, [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)


def test_normalize_matches_dense_oracle():
    from scipy import sparse
    rng = np.random.default_rng(4)
    for _ in range(20):
        raw = rng.uniform(0.1, 1.0, size=(6, 6))
        s = (raw + raw.T) / 2
        np.fill_diagonal(s, 0.0)
        e = normalize_adjacency(sparse.csr_array(s)).toarray()
        np.testing.assert_allclose(e, dense_normalize_oracle(s), atol=1e-12)


def test_normalize_isolated_vertex_zeroed():
    from scipy import sparse
    s = np.array([
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 0.0],
    ])
    diag = Diagnostics()
    e = normalize_adjacency(sparse.csr_array(s), diag).toarray()
    assert diag.counts["isolated_vertex"] == 1
    np.testing.assert_array_equal(e[0], np.zeros(3))
    np.testing.assert_array_equal(e[:, 0], np.zeros(3))
    assert e[1, 2] == pytest.approx(1.0)


def test_propagate_zero_rounds_is_identity():
    from scipy import sparse
    rng = np.random.default_rng(5)
    v = rng.normal(size=(4, 3))
    adjacency = sparse.csr_array(np.ones((4, 4)) - np.eye(4))
    np.testing.assert_array_equal(propagate(v, adjacency, 0.7, 0), v)


def test_propagate_swap_example():
    from scipy import sparse
    adjacency = sparse.csr_array(np.array([[0.0, 1.0], [1.0, 0.0]]))
    v = np.eye(2)
    out = propagate(v, adjacency, 1.0, 1)
    np.testing.assert_allclose(out, np.ones((2, 2)), atol=1e-15)


def test_propagate_matches_dense_power_oracle():
    rng = np.random.default_rng(6)
    v = rng.normal(size=(8, 5))
    s = build_similarity(rng.normal(size=(8, 5)) + 2.0)
    adjacency = normalize_adjacency(sparsify_top_m(s, 3))
    out = propagate(v, adjacency, 1.0, 3)
    want = dense_power_oracle(v, adjacency.toarray(), 1.0, 3)
    np.testing.assert_allclose(out, want, atol=1e-10)


def test_propagate_linearity():
    from scipy import sparse
    rng = np.random.default_rng(7)
    for _ in range(10):
        n = int(rng.integers(3, 10))
        s = build_similarity(rng.normal(size=(n, 4)) + 1.5)
        adjacency = normalize_adjacency(sparsify_top_m(s, min(3, n - 1)))
        v1 = rng.normal(size=(n, 6))
        v2 = rng.normal(size=(n, 6))
        a, b = rng.normal(size=2)
        left = propagate(a * v1 + b * v2, adjacency, 0.8, 3)
        right = a * propagate(v1, adjacency, 0.8, 3) \
            + b * propagate(v2, adjacency, 0.8, 3)
        np.testing.assert_allclose(left, right, atol=1e-9)


def test_propagate_oracle_all_small_sizes():
    rng = np.random.default_rng(8)
    for n in range(3, 13):
        feats = rng.normal(size=(n, 6)) + rng.normal(size=6)
        s = build_similarity(feats)
        m = int(rng.integers(1, n))
        adjacency = normalize_adjacency(sparsify_top_m(s, m))
        rounds = int(rng.integers(0, 5))
        sw = float(rng.uniform(0.2, 1.5))
        out = propagate(feats, adjacency, sw, rounds)
        want = dense_power_oracle(feats, adjacency.toarray(), sw, rounds)
        np.testing.assert_allclose(out, want, atol=1e-10)


def test_task_graph_shapes_and_invariants():
    rng = np.random.default_rng(9)
    support = rng.normal(size=(10, 6)) + 1.0
    query = rng.normal(size=(30, 6)) + 1.0
    tg = build_task_graph(support, query, 5, 1.0, 3)
    assert tg.features.shape == (40, 6)
    assert tg.aggregated.shape == (40, 6)
    assert tg.support_rows == slice(0, 10)
    assert tg.query_rows == slice(10, 40)
    e = tg.adjacency.toarray()
    assert np.max(np.abs(e - e.T)) <= 1e-12
    # adjacency reconstructs from the sparsified similarity
    want = dense_normalize_oracle(tg.similarity.toarray())
    np.testing.assert_allclose(e, want, atol=1e-9)
