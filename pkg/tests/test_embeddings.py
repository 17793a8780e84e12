import struct

import numpy as np
import pytest

from fewproto.embeddings import (MAGIC, EmbeddingFormatError, EmbeddingSet,
                                 generate_synthetic, load_embedding_set,
                                 sample_episode, save_embedding_set)


def make_set(rng, n_classes=3, per_class=4, dim=5):
    vectors = rng.normal(size=(n_classes * per_class, dim)).astype(np.float32)
    labels = np.repeat(np.arange(n_classes), per_class)
    return EmbeddingSet.from_arrays(vectors, labels)


def write_raw(path, dim, records, n_classes=None, magic=MAGIC):
    """Hand-rolled writer so load gets tested against the format spec,
    not against save_embedding_set."""
    classes = {c for c, _ in records} if n_classes is None else None
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<III", dim, len(records),
                            len(classes) if n_classes is None else n_classes))
        for class_id, vec in records:
            f.write(struct.pack("<I", class_id))
            f.write(np.asarray(vec, dtype="<f4").tobytes())


def test_load_minimal_file(tmp_path):
    path = tmp_path / "mini.emb"
    write_raw(path, 4, [(0, [1, 2, 3, 4]), (1, [5, 6, 7, 8])])
    emb = load_embedding_set(path)
    assert emb.dim == 4
    assert emb.n_records == 2
    assert emb.n_classes == 2
    np.testing.assert_array_equal(emb.vectors[1], [5, 6, 7, 8])


def test_truncated_payload(tmp_path):
    path = tmp_path / "trunc.emb"
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", 4, 2, 1))  # claims 2 records
        f.write(struct.pack("<I", 0))
        f.write(np.zeros(4, dtype="<f4").tobytes())  # only 1 present
    with pytest.raises(EmbeddingFormatError) as exc:
        load_embedding_set(path)
    assert "truncated" in str(exc.value)
    assert exc.value.offset == 16 + 20  # where the bytes ran out


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.emb"
    write_raw(path, 2, [(0, [1, 2])], magic=b"NOPE")
    with pytest.raises(EmbeddingFormatError) as exc:
        load_embedding_set(path)
    assert exc.value.offset == 0


def test_zero_dimension(tmp_path):
    path = tmp_path / "zerodim.emb"
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", 0, 0, 0))
    with pytest.raises(EmbeddingFormatError) as exc:
        load_embedding_set(path)
    assert exc.value.offset == 4


def test_class_count_mismatch(tmp_path):
    path = tmp_path / "classes.emb"
    write_raw(path, 2, [(0, [1, 2]), (0, [3, 4])], n_classes=2)
    with pytest.raises(EmbeddingFormatError) as exc:
        load_embedding_set(path)
    assert exc.value.offset == 12


def test_trailing_bytes(tmp_path):
    path = tmp_path / "trail.emb"
    write_raw(path, 2, [(0, [1, 2])])
    with open(path, "ab") as f:
        f.write(b"xx")
    with pytest.raises(EmbeddingFormatError) as exc:
        load_embedding_set(path)
    assert exc.value.offset == 16 + 12


def test_nonfinite_value_offset(tmp_path):
    path = tmp_path / "nan.emb"
    write_raw(path, 4, [(0, [1, 2, 3, 4]), (1, [5, 6, np.nan, 8])])
    with pytest.raises(EmbeddingFormatError) as exc:
        load_embedding_set(path)
    # record 1 (record size 20), class_id u32, then component 2
    assert exc.value.offset == 16 + 20 + 4 + 8


def test_save_rejects_nonfinite_before_writing(tmp_path):
    vectors = np.array([[1.0, np.inf]], dtype=np.float32)
    emb = EmbeddingSet(dim=2, vectors=vectors,
                       labels=np.array([0]), class_index={0: np.array([0])})
    path = tmp_path / "never.emb"
    with pytest.raises(ValueError):
        save_embedding_set(emb, path)
    assert not path.exists()


def test_empty_set_roundtrip(tmp_path):
    emb = EmbeddingSet.from_arrays(np.empty((0, 8), dtype=np.float32),
                                   np.empty(0, dtype=np.int64))
    path = tmp_path / "empty.emb"
    save_embedding_set(emb, path)
    back = load_embedding_set(path)
    assert back.dim == 8
    assert back.n_records == 0


def test_roundtrip_property_random_sets(tmp_path):
    # load(save(x)) must reproduce vectors and labels bit for bit.
    rng = np.random.default_rng(10)
    for trial in range(25):
        n_classes = int(rng.integers(1, 6))
        per_class = int(rng.integers(1, 7))
        dim = int(rng.integers(1, 33))
        emb = make_set(rng, n_classes, per_class, dim)
        path = tmp_path / f"rt{trial}.emb"
        save_embedding_set(emb, path)
        back = load_embedding_set(path)
        assert back.dim == emb.dim
        np.testing.assert_array_equal(back.vectors, emb.vectors)
        np.testing.assert_array_equal(back.labels, emb.labels)
        assert set(back.class_index) == set(emb.class_index)
        for c in emb.class_index:
            np.testing.assert_array_equal(back.class_index[c],
                                          emb.class_index[c])


def test_episode_sizes_five_way_one_shot():
    rng = np.random.default_rng(11)
    emb = make_set(rng, n_classes=8, per_class=20, dim=6)
    ep = sample_episode(emb, 5, 1, 15, np.random.default_rng(0))
    assert ep.support_x.shape == (5, 6)
    assert ep.query_x.shape == (75, 6)


def test_episode_per_class_counts_and_disjointness():
    rng = np.random.default_rng(12)
    emb = make_set(rng, n_classes=10, per_class=12, dim=4)
    for seed in range(20):
        ep = sample_episode(emb, 4, 3, 5, np.random.default_rng(seed))
        for c in range(4):
            assert np.sum(ep.support_y == c) == 3
            assert np.sum(ep.hidden_labels == c) == 5
        drawn = np.concatenate([ep.support_idx, ep.query_idx])
        assert len(set(drawn.tolist())) == drawn.size  # no record reused


def test_episode_single_class_pool_splits_two_records():
    emb = EmbeddingSet.from_arrays(
        np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32),
        np.array([7, 7]))
    ep = sample_episode(emb, 1, 1, 1, np.random.default_rng(3))
    assert {int(ep.support_idx[0]), int(ep.query_idx[0])} == {0, 1}


def test_episode_deterministic_given_seed():
    rng = np.random.default_rng(13)
    emb = make_set(rng, n_classes=9, per_class=25, dim=8)
    a = sample_episode(emb, 5, 5, 15, np.random.default_rng(99))
    b = sample_episode(emb, 5, 5, 15, np.random.default_rng(99))
    np.testing.assert_array_equal(a.support_idx, b.support_idx)
    np.testing.assert_array_equal(a.query_idx, b.query_idx)
    np.testing.assert_array_equal(a.support_x, b.support_x)


def test_episode_insufficient_classes():
    rng = np.random.default_rng(14)
    emb = make_set(rng, n_classes=3, per_class=10)
    with pytest.raises(ValueError, match="classes"):
        sample_episode(emb, 5, 1, 1, np.random.default_rng(0))


def test_episode_insufficient_records():
    rng = np.random.default_rng(15)
    emb = make_set(rng, n_classes=5, per_class=4)
    with pytest.raises(ValueError, match="fewer than"):
        sample_episode(emb, 5, 3, 5, np.random.default_rng(0))


def test_synthetic_zero_noise_collapses_classes():
    emb = generate_synthetic(4, 6, 10, 5.0, 0.0, np.random.default_rng(20))
    for c in range(4):
        rows = emb.vectors[emb.labels == c]
        assert np.all(rows == rows[0])


def test_synthetic_counts():
    emb = generate_synthetic(20, 50, 64, 1.0, 1.0, np.random.default_rng(21))
    assert emb.n_records == 1000
    assert emb.n_classes == 20
    assert emb.dim == 64


def test_synthetic_mean_norms():
    emb = generate_synthetic(6, 400, 32, 7.0, 0.1, np.random.default_rng(22))
    for c in range(6):
        mean = emb.vectors[emb.labels == c].mean(axis=0)
        assert np.linalg.norm(mean) == pytest.approx(7.0, rel=0.02)


def test_synthetic_deterministic():
    a = generate_synthetic(3, 5, 8, 2.0, 0.5, np.random.default_rng(23))
    b = generate_synthetic(3, 5, 8, 2.0, 0.5, np.random.default_rng(23))
    np.testing.assert_array_equal(a.vectors, b.vectors)


def test_synthetic_nearest_mean_oracle():
    # Brute-force oracle: estimate class means from a held-in slice, then
    # nearest-mean classify 10k held-out points. mean_scale=10, sigma=1
    # must give essentially perfect separation.
    n_classes, per_class, held_in = 20, 600, 100
    emb = generate_synthetic(n_classes, per_class, 64, 10.0, 1.0,
                             np.random.default_rng(24))
    means = np.stack([
        emb.vectors[emb.class_index[c][:held_in]].mean(axis=0)
        for c in range(n_classes)
    ])
    correct = total = 0
    for c in range(n_classes):
        held_out = emb.vectors[emb.class_index[c][held_in:]].astype(np.float64)
        d2 = ((held_out[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        correct += int(np.sum(d2.argmin(axis=1) == c))
        total += held_out.shape[0]
    assert total == 10000
    assert correct / total >= 0.99


def test_invalid_generation_args():
    rng = np.random.default_rng(25)
    with pytest.raises(ValueError):
        generate_synthetic(0, 5, 8, 1.0, 1.0, rng)
    with pytest.raises(ValueError):
        generate_synthetic(2, 5, 8, 1.0, -0.1, rng)
