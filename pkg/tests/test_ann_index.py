"""Neighbor search against a brute-force oracle."""

import numpy as np
import pytest

from agilem import ann_index as ann
from agilem.errors import FormatError, ValidationError
from conftest import make_corpus


def brute_force(corpus, query, k):
    """Independent oracle: f64 dot products, sort by (-sim, id)."""
    q = np.asarray(query, dtype=np.float64)
    q = q / np.linalg.norm(q)
    sims = corpus.matrix.vectors.astype(np.float64) @ q
    order = sorted(range(corpus.count),
                   key=lambda r: (-sims[r], int(corpus.items.ids[r])))
    return [(int(corpus.items.ids[r]), sims[r]) for r in order[:k]]


@pytest.fixture(scope="module")
def clustered():
    rng = np.random.default_rng(42)
    centers = rng.standard_normal((12, 16))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    rows = centers[rng.integers(0, 12, 3000)] + 0.3 * rng.standard_normal((3000, 16))
    return make_corpus(rows)


def test_exact_matches_oracle(clustered):
    index = ann.build_exact(clustered)
    rng = np.random.default_rng(0)
    for _ in range(25):
        q = rng.standard_normal(16)
        got = ann.top_k(index, q, k=20)
        want = brute_force(clustered, q, 20)
        assert [n.id for n in got] == [i for i, _ in want]
        for n, (_, s) in zip(got, want):
            assert n.similarity == pytest.approx(s, abs=1e-9)


def test_exact_tie_breaks_by_id():
    # Duplicate rows force exact similarity ties.
    v = np.tile(np.array([[1.0, 0.0]]), (5, 1))
    corpus = make_corpus(v, ids=[50, 10, 30, 20, 40])
    got = ann.top_k(ann.build_exact(corpus), [1.0, 0.0], k=5)
    assert [n.id for n in got] == [10, 20, 30, 40, 50]


def test_k_is_clamped(clustered):
    got = ann.top_k(ann.build_exact(clustered), np.ones(16), k=10**6)
    assert len(got) == clustered.count


def test_full_probe_equals_exact(clustered):
    exact = ann.build_exact(clustered)
    part = ann.build_partitioned(clustered, n_partitions=16, seed=3)
    rng = np.random.default_rng(1)
    for _ in range(15):
        q = rng.standard_normal(16)
        a = ann.top_k(exact, q, k=25)
        b = ann.top_k(part, q, k=25, probe_partitions=part.n_partitions)
        c = ann.top_k(part, q, k=25)  # default probes everything
        assert a == b == c


def test_partial_probe_recall(clustered):
    exact = ann.build_exact(clustered)
    part = ann.build_partitioned(clustered, n_partitions=24, seed=3)
    rng = np.random.default_rng(2)
    recalls = []
    for _ in range(30):
        q = rng.standard_normal(16)
        want = ann.top_k(exact, q, k=30)
        got = ann.top_k(part, q, k=30, probe_partitions=6)
        recalls.append(ann.recall_at_k(got, want))
    assert np.mean(recalls) >= 0.8  # clustered data, 25% probe


def test_partial_probe_results_are_real_neighbors(clustered):
    """A probed result never invents items and sims stay correct."""
    part = ann.build_partitioned(clustered, n_partitions=24, seed=3)
    q = np.random.default_rng(5).standard_normal(16)
    got = ann.top_k(part, q, k=10, probe_partitions=2)
    qn = q / np.linalg.norm(q)
    for n in got:
        row = int(clustered.items.rows_for_ids([n.id])[0])
        sim = float(clustered.matrix.vectors[row].astype(np.float64) @ qn)
        assert n.similarity == pytest.approx(sim, abs=1e-9)
    sims = [n.similarity for n in got]
    assert sims == sorted(sims, reverse=True)


def test_kmeans_deterministic(clustered):
    a = ann.build_partitioned(clustered, n_partitions=10, seed=7)
    b = ann.build_partitioned(clustered, n_partitions=10, seed=7)
    assert np.array_equal(a.centroids, b.centroids)
    assert np.array_equal(a.assignments, b.assignments)
    c = ann.build_partitioned(clustered, n_partitions=10, seed=8)
    assert not np.array_equal(a.assignments, c.assignments)


def test_every_partition_nonempty(clustered):
    # Many partitions relative to natural cluster count stresses reseeding.
    part = ann.build_partitioned(clustered, n_partitions=200, seed=1)
    counts = np.bincount(part.assignments, minlength=200)
    assert (counts > 0).all()


def test_partitions_cover_all_rows(clustered):
    part = ann.build_partitioned(clustered, n_partitions=16, seed=0)
    rows = np.concatenate(part._lists)
    assert np.array_equal(np.sort(rows), np.arange(clustered.count))


def test_build_validation(clustered):
    with pytest.raises(ValidationError):
        ann.build_partitioned(clustered, n_partitions=0, seed=0)
    with pytest.raises(ValidationError):
        ann.build_partitioned(clustered, n_partitions=clustered.count + 1, seed=0)
    un = make_corpus(np.ones((4, 3)) * 2.0, normalized=False)
    with pytest.raises(ValidationError, match="normalized"):
        ann.build_exact(un)


def test_query_validation(clustered):
    index = ann.build_exact(clustered)
    with pytest.raises(ValidationError, match="dim"):
        ann.top_k(index, np.ones(5), k=3)
    with pytest.raises(ValidationError, match="zero norm"):
        ann.top_k(index, np.zeros(16), k=3)
    with pytest.raises(ValidationError, match="k must"):
        ann.top_k(index, np.ones(16), k=0)
    part = ann.build_partitioned(clustered, n_partitions=4, seed=0)
    with pytest.raises(ValidationError, match="probe"):
        ann.top_k(part, np.ones(16), k=3, probe_partitions=0)


def test_save_load_roundtrip(tmp_path, clustered):
    part = ann.build_partitioned(clustered, n_partitions=12, seed=4)
    p = tmp_path / "index.agix"
    ann.save_index(p, part)
    back = ann.load_index(p, clustered)
    assert isinstance(back, ann.PartitionedIndex)
    assert np.array_equal(back.centroids, part.centroids)
    assert np.array_equal(back.assignments, part.assignments)
    q = np.random.default_rng(9).standard_normal(16)
    assert ann.top_k(back, q, k=15, probe_partitions=3) == ann.top_k(
        part, q, k=15, probe_partitions=3)

    e = tmp_path / "exact.agix"
    ann.save_index(e, ann.build_exact(clustered))
    back_e = ann.load_index(e, clustered)
    assert isinstance(back_e, ann.ExactIndex)


def test_load_rejects_corruption(tmp_path, clustered):
    part = ann.build_partitioned(clustered, n_partitions=5, seed=0)
    p = tmp_path / "index.agix"
    ann.save_index(p, part)
    raw = bytearray(p.read_bytes())

    bad = tmp_path / "bad.agix"
    bad.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(FormatError, match="magic"):
        ann.load_index(bad, clustered)

    bad.write_bytes(bytes(raw[:-4]))
    with pytest.raises(FormatError, match="bytes"):
        ann.load_index(bad, clustered)

    other = make_corpus(np.random.default_rng(0).standard_normal((10, 16)))
    with pytest.raises(ValidationError, match="built for"):
        ann.load_index(p, other)


def test_recall_helper():
    a = [ann.Neighbor(1, 0.9), ann.Neighbor(2, 0.8)]
    b = [ann.Neighbor(1, 0.9), ann.Neighbor(3, 0.7)]
    assert ann.recall_at_k(a, b) == 0.5
    with pytest.raises(ValidationError):
        ann.recall_at_k(a, [])
