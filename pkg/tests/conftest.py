"""Shared fixtures: tiny corpora with known structure."""

import numpy as np
import pytest

from agilem.embed_store import Corpus, EmbeddingMatrix, ItemTable


def make_corpus(vectors: np.ndarray, ids=None, urls=None, normalized=None) -> Corpus:
    """Wrap raw vectors in a corpus, normalizing rows unless told otherwise."""
    v = np.asarray(vectors, dtype=np.float64)
    if normalized is None:
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
        normalized = True
    n = v.shape[0]
    if ids is None:
        ids = np.arange(1, n + 1, dtype=np.uint64) * 3  # non-contiguous on purpose
    if urls is None:
        urls = [f"https://img.test/{int(i):08d}.jpg" for i in ids]
    return Corpus(
        matrix=EmbeddingMatrix(vectors=v.astype(np.float32), normalized=normalized),
        items=ItemTable(np.asarray(ids, dtype=np.uint64), urls),
    )


def separable_problem(seed: int, n_pos: int = 40, n_neg: int = 60, dim: int = 8,
                      spread: float = 0.08):
    """Two well-separated unit-vector clusters; easy for any sane learner.

    Returns (corpus, labels) where labels maps id -> bool.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xF1C)))
    a = rng.standard_normal(dim)
    a /= np.linalg.norm(a)
    b = -a
    rows = []
    flags = []
    for center, count, flag in ((a, n_pos, True), (b, n_neg, False)):
        pts = center + spread * rng.standard_normal((count, dim))
        rows.append(pts)
        flags.extend([flag] * count)
    v = np.concatenate(rows)
    corpus = make_corpus(v)
    labels = {int(i): bool(f) for i, f in zip(corpus.items.ids, flags)}
    return corpus, labels


def random_model(dim: int, hidden, seed: int):
    """An untrained head with uniformly drawn parameters (all layers)."""
    from agilem.concept_head import MlpConfig, MlpModel

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xAB)))
    dims = [dim, *hidden, 1]
    ws, bs = [], []
    for i in range(len(dims) - 1):
        bound = 1.0 / np.sqrt(dims[i])
        ws.append(rng.uniform(-bound, bound, (dims[i], dims[i + 1])).astype(np.float32))
        bs.append(rng.uniform(-0.1, 0.1, dims[i + 1]).astype(np.float32))
    return MlpModel(input_dim=dim, hidden_layers=tuple(hidden), weights=ws,
                    biases=bs, config=MlpConfig(hidden_layers=tuple(hidden)))


@pytest.fixture
def small_corpus():
    rng = np.random.default_rng(1234)
    return make_corpus(rng.standard_normal((257, 12)))
