"""Nearest-neighbor search over a normalized corpus.

Two index kinds share one query interface:

- ``ExactIndex`` scans every row; it is the correctness baseline.
- ``PartitionedIndex`` clusters rows with k-means and scans only the
  partitions whose centroids are closest to the query. Probing all
  partitions returns exactly the exact-index answer.

Similarity is the cosine (dot product of unit vectors), accumulated in
float64. Ties are broken by ascending item id so results are reproducible.

Index sidecar layout (little endian):

    offset  size  field
    0       4     magic ``AGIX``
    4       4     format version, u32 (currently 1)
    8       1     kind, u8 (0 exact, 1 partitioned)
    9       4     dim, u32
    13      8     corpus row count, u64
    21      4     partition count, u32 (0 for exact)
    25      ...   partitioned only: centroids (P * dim f32), then
                  per-row partition assignments (count * u32)
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

from agilem.embed_store import CHUNK_ROWS, Corpus
from agilem.errors import FormatError, ValidationError

INDEX_MAGIC = b"AGIX"
INDEX_FORMAT_VERSION = 1
KMEANS_ITERATIONS = 25


class Neighbor(NamedTuple):
    id: int
    similarity: float


def _require_normalized(corpus: Corpus) -> None:
    if not corpus.matrix.normalized:
        raise ValidationError("index construction requires a normalized corpus")
    if corpus.count == 0:
        raise ValidationError("cannot index an empty corpus")


def _unit_query(query, dim: int) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != dim:
        raise ValidationError(f"query has dim {q.shape[0]}, index has dim {dim}")
    if not np.isfinite(q).all():
        raise ValidationError("query contains non-finite values")
    norm = np.linalg.norm(q)
    if norm == 0.0:
        raise ValidationError("query has zero norm")
    return q / norm


@dataclass(frozen=True)
class ExactIndex:
    corpus: Corpus

    kind = "exact"

    def __post_init__(self):
        _require_normalized(self.corpus)


@dataclass(frozen=True)
class PartitionedIndex:
    corpus: Corpus
    centroids: np.ndarray      # (P, dim) float32
    assignments: np.ndarray    # (count,) uint32, partition per corpus row

    kind = "partitioned"

    def __post_init__(self):
        _require_normalized(self.corpus)
        if self.centroids.ndim != 2 or self.centroids.shape[1] != self.corpus.dim:
            raise ValidationError("centroid shape does not match corpus dim")
        if self.assignments.shape != (self.corpus.count,):
            raise ValidationError("one assignment per corpus row required")
        if not np.isfinite(self.centroids).all():
            raise ValidationError("centroids must be finite")
        counts = np.bincount(self.assignments, minlength=self.n_partitions)
        if len(counts) > self.n_partitions or (counts == 0).any():
            raise ValidationError("every partition must own at least one row")
        object.__setattr__(self, "_lists", _member_lists(self.assignments, self.n_partitions))

    @property
    def n_partitions(self) -> int:
        return self.centroids.shape[0]


NnIndex = Union[ExactIndex, PartitionedIndex]


def _member_lists(assignments: np.ndarray, n_partitions: int) -> list:
    order = np.argsort(assignments, kind="stable")
    bounds = np.searchsorted(assignments[order], np.arange(n_partitions + 1))
    return [order[bounds[p]:bounds[p + 1]] for p in range(n_partitions)]


def build_exact(corpus: Corpus) -> ExactIndex:
    """Wrap a corpus in the full-scan baseline index."""
    return ExactIndex(corpus=corpus)


def build_partitioned(corpus: Corpus, n_partitions: int, seed: int) -> PartitionedIndex:
    """Cluster the corpus into partitions with seeded k-means.

    Runs a fixed number of Lloyd iterations from a distinct-row
    initialization. An iteration that empties a partition reseeds it with
    the row farthest from the centroid of the currently largest partition,
    so every partition is non-empty on exit. The same corpus and seed
    always produce the same index.
    """
    _require_normalized(corpus)
    if not (1 <= n_partitions <= corpus.count):
        raise ValidationError(
            f"n_partitions must be in [1, {corpus.count}], got {n_partitions}"
        )
    centroids, assignments = _kmeans(corpus.matrix.vectors, n_partitions, seed)
    return PartitionedIndex(corpus=corpus, centroids=centroids, assignments=assignments)


def _kmeans(vectors: np.ndarray, n_partitions: int, seed: int):
    count, dim = vectors.shape
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xC1A5)))
    centroids = vectors[np.sort(rng.choice(count, size=n_partitions, replace=False))].copy()
    assignments = np.zeros(count, dtype=np.uint32)

    for _ in range(KMEANS_ITERATIONS):
        # Assignment by squared L2, computed via the dot-product form since
        # rows are unit length: argmin |x - c|^2 == argmax (x.c - |c|^2 / 2).
        offsets = 0.5 * np.einsum("pd,pd->p", centroids, centroids, dtype=np.float32)
        sums = np.zeros((n_partitions, dim), dtype=np.float64)
        counts = np.zeros(n_partitions, dtype=np.int64)
        for start in range(0, count, CHUNK_ROWS):
            chunk = vectors[start:start + CHUNK_ROWS]
            scores = chunk @ centroids.T
            scores -= offsets
            assign = np.argmax(scores, axis=1).astype(np.uint32)
            assignments[start:start + len(chunk)] = assign
            order = np.argsort(assign, kind="stable")
            present, starts = np.unique(assign[order], return_index=True)
            sums[present] += np.add.reduceat(chunk[order].astype(np.float64), starts, axis=0)
            counts += np.bincount(assign, minlength=n_partitions)
        nonempty = counts > 0
        centroids = centroids.astype(np.float64)
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        _reseed_empty(vectors, centroids, assignments, counts)
        centroids = centroids.astype(np.float32)

    return centroids, assignments


def _reseed_empty(vectors, centroids, assignments, counts) -> None:
    """Move the farthest row of the largest partition into each empty one."""
    for empty in np.flatnonzero(counts == 0):
        largest = int(np.argmax(counts))
        members = np.flatnonzero(assignments == largest)
        proj = vectors[members].astype(np.float64) @ centroids[largest]
        row = members[int(np.argmin(proj))]
        centroids[empty] = vectors[row].astype(np.float64)
        assignments[row] = empty
        counts[largest] -= 1
        counts[empty] = 1


def _rank_and_take(ids: np.ndarray, sims: np.ndarray, k: int) -> list:
    order = np.lexsort((ids, -sims))[:k]
    return [Neighbor(int(ids[i]), float(sims[i])) for i in order]


def top_k(index: NnIndex, query, k: int, probe_partitions: Optional[int] = None) -> list:
    """The k most similar items, best first, ties broken by ascending id.

    ``probe_partitions`` limits how many partitions a partitioned index
    scans (closest centroids first); it is ignored by the exact index and
    probing every partition reproduces the exact answer. ``k`` beyond the
    corpus size is clamped.
    """
    corpus = index.corpus
    if k < 1:
        raise ValidationError(f"k must be at least 1, got {k}")
    q = _unit_query(query, corpus.dim)
    k = min(k, corpus.count)

    if index.kind == "exact":
        sims = np.empty(corpus.count, dtype=np.float64)
        vectors = corpus.matrix.vectors
        for start in range(0, corpus.count, CHUNK_ROWS):
            chunk = vectors[start:start + CHUNK_ROWS]
            sims[start:start + len(chunk)] = chunk.astype(np.float64) @ q
        return _rank_and_take(corpus.items.ids, sims, k)

    probe = index.n_partitions if probe_partitions is None else probe_partitions
    if probe < 1:
        raise ValidationError(f"probe_partitions must be at least 1, got {probe}")
    probe = min(probe, index.n_partitions)
    centroid_scores = index.centroids.astype(np.float64) @ q
    centroid_scores -= 0.5 * np.einsum(
        "pd,pd->p", index.centroids.astype(np.float64), index.centroids.astype(np.float64)
    )
    ranked = np.lexsort((np.arange(index.n_partitions), -centroid_scores))[:probe]
    rows = np.concatenate([index._lists[p] for p in ranked])
    sims = index.corpus.matrix.vectors[rows].astype(np.float64) @ q
    return _rank_and_take(corpus.items.ids[rows], sims, min(k, len(rows)))


def save_index(path, index: NnIndex) -> None:
    """Write the sidecar file; the corpus itself is not duplicated."""
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(np.uint32(INDEX_FORMAT_VERSION).tobytes())
        fh.write(np.uint8(0 if index.kind == "exact" else 1).tobytes())
        fh.write(np.uint32(index.corpus.dim).tobytes())
        fh.write(np.uint64(index.corpus.count).tobytes())
        if index.kind == "exact":
            fh.write(np.uint32(0).tobytes())
        else:
            fh.write(np.uint32(index.n_partitions).tobytes())
            fh.write(np.ascontiguousarray(index.centroids, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(index.assignments, dtype="<u4").tobytes())


def load_index(path, corpus: Corpus) -> NnIndex:
    """Load a sidecar and attach it to the corpus it was built from."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 25:
        raise FormatError(f"{path}: file shorter than the 25-byte header")
    if blob[:4] != INDEX_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {INDEX_MAGIC!r}")
    version = int(np.frombuffer(blob, dtype="<u4", count=1, offset=4)[0])
    if version != INDEX_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    kind = blob[8]
    dim = int(np.frombuffer(blob, dtype="<u4", count=1, offset=9)[0])
    count = int(np.frombuffer(blob, dtype="<u8", count=1, offset=13)[0])
    n_partitions = int(np.frombuffer(blob, dtype="<u4", count=1, offset=21)[0])
    if dim != corpus.dim or count != corpus.count:
        raise ValidationError(
            f"{path}: index built for {count} x {dim}, corpus is {corpus.count} x {corpus.dim}"
        )
    if kind == 0:
        if len(blob) != 25:
            raise FormatError(f"{path}: trailing bytes after exact-index header")
        return ExactIndex(corpus=corpus)
    if kind != 1:
        raise FormatError(f"{path}: unknown index kind {kind}")
    expected = 25 + n_partitions * dim * 4 + count * 4
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    off = 25
    centroids = np.frombuffer(blob, dtype="<f4", count=n_partitions * dim, offset=off)
    centroids = centroids.reshape(n_partitions, dim).copy()
    off += n_partitions * dim * 4
    assignments = np.frombuffer(blob, dtype="<u4", count=count, offset=off).copy()
    return PartitionedIndex(corpus=corpus, centroids=centroids, assignments=assignments)


def recall_at_k(approx: list, exact: list) -> float:
    """Fraction of the exact neighbor ids that the approximate list found."""
    if not exact:
        raise ValidationError("exact result set is empty")
    exact_ids = {n.id for n in exact}
    found = sum(1 for n in approx if n.id in exact_ids)
    return found / len(exact_ids)
