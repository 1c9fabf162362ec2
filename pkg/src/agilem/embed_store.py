"""Frozen embedding corpus: binary vector file plus aligned id/url table.

Vector file layout (little endian):

    offset  size  field
    0       4     magic ``AGEM``
    4       4     format version, u32 (currently 1)
    8       4     embedding dimension, u32
    12      8     row count, u64
    20      ...   count * dim float32 values, row major

The companion table is JSONL with one ``{"id": <u64>, "url": <str>}`` object
per vector row, in row order. Ids are unique unsigned 64-bit integers and
urls are unique non-empty strings; neither is assumed sorted.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from agilem.errors import FormatError, ValidationError

EMBED_MAGIC = b"AGEM"
EMBED_FORMAT_VERSION = 1
_HEADER_SIZE = 20
# Rows processed per chunk while streaming files or validating.
CHUNK_ROWS = 65536
# A matrix counts as normalized when every row norm is within this of 1.
NORM_TOLERANCE = 1e-3


def _as_u64_ids(ids) -> np.ndarray:
    arr = np.asarray(ids)
    if arr.ndim != 1:
        raise ValidationError("ids must be one-dimensional")
    if arr.size and (not np.issubdtype(arr.dtype, np.integer)):
        raise ValidationError("ids must be integers")
    if arr.size and np.issubdtype(arr.dtype, np.signedinteger) and arr.min() < 0:
        raise ValidationError("ids must be non-negative")
    return arr.astype(np.uint64)


@dataclass(frozen=True)
class EmbeddingMatrix:
    """A (count, dim) float32 block of image or text embeddings.

    ``normalized`` records whether every row is unit length to within
    ``NORM_TOLERANCE``; cosine scoring and index construction require it.
    """

    vectors: np.ndarray
    normalized: bool

    def __post_init__(self):
        v = self.vectors
        if v.ndim != 2:
            raise ValidationError(f"vectors must be 2-d, got shape {v.shape}")
        if v.dtype != np.float32:
            raise ValidationError(f"vectors must be float32, got {v.dtype}")
        if v.shape[1] < 1:
            raise ValidationError("embedding dimension must be at least 1")

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


class ItemTable:
    """Id and url per corpus row, with O(log n) id-to-row lookup."""

    def __init__(self, ids, urls):
        ids = _as_u64_ids(ids)
        urls = list(urls)
        if len(ids) != len(urls):
            raise ValidationError(f"{len(ids)} ids but {len(urls)} urls")
        for u in urls:
            if not isinstance(u, str) or not u:
                raise ValidationError("every url must be a non-empty string")
        if len(np.unique(ids)) != len(ids):
            raise ValidationError("duplicate item ids")
        if len(set(urls)) != len(urls):
            raise ValidationError("duplicate item urls")
        self.ids = ids
        self.urls = urls
        self._order = np.argsort(ids, kind="stable")
        self._sorted_ids = ids[self._order]

    def __len__(self) -> int:
        return len(self.ids)

    def rows_for_ids(self, ids) -> np.ndarray:
        """Map item ids to row indices; unknown ids raise ValidationError."""
        ids = _as_u64_ids(ids)
        if len(ids) == 0:
            return np.empty(0, dtype=np.intp)
        if len(self) == 0:
            raise ValidationError(f"unknown item ids (first: {ids[:5].tolist()})")
        pos = np.minimum(np.searchsorted(self._sorted_ids, ids), len(self) - 1)
        found = self._sorted_ids[pos] == ids
        if not found.all():
            raise ValidationError(f"unknown item ids (first: {ids[~found][:5].tolist()})")
        return self._order[pos]

    def contains(self, ids) -> np.ndarray:
        """Boolean mask of which ids exist in the table."""
        ids = _as_u64_ids(ids)
        if len(self) == 0:
            return np.zeros(len(ids), dtype=bool)
        pos = np.clip(np.searchsorted(self._sorted_ids, ids), 0, len(self) - 1)
        return self._sorted_ids[pos] == ids

    def url_for_id(self, item_id: int) -> str:
        row = int(self.rows_for_ids(np.asarray([item_id], dtype=np.uint64))[0])
        return self.urls[row]


@dataclass(frozen=True)
class Corpus:
    """An embedding matrix with its aligned item table."""

    matrix: EmbeddingMatrix
    items: ItemTable

    def __post_init__(self):
        if self.matrix.count != len(self.items):
            raise ValidationError(
                f"matrix has {self.matrix.count} rows but table has {len(self.items)} items"
            )

    @property
    def count(self) -> int:
        return self.matrix.count

    @property
    def dim(self) -> int:
        return self.matrix.dim


def write_vectors(path, matrix: EmbeddingMatrix) -> None:
    """Write a matrix to the binary vector format."""
    v = matrix.vectors
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(np.uint32(EMBED_FORMAT_VERSION).tobytes())
        fh.write(np.uint32(v.shape[1]).tobytes())
        fh.write(np.uint64(v.shape[0]).tobytes())
        for start in range(0, v.shape[0], CHUNK_ROWS):
            fh.write(np.ascontiguousarray(v[start:start + CHUNK_ROWS], dtype="<f4").tobytes())


def write_items(path, items: ItemTable) -> None:
    """Write the id/url table as JSONL, one object per row."""
    with open(path, "w", encoding="utf-8") as fh:
        for item_id, url in zip(items.ids.tolist(), items.urls):
            fh.write(json.dumps({"id": item_id, "url": url}, ensure_ascii=False))
            fh.write("\n")


def write_corpus(vectors_path, items_path, corpus: Corpus) -> None:
    write_vectors(vectors_path, corpus.matrix)
    write_items(items_path, corpus.items)


def read_items(path) -> ItemTable:
    """Parse an id/url JSONL table."""
    ids: list[int] = []
    urls: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if not isinstance(obj, dict) or "id" not in obj or "url" not in obj:
                raise FormatError(f"{path}:{lineno}: expected object with id and url")
            item_id, url = obj["id"], obj["url"]
            if not isinstance(item_id, int) or isinstance(item_id, bool):
                raise FormatError(f"{path}:{lineno}: id must be an integer")
            if item_id < 0 or item_id > 0xFFFFFFFFFFFFFFFF:
                raise FormatError(f"{path}:{lineno}: id out of unsigned 64-bit range")
            if not isinstance(url, str):
                raise FormatError(f"{path}:{lineno}: url must be a string")
            ids.append(item_id)
            urls.append(url)
    try:
        return ItemTable(np.asarray(ids, dtype=np.uint64), urls)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def read_vectors(path) -> EmbeddingMatrix:
    """Read the binary vector format, streaming in chunks and validating.

    Raises FormatError for a bad magic, unsupported version, truncated
    payload, or trailing bytes, and ValidationError when any value is
    NaN or infinite.
    """
    file_size = os.path.getsize(path)
    with open(path, "rb") as fh:
        header = fh.read(_HEADER_SIZE)
        if len(header) < _HEADER_SIZE:
            raise FormatError(f"{path}: file shorter than the {_HEADER_SIZE}-byte header")
        if header[:4] != EMBED_MAGIC:
            raise FormatError(f"{path}: bad magic {header[:4]!r}, expected {EMBED_MAGIC!r}")
        version = int(np.frombuffer(header, dtype="<u4", count=1, offset=4)[0])
        if version != EMBED_FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        dim = int(np.frombuffer(header, dtype="<u4", count=1, offset=8)[0])
        count = int(np.frombuffer(header, dtype="<u8", count=1, offset=12)[0])
        if dim < 1:
            raise FormatError(f"{path}: dimension must be at least 1, got {dim}")
        expected = _HEADER_SIZE + count * dim * 4
        if file_size < expected:
            raise FormatError(f"{path}: truncated, expected {expected} bytes, found {file_size}")
        if file_size > expected:
            raise FormatError(f"{path}: {file_size - expected} trailing bytes after payload")

        vectors = np.empty((count, dim), dtype=np.float32)
        normalized = True
        for start in range(0, count, CHUNK_ROWS):
            n = min(CHUNK_ROWS, count - start)
            chunk = np.fromfile(fh, dtype="<f4", count=n * dim)
            if chunk.size != n * dim:
                raise FormatError(f"{path}: short read at row {start}")
            chunk = chunk.reshape(n, dim)
            finite_rows = np.isfinite(chunk).all(axis=1)
            if not finite_rows.all():
                bad = start + int(np.flatnonzero(~finite_rows)[0])
                raise ValidationError(f"{path}: non-finite value in row {bad}")
            if normalized:
                norms = np.linalg.norm(chunk.astype(np.float64), axis=1)
                if np.abs(norms - 1.0).max(initial=0.0) > NORM_TOLERANCE:
                    normalized = False
            vectors[start:start + n] = chunk
    if count == 0:
        normalized = False
    return EmbeddingMatrix(vectors=vectors, normalized=normalized)


def ingest(vectors_path, items_path) -> Corpus:
    """Load and validate a corpus from its two files."""
    matrix = read_vectors(vectors_path)
    items = read_items(items_path)
    return Corpus(matrix=matrix, items=items)


def normalize(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Return a copy with unit-length rows; zero rows are an error."""
    v = matrix.vectors
    out = np.empty_like(v)
    for start in range(0, v.shape[0], CHUNK_ROWS):
        chunk = v[start:start + CHUNK_ROWS].astype(np.float64)
        norms = np.linalg.norm(chunk, axis=1)
        zero = norms == 0.0
        if zero.any():
            raise ValidationError(f"zero-norm row at index {start + int(np.flatnonzero(zero)[0])}")
        out[start:start + CHUNK_ROWS] = (chunk / norms[:, None]).astype(np.float32)
    return EmbeddingMatrix(vectors=out, normalized=True)


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint train/test id sets covering a corpus."""

    train_ids: np.ndarray
    test_ids: np.ndarray
    seed: int
    train_fraction: float

    def __post_init__(self):
        object.__setattr__(self, "train_ids", np.sort(_as_u64_ids(self.train_ids)))
        object.__setattr__(self, "test_ids", np.sort(_as_u64_ids(self.test_ids)))


def split(ids, seed: int, train_fraction: float = 0.5) -> SplitAssignment:
    """Deterministically partition ids into train and test sets.

    The same ids (in any order), seed, and fraction always produce the
    same assignment.
    """
    if not (0.0 <= train_fraction <= 1.0):
        raise ValidationError(f"train_fraction must be in [0, 1], got {train_fraction}")
    ids = np.sort(_as_u64_ids(ids))
    if len(np.unique(ids)) != len(ids):
        raise ValidationError("duplicate ids passed to split")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x5B17)))
    perm = rng.permutation(len(ids))
    n_train = int(round(train_fraction * len(ids)))
    return SplitAssignment(
        train_ids=ids[perm[:n_train]],
        test_ids=ids[perm[n_train:]],
        seed=int(seed),
        train_fraction=float(train_fraction),
    )


def subset(corpus: Corpus, ids) -> Corpus:
    """A new corpus containing only ``ids``, preserving original row order."""
    ids = _as_u64_ids(ids)
    mask = corpus.items.contains(ids)
    if not mask.all():
        raise ValidationError(f"subset ids not in corpus (first: {ids[~mask][:5].tolist()})")
    keep = np.zeros(corpus.count, dtype=bool)
    keep[corpus.items.rows_for_ids(ids)] = True
    rows = np.flatnonzero(keep)
    matrix = EmbeddingMatrix(
        vectors=np.ascontiguousarray(corpus.matrix.vectors[rows]),
        normalized=corpus.matrix.normalized,
    )
    items = ItemTable(corpus.items.ids[rows], [corpus.items.urls[r] for r in rows])
    return Corpus(matrix=matrix, items=items)
