"""Synthetic clustered corpora with a planted concept.

Rows are unit vectors drawn around cluster centers on the sphere. A few
centers belong to the planted concept (at varying angles to its direction,
so a single text phrase ranks them imperfectly), a few are hard negatives
sitting near the concept, and the rest are background. That shape gives
nearest-neighbor expansion something to find, leaves zero-shot scoring
mediocre, and rewards a trained head, which is the regime the labeling
loop is built for.

Phrase embeddings are synthesized too: known phrases map to their planted
directions, anything else gets a hash-seeded random unit vector, so any
phrase can be embedded deterministically without a real text tower.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from agilem import kernels
from agilem.embed_store import CHUNK_ROWS, Corpus, EmbeddingMatrix, ItemTable
from agilem.errors import FormatError, ValidationError

# Angles of planted centers to the concept direction, as cosines.
_POSITIVE_MODE_COS = (0.85, 0.65, 0.45)
_HARD_NEGATIVE_COS = (0.55, 0.40)
_ROW_NOISE = 0.25


@dataclass
class SyntheticTruth:
    """Ground truth and provenance for a generated corpus."""

    ids: np.ndarray            # uint64, row order
    labels: np.ndarray         # bool, row order
    cluster_of: np.ndarray     # int32 cluster index per row

    def as_dict(self) -> dict:
        return {int(i): bool(v) for i, v in zip(self.ids, self.labels)}

    @property
    def positive_rate(self) -> float:
        return float(self.labels.mean()) if len(self.labels) else 0.0


@dataclass
class SyntheticConcept:
    """The planted concept: phrases plus their embedding vectors."""

    name: str
    positive_phrases: list
    negative_phrases: list
    embeddings: dict = field(default_factory=dict)  # phrase -> float64 unit vector

    def vector(self, phrase: str) -> np.ndarray:
        if phrase not in self.embeddings:
            raise ValidationError(f"no embedding for phrase {phrase!r}")
        return self.embeddings[phrase]


def hash_phrase_vector(phrase: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit vector for an arbitrary phrase."""
    h = kernels.siphash64(b"agilem.phrase.v1", f"{seed}:{phrase}".encode("utf-8"))
    rng = np.random.default_rng(np.random.SeedSequence((int(h),)))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _tilted(direction: np.ndarray, cos_target: float, rng: np.random.Generator) -> np.ndarray:
    """A unit vector at the requested cosine to ``direction``."""
    g = rng.standard_normal(direction.shape[0])
    ortho = g - (g @ direction) * direction
    ortho = _unit(ortho)
    sin_target = float(np.sqrt(1.0 - cos_target * cos_target))
    return _unit(cos_target * direction + sin_target * ortho)


def generate(count: int, dim: int, seed: int, n_background: int = 48,
             positive_rate: float = 0.03, hard_negative_rate: float = None,
             concept_name: str = "planted concept"):
    """Build a corpus with a planted concept.

    Returns (corpus, concept, truth). Deterministic in all arguments.
    """
    if count < 1 or dim < 2:
        raise ValidationError("count must be >= 1 and dim >= 2")
    if not (0.0 < positive_rate < 1.0):
        raise ValidationError("positive_rate must be in (0, 1)")
    if n_background < 1:
        raise ValidationError("n_background must be at least 1")
    if hard_negative_rate is None:
        hard_negative_rate = min(2.0 * positive_rate, 0.25)
    if positive_rate + hard_negative_rate >= 1.0:
        raise ValidationError("positive and hard-negative rates must leave room for background")

    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x5F17)))
    direction = _unit(rng.standard_normal(dim))
    pos_centers = np.stack([_tilted(direction, c, rng) for c in _POSITIVE_MODE_COS])
    hard_centers = np.stack([_tilted(direction, c, rng) for c in _HARD_NEGATIVE_COS])
    bg_centers = rng.standard_normal((n_background, dim))
    bg_centers /= np.linalg.norm(bg_centers, axis=1, keepdims=True)

    # Cluster table: positives first, then hard negatives, then background.
    centers = np.concatenate([pos_centers, hard_centers, bg_centers])
    n_pos_modes = len(pos_centers)
    n_hard = len(hard_centers)

    vectors = np.empty((count, dim), dtype=np.float32)
    cluster_of = np.empty(count, dtype=np.int32)
    for start in range(0, count, CHUNK_ROWS):
        n = min(CHUNK_ROWS, count - start)
        u = rng.random(n)
        which = np.full(n, 2, dtype=np.int64)  # 0 pos, 1 hard, 2 background
        which[u < positive_rate + hard_negative_rate] = 1
        which[u < positive_rate] = 0
        cluster = np.empty(n, dtype=np.int64)
        for group, (lo, size) in enumerate(
            ((0, n_pos_modes), (n_pos_modes, n_hard), (n_pos_modes + n_hard, n_background))
        ):
            slots = np.flatnonzero(which == group)
            if len(slots):
                cluster[slots] = lo + rng.integers(0, size, size=len(slots))
        block = centers[cluster] + _ROW_NOISE * rng.standard_normal((n, dim))
        block /= np.linalg.norm(block, axis=1, keepdims=True)
        vectors[start:start + n] = block.astype(np.float32)
        cluster_of[start:start + n] = cluster

    labels = cluster_of < n_pos_modes
    ids = np.cumsum(rng.integers(1, 9, size=count, dtype=np.uint64), dtype=np.uint64)
    urls = [f"synthetic://{seed}/{row:09d}" for row in range(count)]

    corpus = Corpus(
        matrix=EmbeddingMatrix(vectors=vectors, normalized=True),
        items=ItemTable(ids, urls),
    )
    positive_phrases = [concept_name] + [
        f"{concept_name} variant {i + 1}" for i in range(1, n_pos_modes)
    ]
    negative_phrases = [f"not {concept_name} {i + 1}" for i in range(n_hard)]
    embeddings = {concept_name: direction.astype(np.float64)}
    for i, phrase in enumerate(positive_phrases[1:], start=1):
        embeddings[phrase] = pos_centers[i].astype(np.float64)
    for i, phrase in enumerate(negative_phrases):
        embeddings[phrase] = hard_centers[i].astype(np.float64)
    concept = SyntheticConcept(
        name=concept_name,
        positive_phrases=positive_phrases,
        negative_phrases=negative_phrases,
        embeddings=embeddings,
    )
    truth = SyntheticTruth(ids=ids, labels=labels, cluster_of=cluster_of)
    return corpus, concept, truth


def write_truth(path, truth: SyntheticTruth) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, v in zip(truth.ids.tolist(), truth.labels.tolist()):
            fh.write(json.dumps({"id": i, "label": bool(v)}))
            fh.write("\n")


def read_truth(path) -> dict:
    """Load a truth file as an id -> bool mapping."""
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out[int(obj["id"])] = bool(obj["label"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed truth line ({exc})") from exc
    return out


def write_concept(path, concept: SyntheticConcept) -> None:
    obj = {
        "name": concept.name,
        "positive_phrases": list(concept.positive_phrases),
        "negative_phrases": list(concept.negative_phrases),
        "embeddings": {k: np.asarray(v, dtype=np.float64).tolist()
                       for k, v in concept.embeddings.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_concept(path) -> SyntheticConcept:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid concept file ({exc})") from exc
    try:
        return SyntheticConcept(
            name=obj["name"],
            positive_phrases=list(obj["positive_phrases"]),
            negative_phrases=list(obj["negative_phrases"]),
            embeddings={k: np.asarray(v, dtype=np.float64)
                        for k, v in obj["embeddings"].items()},
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: concept file missing fields ({exc})") from exc
