"""Evaluation: hash-stratified eval sets and threshold-free metrics.

Eval sets are built per model by bucketing its scores into ten strata
([0.0, 0.1) through [0.9, 1.0]) and keeping, per stratum, the items whose
SipHash-2-4 of the url is lowest. The hash gives a uniform, keyed,
platform-independent subsample, so every model contributes comparable
items and reruns pick the same ones. Selections are merged across models
and deduplicated by item id.

Metrics treat scores as a ranking. Average precision sums precision at
the end of each tied-score block weighted by the recall gained in that
block; ROC AUC is the Mann-Whitney statistic with average ranks for ties.
Both are undefined (None) when only one class is present. F1 is 0 by
convention when there are no predicted positives or no true positives.
"""

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from agilem import kernels
from agilem.concept_head import MlpModel
from agilem.embed_store import Corpus
from agilem.errors import FormatError, ValidationError

N_STRATA = 10
PER_STRATUM_DEFAULT = 20
# Fixed key so independently built eval sets agree byte for byte unless a
# caller deliberately re-keys.
DEFAULT_HASH_KEY = b"agilem.eval.v1.."

assert len(DEFAULT_HASH_KEY) == 16


def stratum_of(scores) -> np.ndarray:
    """Stratum index per score: floor(10 * s), with s = 1.0 folded into 9."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size and (not np.isfinite(s).all() or s.min() < 0.0 or s.max() > 1.0):
        raise ValidationError("scores must be finite and within [0, 1]")
    return np.minimum((s * N_STRATA).astype(np.int64), N_STRATA - 1)


@dataclass(frozen=True)
class EvalEntry:
    """One item picked for rating: where it came from and why."""

    id: int
    url: str
    stratum: int
    model: int       # position of the first model whose selection included it
    hash_hex: str    # SipHash-2-4 of the url under the set's key

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "url": self.url,
            "stratum": self.stratum,
            "model": self.model,
            "hash": self.hash_hex,
        }


@dataclass(frozen=True)
class EvalSet:
    entries: tuple
    per_stratum: int
    key_hex: str
    model_count: int

    def ids(self) -> np.ndarray:
        return np.asarray([e.id for e in self.entries], dtype=np.uint64)

    def to_jsonl_bytes(self) -> bytes:
        """Canonical serialization; byte-identical for identical inputs."""
        lines = [
            json.dumps(
                {
                    "per_stratum": self.per_stratum,
                    "key": self.key_hex,
                    "models": self.model_count,
                    "entries": len(self.entries),
                },
                sort_keys=True,
                separators=(",", ":"),
            )
        ]
        for e in self.entries:
            lines.append(json.dumps(e.to_json(), sort_keys=True, separators=(",", ":")))
        return ("\n".join(lines) + "\n").encode("utf-8")

    def write(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_jsonl_bytes())


def read_eval_set(path) -> EvalSet:
    with open(path, "rb") as fh:
        lines = fh.read().decode("utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty eval set file")
    try:
        head = json.loads(lines[0])
        entries = []
        for line in lines[1:]:
            obj = json.loads(line)
            entries.append(
                EvalEntry(
                    id=int(obj["id"]),
                    url=obj["url"],
                    stratum=int(obj["stratum"]),
                    model=int(obj["model"]),
                    hash_hex=obj["hash"],
                )
            )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed eval set ({exc})") from exc
    if len(entries) != int(head.get("entries", -1)):
        raise FormatError(f"{path}: header count does not match entry lines")
    return EvalSet(
        entries=tuple(entries),
        per_stratum=int(head["per_stratum"]),
        key_hex=head["key"],
        model_count=int(head["models"]),
    )


def build_eval_set(models: Sequence[MlpModel], corpus: Corpus,
                   per_stratum: int = PER_STRATUM_DEFAULT,
                   key: bytes = DEFAULT_HASH_KEY) -> EvalSet:
    """Select rating candidates so each model is represented in every stratum.

    For each model in order: score the corpus, bucket into strata, keep the
    ``per_stratum`` items with the lowest keyed url hash per stratum (all of
    them if the stratum is smaller). Merge, dropping ids an earlier model
    already contributed.
    """
    from agilem.active_learner import score_corpus

    if len(key) != 16:
        raise ValidationError("hash key must be exactly 16 bytes")
    if per_stratum < 1:
        raise ValidationError("per_stratum must be at least 1")
    if not models:
        raise ValidationError("at least one model is required")
    if corpus.count == 0:
        raise ValidationError("cannot build an eval set over an empty corpus")

    hashes = kernels.siphash64_many(key, [u.encode("utf-8") for u in corpus.items.urls])
    ids = corpus.items.ids
    seen: set = set()
    entries: list = []
    for m_pos, model in enumerate(models):
        _, probs = score_corpus(model, corpus)
        strata = stratum_of(probs)
        for s in range(N_STRATA):
            member = np.flatnonzero(strata == s)
            if len(member) == 0:
                continue
            order = member[np.lexsort((ids[member], hashes[member]))][:per_stratum]
            for row in order:
                item_id = int(ids[row])
                if item_id in seen:
                    continue
                seen.add(item_id)
                entries.append(
                    EvalEntry(
                        id=item_id,
                        url=corpus.items.urls[row],
                        stratum=s,
                        model=m_pos,
                        hash_hex=f"{int(hashes[row]):016x}",
                    )
                )
    return EvalSet(
        entries=tuple(entries),
        per_stratum=per_stratum,
        key_hex=key.hex(),
        model_count=len(models),
    )


def _check_labels_scores(labels, scores):
    y = np.asarray(labels)
    if y.dtype != np.bool_:
        if not np.issubdtype(y.dtype, np.integer):
            raise ValidationError("labels must be booleans or 0/1 integers")
        if y.size and not np.isin(y, (0, 1)).all():
            raise ValidationError("integer labels must be 0 or 1")
        y = y.astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    if y.ndim != 1 or s.shape != y.shape:
        raise ValidationError("labels and scores must be aligned 1-d arrays")
    if y.size == 0:
        raise ValidationError("metrics need at least one example")
    if not np.isfinite(s).all():
        raise ValidationError("scores must be finite")
    return y, s


def auc_pr(labels, scores) -> Optional[float]:
    """Average precision over the score ranking; None for single-class input.

    Tied scores are handled as blocks: each block contributes the precision
    at its end times the recall it adds, so permuting items within a tie
    cannot change the result.
    """
    y, s = _check_labels_scores(labels, scores)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        return None
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # End position of each tied block in the descending order.
    block_end = np.flatnonzero(np.diff(s_sorted) != 0.0)
    block_end = np.append(block_end, len(s_sorted) - 1)
    tp = np.cumsum(y_sorted)[block_end].astype(np.float64)
    total = block_end + 1.0
    prev_tp = np.concatenate(([0.0], tp[:-1]))
    delta_recall = (tp - prev_tp) / n_pos
    precision = tp / total
    return float(np.sum(delta_recall * precision))


def auc_roc(labels, scores) -> Optional[float]:
    """P(score of random positive > random negative), ties counted half.

    Computed from average ranks (Mann-Whitney U); None for single-class
    input.
    """
    y, s = _check_labels_scores(labels, scores)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s), dtype=np.float64)
    s_sorted = s[order]
    # Average rank within each tied block, 1-based.
    boundaries = np.concatenate(([0], np.flatnonzero(np.diff(s_sorted) != 0.0) + 1, [len(s)]))
    for b in range(len(boundaries) - 1):
        lo, hi = boundaries[b], boundaries[b + 1]
        ranks[order[lo:hi]] = 0.5 * (lo + 1 + hi)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1_accuracy(labels, scores, threshold: float):
    """(f1, accuracy) after thresholding scores at ``threshold`` (>= is positive)."""
    y, s = _check_labels_scores(labels, scores)
    pred = s >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    if tp == 0:
        f1 = 0.0
    else:
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        f1 = 2.0 * precision * recall / (precision + recall)
    accuracy = float(np.mean(pred == y))
    return f1, accuracy


@dataclass(frozen=True)
class MetricReport:
    """One model's quality on one labeled set."""

    auc_pr: Optional[float]
    auc_roc: Optional[float]
    f1: float
    accuracy: float
    threshold: float
    n_pos: int
    n_neg: int

    def to_json(self) -> dict:
        return {
            "auc_pr": self.auc_pr,
            "auc_roc": self.auc_roc,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "threshold": self.threshold,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MetricReport":
        return cls(
            auc_pr=obj["auc_pr"],
            auc_roc=obj["auc_roc"],
            f1=obj["f1"],
            accuracy=obj["accuracy"],
            threshold=obj["threshold"],
            n_pos=obj["n_pos"],
            n_neg=obj["n_neg"],
        )


def compute_metrics(labels, scores, threshold: float) -> MetricReport:
    """All metrics in one report; ranking metrics are None for one class."""
    y, s = _check_labels_scores(labels, scores)
    f1, accuracy = f1_accuracy(y, s, threshold)
    return MetricReport(
        auc_pr=auc_pr(y, s),
        auc_roc=auc_roc(y, s),
        f1=f1,
        accuracy=accuracy,
        threshold=float(threshold),
        n_pos=int(y.sum()),
        n_neg=int(len(y) - y.sum()),
    )


@dataclass(frozen=True)
class DifficultySplit:
    hard: tuple
    easy: tuple


def concept_difficulty(named_scores) -> DifficultySplit:
    """Split concepts into hard and easy halves by zero-shot ranking quality.

    Sorts by (score, name) ascending; the first ceil(n/2) concepts are the
    hard half. Odd counts put the extra concept on the hard side.
    """
    items = list(named_scores)
    if not items:
        raise ValidationError("need at least one concept")
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise ValidationError("concept names must be unique")
    for n, v in items:
        if not isinstance(n, str) or not n:
            raise ValidationError("concept names must be non-empty strings")
        if not np.isfinite(v):
            raise ValidationError(f"score for {n!r} is not finite")
    ranked = sorted(items, key=lambda kv: (kv[1], kv[0]))
    cut = (len(ranked) + 1) // 2
    return DifficultySplit(
        hard=tuple(n for n, _ in ranked[:cut]),
        easy=tuple(n for n, _ in ranked[cut:]),
    )
