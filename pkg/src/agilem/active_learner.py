"""Corpus scoring and batch selection for the labeling loop.

Scoring walks the corpus in fixed-size shards so the result is identical
whatever the worker count; selection strategies are pure functions of the
(id, probability) arrays, with every ranking tie broken by ascending id.
"""

import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from agilem import kernels
from agilem.concept_head import MlpModel, predict_probs
from agilem.embed_store import Corpus, _as_u64_ids
from agilem.errors import ValidationError

# Rows per scoring shard. Fixed: shard boundaries must not depend on the
# worker count, or parallel and serial runs could disagree.
SHARD_ROWS = 65536


def score_corpus(model: MlpModel, corpus: Corpus, excluded_ids=None, workers: int = 1):
    """P(concept) for every corpus item not in ``excluded_ids``.

    Returns (ids, probs): uint64 ids in corpus row order and float64
    probabilities. Excluded ids that are not in the corpus are ignored.
    """
    if model.input_dim != corpus.dim:
        raise ValidationError(f"model dim {model.input_dim} does not match corpus dim {corpus.dim}")
    if workers < 1:
        raise ValidationError("workers must be at least 1")
    excluded = np.unique(_as_u64_ids(excluded_ids if excluded_ids is not None else []))
    vectors = corpus.matrix.vectors
    all_ids = corpus.items.ids

    def shard(start: int):
        stop = min(start + SHARD_ROWS, corpus.count)
        ids = all_ids[start:stop]
        if len(excluded):
            pos = np.clip(np.searchsorted(excluded, ids), 0, len(excluded) - 1)
            keep = excluded[pos] != ids
            ids = ids[keep]
            x = vectors[start:stop][keep]
        else:
            x = vectors[start:stop]
        if len(ids) == 0:
            return ids, np.empty(0, dtype=np.float64)
        return ids, predict_probs(model, x)

    starts = range(0, corpus.count, SHARD_ROWS)
    if workers == 1:
        parts = [shard(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(shard, starts))
    if not parts:
        return np.empty(0, dtype=np.uint64), np.empty(0, dtype=np.float64)
    ids = np.concatenate([p[0] for p in parts])
    probs = np.concatenate([p[1] for p in parts])
    return ids, probs


def _check_pairs(ids, probs, batch_size: int):
    ids = _as_u64_ids(ids)
    probs = np.asarray(probs, dtype=np.float64)
    if ids.shape != probs.shape:
        raise ValidationError("ids and probs must be aligned 1-d arrays")
    if batch_size < 1:
        raise ValidationError(f"batch_size must be at least 1, got {batch_size}")
    if len(np.unique(ids)) != len(ids):
        raise ValidationError("duplicate ids in candidate set")
    return ids, probs


def select_margin(ids, probs, batch_size: int) -> np.ndarray:
    """The batch_size ids closest to the decision boundary.

    Margin is |2p - 1|; smallest first, ties by ascending id. Returns all
    candidates when fewer than batch_size remain.
    """
    ids, probs = _check_pairs(ids, probs, batch_size)
    margins = kernels.margin_from_probs(probs)
    order = np.lexsort((ids, margins))
    return ids[order[:batch_size]]


def select_margin_with_positives(ids, probs, batch_size: int) -> np.ndarray:
    """Half lowest-margin items, half likely positives.

    Takes ceil(b/2) by ascending margin, then floor(b/2) by descending
    probability, skipping items already chosen; any shortfall is filled by
    continuing down the margin ranking. Ties break by ascending id.
    """
    ids, probs = _check_pairs(ids, probs, batch_size)
    margins = kernels.margin_from_probs(probs)
    margin_order = np.lexsort((ids, margins))
    prob_order = np.lexsort((ids, -probs))
    want = min(batch_size, len(ids))
    n_margin = (batch_size + 1) // 2

    chosen: list = []
    taken = np.zeros(len(ids), dtype=bool)
    for i in margin_order[:n_margin]:
        chosen.append(i)
        taken[i] = True
    for i in prob_order:
        if len(chosen) >= want:
            break
        if not taken[i]:
            chosen.append(i)
            taken[i] = True
    for i in margin_order[n_margin:]:
        if len(chosen) >= want:
            break
        if not taken[i]:
            chosen.append(i)
            taken[i] = True
    return ids[np.asarray(chosen, dtype=np.intp)]


def select_random(ids, batch_size: int, seed: int) -> np.ndarray:
    """A uniform sample without replacement; the control strategy."""
    ids = _as_u64_ids(ids)
    if batch_size < 1:
        raise ValidationError(f"batch_size must be at least 1, got {batch_size}")
    if len(np.unique(ids)) != len(ids):
        raise ValidationError("duplicate ids in candidate set")
    ids = np.sort(ids)
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x5E1E)))
    n = min(batch_size, len(ids))
    return ids[rng.choice(len(ids), size=n, replace=False)]


STRATEGIES = ("margin", "margin_positive", "random")


def select_batch(strategy: str, ids, probs, batch_size: int, seed: int = 0) -> np.ndarray:
    """Dispatch to a selection strategy by name."""
    if strategy == "margin":
        return select_margin(ids, probs, batch_size)
    if strategy == "margin_positive":
        return select_margin_with_positives(ids, probs, batch_size)
    if strategy == "random":
        return select_random(ids, batch_size, seed)
    raise ValidationError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")


def write_scores_jsonl(path, ids, probs) -> None:
    """Dump (id, probability) pairs for offline inspection."""
    ids = _as_u64_ids(ids)
    probs = np.asarray(probs, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        for i, p in zip(ids.tolist(), probs.tolist()):
            fh.write(json.dumps({"id": i, "p": p}))
            fh.write("\n")
