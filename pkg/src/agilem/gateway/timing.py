"""Wall-clock probes for the two hot paths: scoring+selection and training.

The probe reports seconds against fixed budgets so regressions surface in
tests and in the CLI. Budgets assume a single CPU core; they are loose on
purpose and a measurement is only treated as a failure well beyond them.
"""

import time

import numpy as np

from agilem.active_learner import score_corpus, select_margin
from agilem.concept_head import ACTIVE_HIDDEN, MlpConfig, MlpModel, assemble_pool, train
from agilem.embed_store import Corpus

# Seconds allowed for scoring plus selecting one batch over a
# 1M x 512 corpus, and for one full training run whose sampled stream
# totals about 100k examples.
SCORE_SELECT_BUDGET_SECONDS = 30.0
TRAIN_BUDGET_SECONDS = 60.0


def _probe_model(dim: int, seed: int = 0) -> MlpModel:
    """A head with plausible random weights; quality is irrelevant here."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x7B0B)))
    dims = [dim, *ACTIVE_HIDDEN, 1]
    weights, biases = [], []
    for i in range(len(dims) - 1):
        bound = 1.0 / np.sqrt(dims[i])
        weights.append(rng.uniform(-bound, bound, size=(dims[i], dims[i + 1])).astype(np.float32))
        biases.append(np.zeros(dims[i + 1], dtype=np.float32))
    return MlpModel(
        input_dim=dim,
        hidden_layers=ACTIVE_HIDDEN,
        weights=weights,
        biases=biases,
        config=MlpConfig(hidden_layers=ACTIVE_HIDDEN),
    )


def timing_probe(corpus: Corpus = None, batch_size: int = 100,
                 train_examples: int = 100_000, seed: int = 0) -> dict:
    """Measure scoring, selection, and training on the given corpus.

    With no corpus (or an empty one) returns a zero-work report instead of
    failing, so automation can always call it.
    """
    report = {
        "corpus_count": 0 if corpus is None else corpus.count,
        "dim": 0 if corpus is None else corpus.dim,
        "batch_size": batch_size,
        "score_seconds": 0.0,
        "select_seconds": 0.0,
        "score_select_seconds": 0.0,
        "train_seconds": 0.0,
        "train_stream_examples": 0,
        "score_select_budget_seconds": SCORE_SELECT_BUDGET_SECONDS,
        "train_budget_seconds": TRAIN_BUDGET_SECONDS,
    }
    if corpus is None or corpus.count == 0:
        return report

    model = _probe_model(corpus.dim, seed)
    t0 = time.perf_counter()
    ids, probs = score_corpus(model, corpus)
    t1 = time.perf_counter()
    select_margin(ids, probs, batch_size)
    t2 = time.perf_counter()
    report["score_seconds"] = t1 - t0
    report["select_seconds"] = t2 - t1
    report["score_select_seconds"] = t2 - t0

    # Label a small slice arbitrarily; only throughput matters. The random
    # negative pool is sized so ten epochs stream ~train_examples examples.
    n_labeled = min(1000, max(2, corpus.count // 2))
    labeled_ids = corpus.items.ids[:n_labeled]
    labels = {int(i): bool(k < n_labeled // 2) for k, i in enumerate(labeled_ids)}
    if not any(labels.values()) or all(labels.values()):
        return report
    epochs = 10
    per_epoch = max(1, train_examples // epochs)
    cfg = MlpConfig(
        hidden_layers=ACTIVE_HIDDEN,
        seed=seed,
        random_negative_count=max(1, per_epoch // 4),
        min_epoch_examples=per_epoch,
        epochs=epochs,
    )
    pool = assemble_pool(labels, corpus, seed=seed, random_negative_count=cfg.random_negative_count)
    t3 = time.perf_counter()
    trained = train(cfg, pool, corpus)
    t4 = time.perf_counter()
    report["train_seconds"] = t4 - t3
    report["train_stream_examples"] = per_epoch * epochs
    report["train_epoch_losses"] = [float(x) for x in trained.loss_per_epoch]
    return report
