"""The labeling session: concept definition through repeated rating rounds.

Phase machine:

    defining --expand--> rating --resolve--> training --train--> selecting
                            ^                                        |
                            +----------------select------------------+

Training at the final configured round moves to ``done`` instead of
``selecting``. Every rating lands in an append-only ledger of raw votes;
an item's label is the majority of its votes once every pending item has
the required (odd) number.

Determinism: all randomness is derived from (config seed, purpose, round)
at the point of use, never carried between operations. A session saved
after any phase transition and reloaded therefore continues exactly as the
uninterrupted run would have, including its metrics file.
"""

import csv
import io
import json
import os
import re
import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from agilem import ann_index, eval_kit
from agilem.active_learner import STRATEGIES, score_corpus, select_batch
from agilem.concept_head import (
    ACTIVE_HIDDEN,
    INITIAL_HIDDEN,
    MlpConfig,
    MlpModel,
    assemble_pool,
    load_model,
    save_model,
    train,
    zero_shot_scores,
    zero_shot_threshold,
)
from agilem.embed_store import Corpus
from agilem.errors import (
    CorpusExhaustedError,
    FormatError,
    LedgerError,
    PhaseError,
    ValidationError,
)

PHASES = ("defining", "rating", "training", "selecting", "done")
LABELS = ("positive", "negative")

SESSION_FORMAT = "agilem-session"
SESSION_VERSION = 1

# Purpose codes for seed derivation; string tags would work but ints keep
# the SeedSequence entropy tuples compact.
_TAGS = {"expand": 1, "pool": 2, "train": 3, "select": 4, "oracle": 5, "split": 6}


def derive_seed(root_seed: int, tag: str, round_index: int) -> int:
    """A stable child seed for one purpose in one round."""
    seq = np.random.SeedSequence((int(root_seed), _TAGS[tag], int(round_index)))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def derive_rng(root_seed: int, tag: str, round_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((int(root_seed), _TAGS[tag], int(round_index)))
    )


class DeterministicClock:
    """Monotone fake time for reproducible ledgers."""

    def __init__(self, start: float = 1_700_000_000.0, next_tick: int = 0):
        self.start = float(start)
        self.next_tick = int(next_tick)

    def __call__(self) -> float:
        t = self.start + float(self.next_tick)
        self.next_tick += 1
        return t


@dataclass(frozen=True)
class ConceptSpec:
    """A named concept with embedded positive and negative phrases."""

    name: str
    positive_phrases: tuple
    negative_phrases: tuple
    embeddings: dict  # phrase -> float64 vector

    @classmethod
    def create(cls, name: str, positive_phrases=(), negative_phrases=(),
               embeddings: Optional[Mapping] = None, embedder=None) -> "ConceptSpec":
        """Normalize phrases and attach embeddings.

        The concept name always leads the positive phrases. ``embedder``
        (phrase -> vector) fills in any phrase missing from ``embeddings``.
        """
        if not isinstance(name, str) or not name.strip():
            raise ValidationError("concept name must be a non-empty string")
        name = name.strip()
        pos = [name]
        for p in positive_phrases:
            p = p.strip()
            if not p:
                raise ValidationError("phrases must be non-empty strings")
            if p not in pos:
                pos.append(p)
        neg = []
        for p in negative_phrases:
            p = p.strip()
            if not p:
                raise ValidationError("phrases must be non-empty strings")
            if p in pos:
                raise ValidationError(f"phrase {p!r} is both positive and negative")
            if p not in neg:
                neg.append(p)
        vecs = {}
        for phrase in pos + neg:
            if embeddings is not None and phrase in embeddings:
                v = np.asarray(embeddings[phrase], dtype=np.float64)
            elif embedder is not None:
                v = np.asarray(embedder(phrase), dtype=np.float64)
            else:
                raise ValidationError(f"no embedding available for phrase {phrase!r}")
            if v.ndim != 1 or not np.isfinite(v).all() or np.linalg.norm(v) == 0.0:
                raise ValidationError(f"embedding for {phrase!r} must be a finite non-zero vector")
            vecs[phrase] = v / np.linalg.norm(v)
        dims = {v.shape[0] for v in vecs.values()}
        if len(dims) != 1:
            raise ValidationError(f"phrase embeddings disagree on dimension: {sorted(dims)}")
        return cls(
            name=name,
            positive_phrases=tuple(pos),
            negative_phrases=tuple(neg),
            embeddings=vecs,
        )

    @property
    def all_phrases(self) -> tuple:
        return self.positive_phrases + self.negative_phrases

    @property
    def dim(self) -> int:
        return next(iter(self.embeddings.values())).shape[0]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "positive_phrases": list(self.positive_phrases),
            "negative_phrases": list(self.negative_phrases),
            "embeddings": {k: v.tolist() for k, v in self.embeddings.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ConceptSpec":
        return cls(
            name=obj["name"],
            positive_phrases=tuple(obj["positive_phrases"]),
            negative_phrases=tuple(obj["negative_phrases"]),
            embeddings={k: np.asarray(v, dtype=np.float64)
                        for k, v in obj["embeddings"].items()},
        )


@dataclass(frozen=True)
class SessionConfig:
    """Loop parameters for one session."""

    rounds: int = 5
    batch_size: int = 100
    strategy: str = "margin"
    embedding_family: str = "clip-like"
    seed: int = 0
    votes_required: int = 1
    expansion_per_phrase: int = 100
    expansion_sample: int = 100
    mlp: MlpConfig = field(default_factory=MlpConfig)

    def __post_init__(self):
        if self.rounds < 0:
            raise ValidationError("rounds must be non-negative")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"strategy must be one of {STRATEGIES}")
        zero_shot_threshold(self.embedding_family)  # validates the family name
        if self.votes_required < 1 or self.votes_required % 2 == 0:
            raise ValidationError("votes_required must be a positive odd number")
        if self.expansion_per_phrase < 1 or self.expansion_sample < 1:
            raise ValidationError("expansion sizes must be at least 1")

    def to_json(self) -> dict:
        return {
            "rounds": self.rounds,
            "batch_size": self.batch_size,
            "strategy": self.strategy,
            "embedding_family": self.embedding_family,
            "seed": self.seed,
            "votes_required": self.votes_required,
            "expansion_per_phrase": self.expansion_per_phrase,
            "expansion_sample": self.expansion_sample,
            "mlp": self.mlp.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SessionConfig":
        kwargs = dict(obj)
        kwargs["mlp"] = MlpConfig.from_json(obj["mlp"])
        return cls(**kwargs)


@dataclass(frozen=True)
class LabelRecord:
    """One raw vote, exactly as received; never rewritten."""

    item_id: int
    label: str
    rater_id: str
    round_index: int
    timestamp: float

    def to_json(self) -> dict:
        return {
            "item_id": self.item_id,
            "label": self.label,
            "rater_id": self.rater_id,
            "round": self.round_index,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LabelRecord":
        return cls(
            item_id=int(obj["item_id"]),
            label=obj["label"],
            rater_id=obj["rater_id"],
            round_index=int(obj["round"]),
            timestamp=float(obj["timestamp"]),
        )


@dataclass(frozen=True)
class OracleBinding:
    """A simulated rater pool answering from ground truth."""

    truth: Mapping
    noise_rate: float = 0.0
    votes_required: Optional[int] = None  # None: use the session's setting

    def __post_init__(self):
        if not (0.0 <= self.noise_rate < 0.5):
            raise ValidationError("noise_rate must be in [0, 0.5)")
        if self.votes_required is not None and (
            self.votes_required < 1 or self.votes_required % 2 == 0
        ):
            raise ValidationError("votes_required must be a positive odd number")


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-") or "concept"


class Session:
    """One concept's labeling loop, from definition to a trained head."""

    def __init__(self, concept: ConceptSpec, config: SessionConfig,
                 session_id: Optional[str] = None, clock=None):
        self.concept = concept
        self.config = config
        self.session_id = session_id or f"{_slug(concept.name)}-{config.seed}"
        self.clock = clock if clock is not None else time.time
        self.phase = "defining"
        self.round_index = 0
        self.pending: list = []
        self.ledger: list = []
        self.resolved: dict = {}
        self.models: dict = {}
        self.metrics_rows: list = []
        self.clamp_events: list = []
        self.votes_required = config.votes_required
        self.last_error: Optional[str] = None

    # -- helpers ---------------------------------------------------------

    def _require_phase(self, *allowed: str) -> None:
        if self.phase not in allowed:
            raise PhaseError(
                f"operation requires phase {' or '.join(allowed)}, session is in {self.phase}",
                phase=self.phase,
            )

    def latest_model(self) -> MlpModel:
        if not self.models:
            raise ValidationError("no model has been trained yet")
        return self.models[max(self.models)]

    def labeled_ids(self) -> np.ndarray:
        return np.asarray(sorted({r.item_id for r in self.ledger}), dtype=np.uint64)

    # -- phase operations --------------------------------------------------

    def expand(self, index) -> list:
        """Seed the first batch with neighbors of every concept phrase."""
        self._require_phase("defining")
        union: dict = {}
        for phrase in self.concept.all_phrases:
            vec = self.concept.embeddings[phrase]
            for n in ann_index.top_k(index, vec, self.config.expansion_per_phrase):
                union.setdefault(n.id, None)
        candidates = np.asarray(sorted(union), dtype=np.uint64)
        rng = derive_rng(self.config.seed, "expand", 0)
        take = min(self.config.expansion_sample, len(candidates))
        if take < self.config.expansion_sample:
            self.clamp_events.append(
                f"expansion produced {len(candidates)} candidates, "
                f"wanted {self.config.expansion_sample}"
            )
        chosen = candidates[rng.choice(len(candidates), size=take, replace=False)]
        self.pending = sorted(int(i) for i in chosen)
        self.round_index = 0
        self.phase = "rating"
        return list(self.pending)

    def submit_ratings(self, votes) -> bool:
        """Record raw votes; returns True when the batch resolved.

        ``votes`` is an iterable of (item_id, label, rater_id). Items must
        be in the pending batch; a rater votes at most once per item per
        round. The batch resolves once every pending item has the required
        number of votes; each item's label is the majority of its votes.
        """
        self._require_phase("rating")
        pending = set(self.pending)
        cast = {(r.item_id, r.rater_id) for r in self.ledger
                if r.round_index == self.round_index}
        staged = []
        for item_id, label, rater_id in votes:
            item_id = int(item_id)
            if label not in LABELS:
                raise LedgerError(f"label must be one of {LABELS}, got {label!r}")
            if not isinstance(rater_id, str) or not rater_id:
                raise LedgerError("rater_id must be a non-empty string")
            if item_id not in pending:
                raise LedgerError(f"item {item_id} is not in the pending batch")
            if (item_id, rater_id) in cast:
                raise LedgerError(
                    f"rater {rater_id!r} already voted on item {item_id} this round"
                )
            cast.add((item_id, rater_id))
            staged.append(LabelRecord(
                item_id=item_id,
                label=label,
                rater_id=rater_id,
                round_index=self.round_index,
                timestamp=float(self.clock()),
            ))
        self.ledger.extend(staged)
        return self._try_resolve()

    def _try_resolve(self) -> bool:
        votes: dict = {i: [] for i in self.pending}
        for r in self.ledger:
            if r.round_index == self.round_index and r.item_id in votes:
                votes[r.item_id].append(r.label)
        if any(len(v) < self.votes_required for v in votes.values()):
            return False
        for item_id in self.pending:
            pos = sum(1 for v in votes[item_id] if v == "positive")
            neg = len(votes[item_id]) - pos
            if pos == neg:
                raise LedgerError(f"tied vote on item {item_id}")
            self.resolved[item_id] = pos > neg
        self.pending = []
        self.phase = "training"
        return True

    def run_training(self, corpus: Corpus, eval_corpus: Optional[Corpus] = None,
                     eval_truth: Optional[Mapping] = None) -> MlpModel:
        """Train this round's head on every resolved label."""
        self._require_phase("training")
        if not any(self.resolved.values()) or all(self.resolved.values()):
            raise LedgerError("training requires at least one positive and one negative label")
        hidden = INITIAL_HIDDEN if self.round_index == 0 else ACTIVE_HIDDEN
        cfg = replace(
            self.config.mlp,
            hidden_layers=hidden,
            seed=derive_seed(self.config.seed, "train", self.round_index),
        )
        pool = assemble_pool(
            self.resolved, corpus,
            seed=derive_seed(self.config.seed, "pool", self.round_index),
            random_negative_count=cfg.random_negative_count,
        )
        if pool.random_clamped:
            self.clamp_events.append(
                f"round {self.round_index}: random negatives clamped to "
                f"{len(pool.random_negatives)}"
            )
        model = train(cfg, pool, corpus, round_index=self.round_index)
        self.models[self.round_index] = model
        if eval_corpus is not None and eval_truth is not None:
            self.metrics_rows.append(self._eval_row(model, eval_corpus, eval_truth))
        self.phase = "done" if self.round_index >= self.config.rounds else "selecting"
        return model

    def _eval_row(self, model: MlpModel, eval_corpus: Corpus, eval_truth: Mapping) -> dict:
        ids, probs = score_corpus(model, eval_corpus)
        try:
            labels = np.asarray([bool(eval_truth[int(i)]) for i in ids])
        except KeyError as exc:
            raise ValidationError(f"eval truth missing item {exc}") from exc
        report = eval_kit.compute_metrics(labels, probs, threshold=0.5)
        return {
            "round": self.round_index,
            "samples_rated": len(self.resolved),
            **report.to_json(),
        }

    def run_selection(self, corpus: Corpus, batch_size: Optional[int] = None,
                      strategy: Optional[str] = None) -> list:
        """Pick the next batch to rate with the current model."""
        self._require_phase("selecting")
        model = self.models[self.round_index]
        excluded = self.labeled_ids()
        ids, probs = score_corpus(model, corpus, excluded_ids=excluded)
        if len(ids) == 0:
            raise CorpusExhaustedError("no unrated items remain in the corpus")
        want = batch_size if batch_size is not None else self.config.batch_size
        batch = select_batch(
            strategy if strategy is not None else self.config.strategy,
            ids, probs, want,
            seed=derive_seed(self.config.seed, "select", self.round_index + 1),
        )
        if len(batch) < want:
            self.clamp_events.append(
                f"round {self.round_index + 1}: batch clamped to {len(batch)} of {want}"
            )
        self.pending = sorted(int(i) for i in batch)
        self.round_index += 1
        self.phase = "rating"
        return list(self.pending)

    # -- oracle-driven flows ----------------------------------------------

    def rate_with_oracle(self, binding: OracleBinding) -> None:
        """Have simulated raters vote on the whole pending batch."""
        self._require_phase("rating")
        votes_required = binding.votes_required or self.votes_required
        self.votes_required = votes_required
        rng = derive_rng(self.config.seed, "oracle", self.round_index)
        votes = []
        for voter in range(votes_required):
            rater_id = f"oracle-{voter}"
            for item_id in self.pending:
                if item_id not in binding.truth:
                    raise LedgerError(f"oracle truth does not cover item {item_id}")
                value = bool(binding.truth[item_id])
                if binding.noise_rate > 0.0 and rng.random() < binding.noise_rate:
                    value = not value
                votes.append((item_id, "positive" if value else "negative", rater_id))
        self.submit_ratings(votes)

    def run_crowd_round(self, corpus: Corpus, binding: OracleBinding,
                        batch_size: int = 500,
                        eval_corpus: Optional[Corpus] = None,
                        eval_truth: Optional[Mapping] = None) -> MlpModel:
        """One extra selection/rating/training cycle after the loop finished.

        Meant for a larger multi-voter batch: selection sizes the batch,
        every oracle voter rates every item, majority labels feed one more
        training pass.
        """
        self._require_phase("done")
        self.phase = "selecting"
        try:
            self.run_selection(corpus, batch_size=batch_size)
            self.rate_with_oracle(binding)
            return self.run_training(corpus, eval_corpus, eval_truth)
        finally:
            if self.phase == "selecting":
                self.phase = "done"  # selection failed; restore the terminal state

    def snapshot(self) -> dict:
        """A JSON-safe view of the session for APIs and CLIs."""
        n_pos = sum(1 for v in self.resolved.values() if v)
        return {
            "session_id": self.session_id,
            "phase": self.phase,
            "round": self.round_index,
            "concept": {
                "name": self.concept.name,
                "positive_phrases": list(self.concept.positive_phrases),
                "negative_phrases": list(self.concept.negative_phrases),
            },
            "config": self.config.to_json(),
            "pending_count": len(self.pending),
            "ledger_records": len(self.ledger),
            "resolved_labels": len(self.resolved),
            "resolved_positive": n_pos,
            "resolved_negative": len(self.resolved) - n_pos,
            "trained_rounds": sorted(self.models),
            "votes_required": self.votes_required,
            "clamp_events": list(self.clamp_events),
            "metrics": [dict(r) for r in self.metrics_rows],
            "last_error": self.last_error,
        }


# -- persistence -----------------------------------------------------------

_METRIC_COLUMNS = (
    "round", "samples_rated", "auc_pr", "auc_roc", "f1",
    "accuracy", "threshold", "n_pos", "n_neg",
)


def metrics_csv_bytes(rows) -> bytes:
    """Render metric rows to CSV; None becomes an empty cell."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_METRIC_COLUMNS)
    for row in rows:
        writer.writerow([
            "" if row.get(col) is None else repr(row[col]) if isinstance(row[col], float)
            else row[col]
            for col in _METRIC_COLUMNS
        ])
    return buf.getvalue().encode("utf-8")


def save_session(session: Session, dirpath) -> None:
    """Write the session directory: state, ledger, checkpoints, metrics."""
    os.makedirs(os.path.join(dirpath, "checkpoints"), exist_ok=True)
    clock_state = None
    if isinstance(session.clock, DeterministicClock):
        clock_state = {"start": session.clock.start, "next_tick": session.clock.next_tick}
    state = {
        "format": SESSION_FORMAT,
        "version": SESSION_VERSION,
        "session_id": session.session_id,
        "phase": session.phase,
        "round": session.round_index,
        "pending": list(session.pending),
        "resolved": [[int(k), bool(v)] for k, v in sorted(session.resolved.items())],
        "votes_required": session.votes_required,
        "clamp_events": list(session.clamp_events),
        "metrics": session.metrics_rows,
        "concept": session.concept.to_json(),
        "config": session.config.to_json(),
        "clock": clock_state,
        "last_error": session.last_error,
    }
    with open(os.path.join(dirpath, "session.json"), "w", encoding="utf-8") as fh:
        json.dump(state, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(dirpath, "ledger.jsonl"), "w", encoding="utf-8") as fh:
        for record in session.ledger:
            fh.write(json.dumps(record.to_json(), sort_keys=True))
            fh.write("\n")
    for round_index, model in session.models.items():
        save_model(
            os.path.join(dirpath, "checkpoints", f"round-{round_index}.bin"), model
        )
    with open(os.path.join(dirpath, "metrics.csv"), "wb") as fh:
        fh.write(metrics_csv_bytes(session.metrics_rows))


def load_session(dirpath) -> Session:
    """Rebuild a session from its directory."""
    path = os.path.join(dirpath, "session.json")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            state = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid session file ({exc})") from exc
    if state.get("format") != SESSION_FORMAT:
        raise FormatError(f"{path}: not a session file")
    if state.get("version") != SESSION_VERSION:
        raise FormatError(f"{path}: unsupported session version {state.get('version')}")

    clock = None
    if state.get("clock") is not None:
        clock = DeterministicClock(
            start=state["clock"]["start"], next_tick=state["clock"]["next_tick"]
        )
    session = Session(
        concept=ConceptSpec.from_json(state["concept"]),
        config=SessionConfig.from_json(state["config"]),
        session_id=state["session_id"],
        clock=clock,
    )
    session.phase = state["phase"]
    if session.phase not in PHASES:
        raise FormatError(f"{path}: unknown phase {session.phase!r}")
    session.round_index = int(state["round"])
    session.pending = [int(i) for i in state["pending"]]
    session.resolved = {int(k): bool(v) for k, v in state["resolved"]}
    session.votes_required = int(state["votes_required"])
    session.clamp_events = list(state["clamp_events"])
    session.metrics_rows = state["metrics"]
    session.last_error = state.get("last_error")

    ledger_path = os.path.join(dirpath, "ledger.jsonl")
    if os.path.exists(ledger_path):
        with open(ledger_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    session.ledger.append(LabelRecord.from_json(json.loads(line)))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise FormatError(f"{ledger_path}:{lineno}: bad record ({exc})") from exc

    ckpt_dir = os.path.join(dirpath, "checkpoints")
    if os.path.isdir(ckpt_dir):
        for name in sorted(os.listdir(ckpt_dir)):
            m = re.fullmatch(r"round-(\d+)\.bin", name)
            if m:
                session.models[int(m.group(1))] = load_model(os.path.join(ckpt_dir, name))
    return session


# -- end-to-end simulation ---------------------------------------------------

@dataclass
class SimulationResult:
    session: Session
    zero_shot: eval_kit.MetricReport

    @property
    def metrics_rows(self) -> list:
        return self.session.metrics_rows


def zero_shot_report(concept: ConceptSpec, corpus: Corpus, truth: Mapping,
                     embedding_family: str) -> eval_kit.MetricReport:
    """Metrics for ranking the corpus by cosine to the concept name phrase."""
    scores = zero_shot_scores(corpus, concept.embeddings[concept.name])
    labels = np.asarray([bool(truth[int(i)]) for i in corpus.items.ids])
    return eval_kit.compute_metrics(
        labels, scores, threshold=zero_shot_threshold(embedding_family)
    )


def simulate(corpus: Corpus, concept: ConceptSpec, config: SessionConfig,
             truth: Mapping, eval_corpus: Corpus, eval_truth: Mapping,
             index=None, noise_rate: float = 0.0,
             save_dir=None, resume_probe=None) -> SimulationResult:
    """Run a whole session against an oracle built from ground truth.

    ``truth`` must cover the working corpus; ``eval_corpus``/``eval_truth``
    are the held-out side. ``resume_probe`` is a test hook called after
    every phase transition with the live session; it may return a
    replacement session (for checkpoint/restore exercises).
    """
    binding = OracleBinding(truth=truth, noise_rate=noise_rate)
    session = Session(concept, config, clock=DeterministicClock())
    if index is None:
        index = ann_index.build_exact(corpus)

    def checkpoint(s: Session) -> Session:
        if resume_probe is not None:
            replacement = resume_probe(s)
            if replacement is not None:
                return replacement
        return s

    session.expand(index)
    session = checkpoint(session)
    while session.phase != "done":
        if session.phase == "rating":
            session.rate_with_oracle(binding)
        elif session.phase == "training":
            session.run_training(corpus, eval_corpus, eval_truth)
        elif session.phase == "selecting":
            session.run_selection(corpus)
        else:
            raise PhaseError(f"simulation cannot proceed from phase {session.phase}",
                             phase=session.phase)
        session = checkpoint(session)
    if save_dir is not None:
        save_session(session, save_dir)
    return SimulationResult(
        session=session,
        zero_shot=zero_shot_report(concept, eval_corpus, eval_truth,
                                   config.embedding_family),
    )
