"""Session phase machine, voting, persistence, and replay determinism."""

import json

import numpy as np
import pytest

from agilem import session as ss
from agilem import synth
from agilem.ann_index import build_exact
from agilem.concept_head import ACTIVE_HIDDEN, INITIAL_HIDDEN, MlpConfig
from agilem.embed_store import split, subset
from agilem.errors import (CorpusExhaustedError, FormatError, LedgerError,
                           PhaseError, ValidationError)


def small_mlp(**kw):
    base = dict(epochs=2, min_epoch_examples=512, batch_size=128,
                random_negative_count=300)
    base.update(kw)
    return MlpConfig(**base)


def small_config(**kw):
    base = dict(rounds=2, batch_size=30, votes_required=1,
                expansion_per_phrase=50, expansion_sample=40, seed=5,
                mlp=small_mlp())
    base.update(kw)
    return ss.SessionConfig(**base)


@pytest.fixture(scope="module")
def world():
    """A small generated corpus split into work and held-out halves."""
    corpus, concept, truth = synth.generate(count=3000, dim=16, seed=7,
                                            positive_rate=0.05)
    assignment = split(corpus.items.ids, seed=7)
    work = subset(corpus, assignment.train_ids)
    held = subset(corpus, assignment.test_ids)
    truth_map = truth.as_dict()
    spec = ss.ConceptSpec.create(
        concept.name,
        positive_phrases=concept.positive_phrases,
        negative_phrases=concept.negative_phrases,
        embeddings=concept.embeddings,
    )
    return work, held, truth_map, spec


def fresh_session(world, **cfg_kw):
    work, _, _, spec = world
    session = ss.Session(spec, small_config(**cfg_kw),
                         clock=ss.DeterministicClock())
    return session, work


# ---------------------------------------------------------------------------
# Seed derivation and the clock.

def test_derive_seed_stable_and_distinct():
    a = ss.derive_seed(5, "train", 2)
    assert a == ss.derive_seed(5, "train", 2)
    assert a != ss.derive_seed(5, "train", 3)
    assert a != ss.derive_seed(5, "select", 2)
    assert a != ss.derive_seed(6, "train", 2)
    with pytest.raises(KeyError):
        ss.derive_seed(5, "nope", 0)


def test_derive_rng_reproducible():
    a = ss.derive_rng(1, "oracle", 0).random(4)
    b = ss.derive_rng(1, "oracle", 0).random(4)
    assert np.array_equal(a, b)


def test_deterministic_clock():
    clock = ss.DeterministicClock()
    assert clock() == 1_700_000_000.0
    assert clock() == 1_700_000_001.0
    resumed = ss.DeterministicClock(start=clock.start, next_tick=clock.next_tick)
    assert resumed() == 1_700_000_002.0


# ---------------------------------------------------------------------------
# Concept and config construction.

def test_concept_spec_create():
    emb = {p: np.array([1.0, float(len(p))]) for p in
           ("dogs", "small dogs", "cats")}
    spec = ss.ConceptSpec.create("dogs", [" small dogs ", "dogs"], ["cats"],
                                 embeddings=emb)
    assert spec.positive_phrases == ("dogs", "small dogs")
    assert spec.negative_phrases == ("cats",)
    assert spec.dim == 2
    for v in spec.embeddings.values():
        assert np.linalg.norm(v) == pytest.approx(1.0)
    back = ss.ConceptSpec.from_json(spec.to_json())
    assert back.positive_phrases == spec.positive_phrases
    assert np.allclose(back.embeddings["dogs"], spec.embeddings["dogs"])


def test_concept_spec_embedder_fallback():
    spec = ss.ConceptSpec.create(
        "things", ["stuff"], [],
        embedder=lambda p: synth.hash_phrase_vector(p, 8),
    )
    assert set(spec.embeddings) == {"things", "stuff"}


def test_concept_spec_validation():
    with pytest.raises(ValidationError):
        ss.ConceptSpec.create("  ", [], [], embeddings={})
    with pytest.raises(ValidationError, match="both positive and negative"):
        ss.ConceptSpec.create("x", ["y"], ["y"],
                              embedder=lambda p: np.ones(4))
    with pytest.raises(ValidationError, match="no embedding"):
        ss.ConceptSpec.create("x", ["y"], [], embeddings={"x": np.ones(4)})
    with pytest.raises(ValidationError, match="dimension"):
        ss.ConceptSpec.create("x", ["y"], [],
                              embeddings={"x": np.ones(4), "y": np.ones(5)})
    with pytest.raises(ValidationError, match="finite"):
        ss.ConceptSpec.create("x", [], [], embeddings={"x": np.zeros(4)})


def test_session_config_validation():
    with pytest.raises(ValidationError, match="odd"):
        small_config(votes_required=2)
    with pytest.raises(ValidationError, match="strategy"):
        small_config(strategy="best")
    with pytest.raises(ValidationError, match="unknown embedding family"):
        small_config(embedding_family="bert-like")
    cfg = small_config()
    assert ss.SessionConfig.from_json(cfg.to_json()) == cfg


# ---------------------------------------------------------------------------
# Phase machine basics.

def test_initial_phase_blocks_everything(world):
    session, work = fresh_session(world)
    assert session.phase == "defining"
    with pytest.raises(PhaseError):
        session.submit_ratings([(1, "positive", "me")])
    with pytest.raises(PhaseError):
        session.run_training(work)
    with pytest.raises(PhaseError):
        session.run_selection(work)
    with pytest.raises(PhaseError) as err:
        session.rate_with_oracle(ss.OracleBinding(truth={}))
    assert err.value.phase == "defining"


def test_expand_moves_to_rating(world):
    session, work = fresh_session(world)
    batch = session.expand(build_exact(work))
    assert session.phase == "rating"
    assert batch == sorted(batch)
    assert 0 < len(batch) <= session.config.expansion_sample
    assert set(batch) <= set(work.items.ids.tolist())
    with pytest.raises(PhaseError):
        session.expand(build_exact(work))  # only valid while defining

    replay, _ = fresh_session(world)
    assert replay.expand(build_exact(work)) == batch


def test_submit_ratings_guards(world):
    session, work = fresh_session(world)
    batch = session.expand(build_exact(work))
    with pytest.raises(LedgerError, match="not in the pending batch"):
        session.submit_ratings([(10**15, "positive", "me")])
    with pytest.raises(LedgerError, match="label"):
        session.submit_ratings([(batch[0], "maybe", "me")])
    with pytest.raises(LedgerError, match="rater_id"):
        session.submit_ratings([(batch[0], "positive", "")])
    session.submit_ratings([(batch[0], "positive", "me")])
    with pytest.raises(LedgerError, match="already voted"):
        session.submit_ratings([(batch[0], "positive", "me")])
    assert session.phase == "rating"  # batch not yet resolved


def test_partial_votes_then_resolution(world):
    session, work = fresh_session(world)
    batch = session.expand(build_exact(work))
    done = session.submit_ratings([(i, "positive", "me") for i in batch[:-1]])
    assert not done and session.phase == "rating"
    done = session.submit_ratings([(batch[-1], "negative", "me")])
    assert done and session.phase == "training"
    assert session.resolved[batch[0]] is True
    assert session.resolved[batch[-1]] is False
    assert len(session.ledger) == len(batch)


def test_majority_vote(world):
    session, work = fresh_session(world, votes_required=3)
    batch = session.expand(build_exact(work))
    votes = []
    for item in batch:
        votes.append((item, "positive", "r0"))
        votes.append((item, "positive" if item != batch[0] else "negative", "r1"))
        votes.append((item, "negative", "r2"))
    done = session.submit_ratings(votes)
    assert done
    assert session.resolved[batch[0]] is False   # 1 pos vs 2 neg
    assert session.resolved[batch[1]] is True    # 2 pos vs 1 neg


def test_tied_vote_is_an_error(world):
    session, work = fresh_session(world, votes_required=3)
    batch = session.expand(build_exact(work))
    votes = []
    for item in batch:
        for rater, value in (("r0", "positive"), ("r1", "negative"),
                             ("r2", "positive"), ("r3", "negative")):
            votes.append((item, value, rater))
    # Four votes per item satisfy the threshold but split 2-2.
    with pytest.raises(LedgerError, match="tied"):
        session.submit_ratings(votes)


def test_training_needs_both_classes(world):
    session, work = fresh_session(world)
    batch = session.expand(build_exact(work))
    session.submit_ratings([(i, "positive", "me") for i in batch])
    assert session.phase == "training"
    with pytest.raises(LedgerError, match="at least one positive and one negative"):
        session.run_training(work)


# ---------------------------------------------------------------------------
# The full loop.

@pytest.fixture(scope="module")
def finished(world):
    work, held, truth, spec = world
    result = ss.simulate(work, spec, small_config(), truth, held, truth)
    return result


def test_loop_architectures_and_metrics(finished):
    session = finished.session
    assert session.phase == "done"
    assert sorted(session.models) == [0, 1, 2]
    assert session.models[0].hidden_layers == INITIAL_HIDDEN
    assert session.models[1].hidden_layers == ACTIVE_HIDDEN
    assert session.models[2].hidden_layers == ACTIVE_HIDDEN
    assert [r["round"] for r in session.metrics_rows] == [0, 1, 2]
    for row in session.metrics_rows:
        assert row["n_pos"] > 0 and row["n_neg"] > 0
        assert row["auc_pr"] is not None
    assert finished.zero_shot.n_pos > 0


def test_loop_never_reselects_rated_items(world):
    session, work = fresh_session(world)
    _, _, truth, _ = world
    binding = ss.OracleBinding(truth=truth)
    session.expand(build_exact(work))
    seen: set = set()
    while session.phase != "done":
        if session.phase == "rating":
            assert not (set(session.pending) & seen)
            seen.update(session.pending)
            session.rate_with_oracle(binding)
        elif session.phase == "training":
            session.run_training(work)
        else:
            session.run_selection(work)
    assert len(seen) == len(session.resolved)


def test_selection_clamps_then_exhausts(world):
    work, _, truth, spec = world
    tiny = subset(work, work.items.ids[:60])
    tiny_truth = {int(i): truth[int(i)] for i in tiny.items.ids}
    # Guarantee both classes among the first 60 work items.
    if len({v for v in tiny_truth.values()}) < 2:
        pytest.skip("fixture slice is single-class; adjust slice")
    session = ss.Session(spec, small_config(rounds=5, batch_size=100,
                                            expansion_sample=40),
                         clock=ss.DeterministicClock())
    binding = ss.OracleBinding(truth=tiny_truth)
    session.expand(build_exact(tiny))
    session.rate_with_oracle(binding)
    session.run_training(tiny)
    batch = session.run_selection(tiny)          # 20 unrated remain
    assert len(batch) == 20
    assert any("clamped" in e for e in session.clamp_events)
    session.rate_with_oracle(binding)
    session.run_training(tiny)
    with pytest.raises(CorpusExhaustedError):
        session.run_selection(tiny)


def test_oracle_noise_flips_votes(world):
    session, work = fresh_session(world)
    _, _, truth, _ = world
    session.expand(build_exact(work))
    pending = list(session.pending)
    session.rate_with_oracle(ss.OracleBinding(truth=truth, noise_rate=0.45))
    flipped = sum(1 for i in pending if session.resolved[i] != truth[i])
    assert flipped > 0
    with pytest.raises(ValidationError):
        ss.OracleBinding(truth=truth, noise_rate=0.5)


def test_oracle_requires_truth_coverage(world):
    session, work = fresh_session(world)
    session.expand(build_exact(work))
    with pytest.raises(LedgerError, match="truth does not cover"):
        session.rate_with_oracle(ss.OracleBinding(truth={}))


def test_snapshot_is_json_safe(finished):
    snap = finished.session.snapshot()
    text = json.dumps(snap)
    assert json.loads(text)["phase"] == "done"
    assert snap["trained_rounds"] == [0, 1, 2]
    assert snap["resolved_labels"] == snap["resolved_positive"] + snap["resolved_negative"]


# ---------------------------------------------------------------------------
# Persistence and replay.

def test_metrics_csv_formatting():
    rows = [{"round": 0, "samples_rated": 40, "auc_pr": None, "auc_roc": 0.5,
             "f1": 0.25, "accuracy": 1.0, "threshold": 0.5, "n_pos": 1,
             "n_neg": 3}]
    data = ss.metrics_csv_bytes(rows).decode()
    lines = data.splitlines()
    assert lines[0] == "round,samples_rated,auc_pr,auc_roc,f1,accuracy,threshold,n_pos,n_neg"
    assert lines[1] == "0,40,,0.5,0.25,1.0,0.5,1,3"


def test_save_load_roundtrip(tmp_path, world):
    work, held, truth, spec = world
    result = ss.simulate(work, spec, small_config(), truth, held, truth,
                         save_dir=tmp_path / "sess")
    session = result.session
    back = ss.load_session(tmp_path / "sess")
    assert back.session_id == session.session_id
    assert back.phase == "done"
    assert back.round_index == session.round_index
    assert back.resolved == session.resolved
    assert back.ledger == session.ledger
    assert sorted(back.models) == sorted(session.models)
    for r in session.models:
        for a, b in zip(session.models[r].weights, back.models[r].weights):
            assert np.array_equal(a, b)
    assert back.clock.next_tick == session.clock.next_tick
    assert (tmp_path / "sess" / "metrics.csv").read_bytes() == \
        ss.metrics_csv_bytes(session.metrics_rows)


def test_load_session_rejects_garbage(tmp_path):
    d = tmp_path / "sess"
    d.mkdir()
    (d / "session.json").write_text("{]")
    with pytest.raises(FormatError, match="invalid"):
        ss.load_session(d)
    (d / "session.json").write_text('{"format": "other"}')
    with pytest.raises(FormatError, match="not a session file"):
        ss.load_session(d)


def test_replay_through_checkpoints_matches_uninterrupted(tmp_path, world):
    """Save + reload at every phase transition must not change anything."""
    work, held, truth, spec = world
    cfg = small_config()
    straight = ss.simulate(work, spec, cfg, truth, held, truth)

    hops = {"n": 0}

    def probe(live_session):
        hops["n"] += 1
        d = tmp_path / f"hop-{hops['n']}"
        ss.save_session(live_session, d)
        return ss.load_session(d)

    resumed = ss.simulate(work, spec, cfg, truth, held, truth,
                          resume_probe=probe)
    assert hops["n"] > 0
    assert ss.metrics_csv_bytes(resumed.session.metrics_rows) == \
        ss.metrics_csv_bytes(straight.session.metrics_rows)
    for r in straight.session.models:
        for a, b in zip(straight.session.models[r].weights,
                        resumed.session.models[r].weights):
            assert np.array_equal(a, b)
    assert resumed.session.ledger == straight.session.ledger


def test_crowd_round_appends_batch(world):
    work, held, truth, spec = world
    result = ss.simulate(work, spec, small_config(), truth, held, truth)
    session = result.session
    before_ledger = len(session.ledger)
    before_resolved = len(session.resolved)
    binding = ss.OracleBinding(truth=truth, votes_required=3)
    model = session.run_crowd_round(work, binding, batch_size=50,
                                    eval_corpus=held, eval_truth=truth)
    assert session.phase == "done"
    assert len(session.ledger) == before_ledger + 150   # 3 voters x 50 items
    assert len(session.resolved) == before_resolved + 50
    assert model.round_index == session.round_index
    assert session.votes_required == 3
