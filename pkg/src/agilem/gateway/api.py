"""HTTP gateway over labeling sessions.

One process owns one corpus and its index. Sessions are created and driven
entirely through this API; training and selection run in background
threads because they can take seconds on large corpora, and the session
phase tells pollers when the work landed.

Concurrency: each session has a lock held for the duration of any mutating
operation, including background ones. A request that cannot take the lock
immediately gets a 409 ``busy`` instead of queueing.
"""

import os
import threading
import uuid
from typing import Callable, Mapping, Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, RedirectResponse
from pydantic import BaseModel, Field

from agilem import __version__, kernels
from agilem.ann_index import NnIndex
from agilem.embed_store import Corpus
from agilem.errors import (
    AgilemError,
    CorpusExhaustedError,
    LedgerError,
    PhaseError,
    ValidationError,
)
from agilem.session import (
    ConceptSpec,
    Session,
    SessionConfig,
    load_session,
    metrics_csv_bytes,
    save_session,
)
from agilem.synth import hash_phrase_vector


class BusyError(AgilemError):
    """Another operation currently holds this session."""


class UnknownSessionError(AgilemError):
    pass


class UnknownItemError(AgilemError):
    pass


_ERROR_STATUS = {
    ValidationError: (400, "invalid_request"),
    PhaseError: (409, "phase_violation"),
    LedgerError: (409, "ledger_conflict"),
    CorpusExhaustedError: (409, "corpus_exhausted"),
    BusyError: (409, "busy"),
    UnknownSessionError: (404, "unknown_session"),
    UnknownItemError: (404, "unknown_item"),
}


class GatewayRuntime:
    """Shared state behind the API: corpus, index, and live sessions."""

    def __init__(self, corpus: Corpus, index: NnIndex,
                 data_dir: Optional[str] = None,
                 embedder: Optional[Callable] = None,
                 phrase_seed: int = 0,
                 eval_corpus: Optional[Corpus] = None,
                 eval_truth: Optional[Mapping] = None):
        self.corpus = corpus
        self.index = index
        self.data_dir = data_dir
        self.phrase_seed = phrase_seed
        # When both are set, every training round is scored against them and
        # the session grows one metrics row per round. Without ground truth
        # (live human sessions) the metrics series stays empty.
        self.eval_corpus = eval_corpus
        self.eval_truth = eval_truth
        self.embedder = embedder or (
            lambda phrase: hash_phrase_vector(phrase, corpus.dim, seed=phrase_seed)
        )
        self.sessions: dict = {}
        self._locks: dict = {}
        self._idempotent: dict = {}
        self._registry_lock = threading.Lock()
        if data_dir:
            self._load_existing()

    def _sessions_root(self) -> str:
        return os.path.join(self.data_dir, "sessions")

    def _load_existing(self) -> None:
        root = self._sessions_root()
        if not os.path.isdir(root):
            return
        for name in sorted(os.listdir(root)):
            state_file = os.path.join(root, name, "session.json")
            if os.path.isfile(state_file):
                session = load_session(os.path.join(root, name))
                self.sessions[session.session_id] = session
                self._locks[session.session_id] = threading.Lock()

    def add(self, session: Session) -> None:
        with self._registry_lock:
            self.sessions[session.session_id] = session
            self._locks[session.session_id] = threading.Lock()
            self._idempotent[session.session_id] = {}
        self.persist(session)

    def get(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSessionError(f"no session {session_id!r}")

    def lock(self, session_id: str) -> threading.Lock:
        self.get(session_id)
        return self._locks[session_id]

    def idempotent(self, session_id: str) -> dict:
        return self._idempotent.setdefault(session_id, {})

    def persist(self, session: Session) -> None:
        if self.data_dir:
            save_session(session, os.path.join(self._sessions_root(), session.session_id))


# -- request bodies ----------------------------------------------------------

class ConceptBody(BaseModel):
    name: str
    positive_phrases: list = Field(default_factory=list)
    negative_phrases: list = Field(default_factory=list)


class CreateSessionBody(BaseModel):
    concept: ConceptBody
    config: dict = Field(default_factory=dict)


class VoteBody(BaseModel):
    item_id: int
    label: str


class RatingsBody(BaseModel):
    rater_id: str
    votes: list[VoteBody]
    idempotency_key: Optional[str] = None


class SelectBody(BaseModel):
    batch_size: Optional[int] = None
    strategy: Optional[str] = None


def _merge_config(overrides: dict) -> SessionConfig:
    base = SessionConfig().to_json()
    unknown = set(overrides) - set(base)
    if unknown:
        raise ValidationError(f"unknown config fields: {sorted(unknown)}")
    mlp = dict(base["mlp"])
    incoming = dict(overrides)
    mlp_overrides = incoming.pop("mlp", {})
    if not isinstance(mlp_overrides, dict):
        raise ValidationError("config.mlp must be an object")
    unknown = set(mlp_overrides) - set(mlp)
    if unknown:
        raise ValidationError(f"unknown config.mlp fields: {sorted(unknown)}")
    mlp.update(mlp_overrides)
    base.update(incoming)
    base["mlp"] = mlp
    return SessionConfig.from_json(base)


def create_app(runtime: GatewayRuntime, ui_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="agilem gateway", version=__version__)

    @app.exception_handler(AgilemError)
    async def _agilem_error(request: Request, exc: AgilemError):
        for klass, (status, code) in _ERROR_STATUS.items():
            if isinstance(exc, klass):
                body = {"error": code, "message": str(exc)}
                if isinstance(exc, PhaseError):
                    body["phase"] = exc.phase
                return JSONResponse(status_code=status, content=body)
        return JSONResponse(status_code=500, content={"error": "internal", "message": str(exc)})

    def _locked(session_id: str) -> threading.Lock:
        lock = runtime.lock(session_id)
        if not lock.acquire(blocking=False):
            raise BusyError(f"session {session_id} has an operation in progress")
        return lock

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "version": __version__,
            "corpus_count": runtime.corpus.count,
            "dim": runtime.corpus.dim,
            "index_kind": runtime.index.kind,
            "kernels": kernels.BACKEND,
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        config = _merge_config(body.config)
        concept = ConceptSpec.create(
            body.concept.name,
            positive_phrases=body.concept.positive_phrases,
            negative_phrases=body.concept.negative_phrases,
            embedder=runtime.embedder,
        )
        if concept.dim != runtime.corpus.dim:
            raise ValidationError(
                f"phrase embeddings are {concept.dim}-d, corpus is {runtime.corpus.dim}-d"
            )
        session = Session(concept, config, session_id=uuid.uuid4().hex[:12])
        runtime.add(session)
        return {"session_id": session.session_id, "phase": session.phase}

    @app.get("/sessions")
    def list_sessions():
        return {
            "sessions": [
                {
                    "session_id": s.session_id,
                    "concept": s.concept.name,
                    "phase": s.phase,
                    "round": s.round_index,
                }
                for s in runtime.sessions.values()
            ]
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return runtime.get(session_id).snapshot()

    @app.post("/sessions/{session_id}/expand")
    def expand(session_id: str):
        session = runtime.get(session_id)
        lock = _locked(session_id)
        try:
            pending = session.expand(runtime.index)
            runtime.persist(session)
        finally:
            lock.release()
        return {
            "phase": session.phase,
            "round": session.round_index,
            "pending": _items_payload(runtime, pending),
        }

    @app.get("/sessions/{session_id}/batch")
    def batch(session_id: str, rater_id: str = ""):
        session = runtime.get(session_id)
        voted = {
            r.item_id
            for r in session.ledger
            if r.round_index == session.round_index and r.rater_id == rater_id
        }
        remaining = [i for i in session.pending if i not in voted]
        return {
            "phase": session.phase,
            "round": session.round_index,
            "votes_required": session.votes_required,
            "items": _items_payload(runtime, remaining),
        }

    @app.post("/sessions/{session_id}/ratings")
    def ratings(session_id: str, body: RatingsBody):
        session = runtime.get(session_id)
        store = runtime.idempotent(session_id)
        lock = _locked(session_id)
        try:
            if body.idempotency_key is not None and body.idempotency_key in store:
                return store[body.idempotency_key]
            resolved = session.submit_ratings(
                [(v.item_id, v.label, body.rater_id) for v in body.votes]
            )
            runtime.persist(session)
            response = {
                "accepted": len(body.votes),
                "resolved": resolved,
                "phase": session.phase,
                "round": session.round_index,
            }
            if body.idempotency_key is not None:
                store[body.idempotency_key] = response
        finally:
            lock.release()
        return response

    def _spawn(session: Session, lock: threading.Lock, work: Callable) -> None:
        def runner():
            try:
                work()
                session.last_error = None
            except AgilemError as exc:
                session.last_error = str(exc)
            except Exception as exc:  # noqa: BLE001
                session.last_error = f"internal: {exc}"
            finally:
                try:
                    runtime.persist(session)
                finally:
                    lock.release()

        threading.Thread(target=runner, daemon=True).start()

    @app.post("/sessions/{session_id}/train", status_code=202)
    def train_endpoint(session_id: str):
        session = runtime.get(session_id)
        lock = _locked(session_id)
        try:
            if session.phase != "training":
                raise PhaseError(
                    f"train requires phase training, session is in {session.phase}",
                    phase=session.phase,
                )
        except BaseException:
            lock.release()
            raise
        _spawn(
            session, lock,
            lambda: session.run_training(
                runtime.corpus, runtime.eval_corpus, runtime.eval_truth
            ),
        )
        return {"phase": session.phase, "round": session.round_index, "status": "started"}

    @app.post("/sessions/{session_id}/select", status_code=202)
    def select_endpoint(session_id: str, body: Optional[SelectBody] = None):
        session = runtime.get(session_id)
        body = body or SelectBody()
        lock = _locked(session_id)
        try:
            if session.phase != "selecting":
                raise PhaseError(
                    f"select requires phase selecting, session is in {session.phase}",
                    phase=session.phase,
                )
        except BaseException:
            lock.release()
            raise
        _spawn(
            session, lock,
            lambda: session.run_selection(
                runtime.corpus, batch_size=body.batch_size, strategy=body.strategy
            ),
        )
        return {"phase": session.phase, "round": session.round_index, "status": "started"}

    @app.get("/sessions/{session_id}/metrics")
    def metrics(session_id: str, format: str = "json"):
        session = runtime.get(session_id)
        if format == "csv":
            from fastapi.responses import Response

            return Response(
                content=metrics_csv_bytes(session.metrics_rows), media_type="text/csv"
            )
        return {"rows": session.metrics_rows}

    @app.get("/items/{item_id}/image")
    def item_image(item_id: int):
        if item_id < 0 or item_id > 0xFFFFFFFFFFFFFFFF:
            raise UnknownItemError(f"no item {item_id}")
        ids = np.asarray([item_id], dtype=np.uint64)
        if not runtime.corpus.items.contains(ids)[0]:
            raise UnknownItemError(f"no item {item_id}")
        return RedirectResponse(runtime.corpus.items.url_for_id(item_id), status_code=307)

    if ui_dir and os.path.isdir(ui_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def _items_payload(runtime: GatewayRuntime, ids) -> list:
    out = []
    for item_id in ids:
        out.append({
            "id": int(item_id),
            "url": runtime.corpus.items.url_for_id(int(item_id)),
            "image_path": f"/items/{int(item_id)}/image",
        })
    return out
