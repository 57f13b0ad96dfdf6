"""Human-receiver evaluation service.

Pairs a trained sender with a human receiver: each session pre-generates 30
games (a sketch plus a 10-photo pool), serves them strictly in order,
records choices in an append-only fsynced event log, and reports the comm
rate and class comm rate once all games are answered.

The client never sees target identity: payloads carry only content-hashed
image refs in a seeded display order, and correctness feedback is withheld
until the session summary.
"""

from __future__ import annotations

import io
import json
import os
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from pydantic import BaseModel

from sketchgame.agents import load_checkpoint, score_pool
from sketchgame.data import Dataset, load_dataset, sample_game
from sketchgame.game import GameConfig, handle_for_checkpoint
from sketchgame.rasterizer import rasterize

GAMES_PER_SESSION = 30
POOL_K = 9

_SESSION_SALT = 0x5E55


class ServiceError(Exception):
    status_code = 400


class UnknownResource(ServiceError):
    status_code = 404


class ConflictError(ServiceError):
    status_code = 409


@dataclass
class SessionGame:
    """Server-side record of one pre-generated game (target never leaves)."""

    target_id: int
    pool_ids: list[int]
    sketch_ref: str
    photo_refs: list[str]  # display order; parallel to display_pool_ids
    display_pool_ids: list[int]


@dataclass
class SessionState:
    session_id: str
    config_id: str
    participant: str
    seed: int
    games: list[SessionGame]
    answers: dict[int, str] = field(default_factory=dict)

    @property
    def next_index(self) -> int:
        return len(self.answers)

    @property
    def completed(self) -> bool:
        return len(self.answers) == len(self.games)


@dataclass
class SessionSummary:
    n_games: int
    correct: int
    class_correct: int
    games: list[dict]

    @property
    def comm_rate(self) -> float:
        return self.correct / self.n_games

    @property
    def class_comm_rate(self) -> float:
        return self.class_correct / self.n_games

    def to_payload(self) -> dict:
        return {
            "n_games": self.n_games,
            "correct": self.correct,
            "class_correct": self.class_correct,
            "comm_rate": self.comm_rate,
            "class_comm_rate": self.class_comm_rate,
            "games": self.games,
        }


class SessionStore:
    """Append-only JSONL event log per session plus a content-hashed image
    directory.  Answers are durable (flush + fsync) before they are acked."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)
        (self.root / "images").mkdir(parents=True, exist_ok=True)

    def _log_path(self, session_id: str) -> Path:
        return self.root / "sessions" / f"{session_id}.jsonl"

    def _append(self, session_id: str, event: dict) -> None:
        with open(self._log_path(session_id), "a") as f:
            f.write(json.dumps(event) + "\n")
            f.flush()
            os.fsync(f.fileno())

    def create_session(self, state: SessionState) -> None:
        if self._log_path(state.session_id).exists():
            raise ConflictError(f"session {state.session_id} already exists")
        doc = asdict(state)
        doc.pop("answers")
        self._append(state.session_id, {"event": "created", "ts": time.time(), "session": doc})

    def append_answer(self, session_id: str, index: int, photo_ref: str) -> None:
        self._append(session_id, {"event": "answer", "index": index, "photo_ref": photo_ref, "ts": time.time()})

    def load_session(self, session_id: str) -> SessionState:
        path = self._log_path(session_id)
        if not path.exists():
            raise UnknownResource(f"unknown session {session_id}")
        state: SessionState | None = None
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
        for pos, line in enumerate(lines):
            try:
                event = json.loads(line)
            except json.JSONDecodeError:
                if pos == len(lines) - 1:
                    break  # torn tail write from a crash mid-append
                raise
            if event["event"] == "created":
                doc = event["session"]
                games = [SessionGame(**g) for g in doc.pop("games")]
                state = SessionState(games=games, **doc)
            elif event["event"] == "answer":
                assert state is not None, "answer event before session creation"
                state.answers[int(event["index"])] = event["photo_ref"]
        if state is None:
            raise UnknownResource(f"session log {session_id} has no creation event")
        return state

    def session_ids(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "sessions").glob("*.jsonl"))

    def put_image(self, png_bytes: bytes) -> str:
        import hashlib

        ref = hashlib.sha256(png_bytes).hexdigest()[:16]
        path = self.root / "images" / f"{ref}.png"
        if not path.exists():
            path.write_bytes(png_bytes)
        return ref

    def image_bytes(self, ref: str) -> bytes:
        path = self.root / "images" / f"{ref}.png"
        if not path.exists() or "/" in ref or ".." in ref:
            raise UnknownResource(f"unknown image {ref}")
        return path.read_bytes()


def _to_png(array: np.ndarray) -> bytes:
    from PIL import Image

    if array.ndim == 2:
        img = Image.fromarray(array, mode="L")
    else:
        img = Image.fromarray(array.transpose(1, 2, 0), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


class EvalService:
    """Transport-free core; the FastAPI layer is a thin adapter over it."""

    def __init__(self, checkpoint_dir: str | Path, store: SessionStore, dataset: Dataset, k: int = POOL_K,
                 games_per_session: int = GAMES_PER_SESSION):
        self.checkpoint_dir = Path(checkpoint_dir)
        self.store = store
        self.dataset = dataset
        self.k = k
        self.games_per_session = games_per_session
        self._lock = threading.Lock()
        self._model_cache: dict[str, tuple] = {}

    def config_ids(self) -> list[str]:
        return sorted(p.stem for p in self.checkpoint_dir.glob("*.pt"))

    def _models(self, config_id: str):
        if config_id not in self._model_cache:
            path = self.checkpoint_dir / f"{config_id}.pt"
            if not path.exists():
                raise UnknownResource(f"unknown model config {config_id}")
            ck = load_checkpoint(path)
            handle = handle_for_checkpoint(ck.config)
            self._model_cache[config_id] = (ck, handle)
        return self._model_cache[config_id]

    def create_session(self, config_id: str, participant: str, seed: int) -> dict:
        ck, handle = self._models(config_id)
        rng = np.random.default_rng([seed, _SESSION_SALT])
        raw_games = [sample_game(len(self.dataset), self.k, rng) for _ in range(self.games_per_session)]

        target_ids = np.array([g.target_id for g in raw_games])
        with torch.no_grad():
            from sketchgame.encoders import encode_embedding

            feats = encode_embedding(self.dataset.image_float(target_ids), handle)
            coords = ck.sender(feats)
            sketches = rasterize(coords, ck.raster)

        games: list[SessionGame] = []
        for i, g in enumerate(raw_games):
            sketch_png = _to_png((sketches[i].clamp(0, 1) * 255).round().to(torch.uint8).numpy())
            sketch_ref = self.store.put_image(sketch_png)
            display = rng.permutation(len(g.pool_ids))
            display_pool_ids = [g.pool_ids[j] for j in display]
            photo_refs = [self.store.put_image(_to_png(self.dataset.images[pid])) for pid in display_pool_ids]
            games.append(
                SessionGame(
                    target_id=g.target_id,
                    pool_ids=list(g.pool_ids),
                    sketch_ref=sketch_ref,
                    photo_refs=photo_refs,
                    display_pool_ids=display_pool_ids,
                )
            )

        state = SessionState(
            session_id=uuid.uuid4().hex,
            config_id=config_id,
            participant=participant,
            seed=seed,
            games=games,
        )
        with self._lock:
            self.store.create_session(state)  # persisted before any response
        return self.session_view(state.session_id)

    def session_view(self, session_id: str) -> dict:
        state = self.store.load_session(session_id)
        return {
            "session_id": state.session_id,
            "config_id": state.config_id,
            "participant": state.participant,
            "total": len(state.games),
            "answered": len(state.answers),
            "next_index": state.next_index,
            "completed": state.completed,
        }

    def get_game(self, session_id: str, index: int) -> dict:
        state = self.store.load_session(session_id)
        if not (0 <= index < len(state.games)):
            raise UnknownResource(f"game index {index} out of range")
        if index > state.next_index:
            raise ConflictError(f"game {state.next_index} must be answered before game {index}")
        game = state.games[index]
        return {
            "session_id": session_id,
            "index": index,
            "total": len(state.games),
            "sketch": {"ref": game.sketch_ref, "url": f"/images/{game.sketch_ref}.png"},
            "photos": [{"ref": r, "url": f"/images/{r}.png"} for r in game.photo_refs],
        }

    def submit_answer(self, session_id: str, index: int, photo_ref: str) -> dict:
        with self._lock:
            state = self.store.load_session(session_id)
            if not (0 <= index < len(state.games)):
                raise UnknownResource(f"game index {index} out of range")
            if photo_ref not in state.games[index].photo_refs:
                raise ServiceError(f"photo ref {photo_ref} does not belong to game {index}")
            if index in state.answers:
                if state.answers[index] == photo_ref:
                    # idempotent retry of a persisted answer
                    return {"ok": True, "index": index, "next_index": state.next_index, "duplicate": True}
                raise ConflictError(f"game {index} already has a different answer")
            if index != state.next_index:
                raise ConflictError(f"game {state.next_index} must be answered before game {index}")
            self.store.append_answer(session_id, index, photo_ref)
        state = self.store.load_session(session_id)
        return {"ok": True, "index": index, "next_index": state.next_index, "duplicate": False}

    def summary(self, session_id: str) -> SessionSummary:
        state = self.store.load_session(session_id)
        if not state.completed:
            raise ConflictError(f"session has {len(state.answers)}/{len(state.games)} answers")
        return summarize(state, self.dataset)


def summarize(state: SessionState, dataset: Dataset) -> SessionSummary:
    """Rates recomputed from the persisted answers alone."""
    correct = 0
    class_correct = 0
    per_game = []
    for index, game in enumerate(state.games):
        ref = state.answers[index]
        chosen_id = game.display_pool_ids[game.photo_refs.index(ref)]
        hit = chosen_id == game.target_id
        class_hit = dataset.labels[chosen_id] == dataset.labels[game.target_id]
        correct += int(hit)
        class_correct += int(class_hit)
        per_game.append({"index": index, "correct": bool(hit), "class_correct": bool(class_hit)})
    return SessionSummary(n_games=len(state.games), correct=correct, class_correct=class_correct, games=per_game)


def aggregate_summaries(service: EvalService, config_id: str) -> dict:
    """Mean and population stddev of rates over completed sessions."""
    rates, class_rates = [], []
    for sid in service.store.session_ids():
        state = service.store.load_session(sid)
        if state.config_id == config_id and state.completed:
            s = summarize(state, service.dataset)
            rates.append(s.comm_rate)
            class_rates.append(s.class_comm_rate)
    if not rates:
        raise UnknownResource(f"no completed sessions for config {config_id}")
    return {
        "config_id": config_id,
        "sessions": len(rates),
        "comm_rate_mean": float(np.mean(rates)),
        "comm_rate_std": float(np.std(rates)),
        "class_comm_rate_mean": float(np.mean(class_rates)),
        "class_comm_rate_std": float(np.std(class_rates)),
    }


class CreateSessionBody(BaseModel):
    model_config_id: str
    participant_tag: str
    seed: int


class AnswerBody(BaseModel):
    photo_ref: str


def create_app(service: EvalService, ui_dir: str | Path | None = None):
    """FastAPI adapter exposing the HTTP+JSON surface."""
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse, Response

    app = FastAPI(title="sketchgame human evaluation")
    app.state.service = service

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status_code, content={"error": str(exc)})

    @app.get("/configs")
    def configs():
        return {"configs": service.config_ids()}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        return service.create_session(body.model_config_id, body.participant_tag, body.seed)

    @app.get("/sessions/{session_id}")
    def session_view(session_id: str):
        return service.session_view(session_id)

    @app.get("/sessions/{session_id}/games/{index}")
    def get_game(session_id: str, index: int):
        return service.get_game(session_id, index)

    @app.post("/sessions/{session_id}/games/{index}/answer")
    def submit_answer(session_id: str, index: int, body: AnswerBody):
        return service.submit_answer(session_id, index, body.photo_ref)

    @app.get("/sessions/{session_id}/summary")
    def summary(session_id: str):
        return service.summary(session_id).to_payload()

    @app.get("/images/{name}")
    def image(name: str):
        ref = name.removesuffix(".png")
        return Response(content=service.store.image_bytes(ref), media_type="image/png")

    if ui_dir is not None and Path(ui_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app


def build_service(checkpoint_dir: str | Path, store_dir: str | Path, data_path: str | Path,
                  split: str = "test", k: int = POOL_K, games_per_session: int = GAMES_PER_SESSION) -> EvalService:
    dataset = load_dataset(data_path, split=split)
    return EvalService(checkpoint_dir, SessionStore(store_dir), dataset, k=k, games_per_session=games_per_session)
