"""HTTP service: image store, saliency endpoints, concept explorer, quiz.

All routes live under ``/api/v1`` and return structured JSON errors
``{"code", "message"}``. Shared state (hierarchy, definition matrix) is
immutable; the image store and patch cache serialize their own writes, so
the app is safe under the default threadpool execution model.

The API never serves original image pixels: uploads are acknowledged with
metadata only and explorers see saliency renderings exclusively, which is
what makes the caption quiz meaningful.
"""

from __future__ import annotations

import json
import random
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import simcore
from .config import ServiceConfig, build_backend
from .encoder import EncoderBackend, Image
from .errors import (
    BackendError,
    ConfigError,
    ConvisError,
    NoPathError,
    UnknownSynsetError,
)
from .lexdb import Hierarchy, filter_hierarchy, full_hierarchy, load_lexicon, load_seed_list
from .saliency import PatchEmbeddingCache, SaliencyConfig, aggregate, score_grid
from .simcore import DefinitionMatrix, build_definition_matrix

__all__ = ["ImageStore", "QuizManager", "AppState", "build_state", "create_app"]

QUIZ_ALIAS_PREFIX = "quiz-"


class ApiError(ConvisError):
    """Error carrying an HTTP status and a machine-readable code."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


def _not_found(what: str, key: str) -> ApiError:
    return ApiError(404, "not_found", f"{what} {key!r} not found")


@dataclass
class ImageRecord:
    id: str
    filename: str
    width: int
    height: int
    channels: int
    uploaded_at: float
    precompute: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "filename": self.filename,
            "width": self.width,
            "height": self.height,
            "channels": self.channels,
            "uploaded_at": self.uploaded_at,
            "precompute": dict(self.precompute),
        }


class ImageStore:
    """Content-addressed blob store: id = SHA-256 of the uploaded bytes.

    Re-uploading identical bytes is a no-op returning the same record.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.blob_dir = self.root / "blobs"
        self.meta_dir = self.root / "meta"
        self.blob_dir.mkdir(parents=True, exist_ok=True)
        self.meta_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _meta_path(self, image_id: str) -> Path:
        return self.meta_dir / f"{image_id}.json"

    def put(self, data: bytes, filename: str = "upload") -> ImageRecord:
        import hashlib

        image = Image.from_bytes(data)  # raises ValueError if undecodable
        image_id = hashlib.sha256(data).hexdigest()
        with self._lock:
            existing = self._read_meta(image_id)
            if existing is not None:
                return existing
            record = ImageRecord(
                id=image_id,
                filename=filename,
                width=image.width,
                height=image.height,
                channels=image.channels,
                uploaded_at=time.time(),
            )
            (self.blob_dir / image_id).write_bytes(data)
            self._write_meta(record)
        return record

    def _read_meta(self, image_id: str) -> ImageRecord | None:
        path = self._meta_path(image_id)
        if not path.is_file():
            return None
        raw = json.loads(path.read_text(encoding="utf-8"))
        return ImageRecord(**raw)

    def _write_meta(self, record: ImageRecord) -> None:
        self._meta_path(record.id).write_text(
            json.dumps(record.to_json(), indent=2), encoding="utf-8"
        )

    def get_record(self, image_id: str) -> ImageRecord:
        record = self._read_meta(image_id)
        if record is None:
            raise _not_found("image", image_id)
        return record

    def open_image(self, image_id: str) -> Image:
        path = self.blob_dir / image_id
        if not path.is_file():
            raise _not_found("image", image_id)
        return Image.from_bytes(path.read_bytes())

    def set_precompute_status(self, image_id: str, cfg_key: str, status: str) -> None:
        if status not in ("none", "running", "done"):
            raise ValueError(f"bad precompute status {status!r}")
        with self._lock:
            record = self.get_record(image_id)
            current = record.precompute.get(cfg_key, "none")
            order = {"none": 0, "running": 1, "done": 2}
            if order[status] < order[current]:
                return  # transitions only move forward
            record.precompute[cfg_key] = status
            self._write_meta(record)


class QuizManager:
    """Caption-guessing sessions over a pre-registered sample set.

    Each session hides one sample image behind a per-session alias: the
    client gets four captions and the alias (valid for saliency and
    top-concept queries only), never the image id or its pixels. The
    correct option index stays server-side until the answer arrives.
    """

    def __init__(self, samples: Sequence[dict], rng: random.Random | None = None):
        for n, sample in enumerate(samples):
            if len(sample["captions"]) != 4:
                raise ConfigError(f"quiz sample {n} must have exactly 4 captions")
            if not 0 <= int(sample["correct_index"]) < 4:
                raise ConfigError(f"quiz sample {n} has correct_index outside 0..3")
        self._samples = list(samples)
        self._rng = rng or random.Random()
        self._sessions: dict[str, dict] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, store: ImageStore) -> "QuizManager":
        path = Path(path)
        raw = json.loads(path.read_text(encoding="utf-8"))
        samples = []
        for rec in raw:
            image_path = path.parent / rec["image"]
            record = store.put(image_path.read_bytes(), filename=Path(rec["image"]).name)
            samples.append(
                {
                    "image_id": record.id,
                    "captions": [str(c) for c in rec["captions"]],
                    "correct_index": int(rec["correct_index"]),
                }
            )
        return cls(samples)

    def __len__(self) -> int:
        return len(self._samples)

    def new_session(self) -> dict:
        if not self._samples:
            raise ApiError(409, "quiz_unavailable", "no quiz dataset is loaded")
        with self._lock:
            sample = self._rng.choice(self._samples)
            order = list(range(4))
            self._rng.shuffle(order)
            session_id = uuid.uuid4().hex
            session = {
                "id": session_id,
                "image_id": sample["image_id"],
                "captions": [sample["captions"][k] for k in order],
                "correct_choice": order.index(sample["correct_index"]),
                "answered": False,
                "correct": None,
            }
            self._sessions[session_id] = session
        return self.view(session_id)

    def _session(self, session_id: str) -> dict:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise _not_found("quiz session", session_id) from None

    def view(self, session_id: str) -> dict:
        s = self._session(session_id)
        out = {
            "session_id": s["id"],
            "captions": list(s["captions"]),
            "saliency_image": QUIZ_ALIAS_PREFIX + s["id"],
            "answered": s["answered"],
        }
        if s["answered"]:
            out["outcome"] = {"correct": s["correct"], "correct_choice": s["correct_choice"]}
        return out

    def answer(self, session_id: str, choice: int) -> dict:
        with self._lock:
            s = self._session(session_id)
            if s["answered"]:
                raise ApiError(409, "already_answered", "session has already been answered")
            if not isinstance(choice, int) or not 0 <= choice < 4:
                raise ApiError(400, "bad_choice", "choice must be an integer in 0..3")
            s["answered"] = True
            s["correct"] = choice == s["correct_choice"]
        return self.view(session_id)

    def resolve_alias(self, alias: str) -> str:
        """Map a session alias to the hidden image id."""
        if not alias.startswith(QUIZ_ALIAS_PREFIX):
            raise _not_found("image", alias)
        return self._session(alias[len(QUIZ_ALIAS_PREFIX) :])["image_id"]


@dataclass
class AppState:
    config: ServiceConfig
    hierarchy: Hierarchy
    backend: EncoderBackend
    defmat: DefinitionMatrix
    store: ImageStore
    patch_cache: PatchEmbeddingCache
    quiz: QuizManager | None = None


def build_state(cfg: ServiceConfig) -> AppState:
    """Load everything the service needs; fails fast on bad config."""
    if not cfg.lexicon_path:
        raise ConfigError("config must set lexicon_path")
    if not Path(cfg.lexicon_path).is_file():
        raise ConfigError(f"lexicon file not found: {cfg.lexicon_path}")
    lexicon = load_lexicon(cfg.lexicon_path)
    if cfg.seed_path:
        hierarchy = filter_hierarchy(lexicon, load_seed_list(cfg.seed_path))
    else:
        hierarchy = full_hierarchy(lexicon)
    backend = build_backend(cfg.backend_spec())
    cache_dir = cfg.cache_dir or None
    defmat = build_definition_matrix(hierarchy, backend, cache_dir=cache_dir)
    store = ImageStore(cfg.data_dir)
    quiz = None
    if cfg.quiz_path:
        quiz = QuizManager.from_file(cfg.quiz_path, store)
    return AppState(
        config=cfg,
        hierarchy=hierarchy,
        backend=backend,
        defmat=defmat,
        store=store,
        patch_cache=PatchEmbeddingCache(directory=cache_dir),
        quiz=quiz,
    )


def _saliency_config(state: AppState, params) -> SaliencyConfig:
    base = state.config.saliency_config()
    def _int(name, fallback):
        raw = params.get(name)
        if raw is None:
            return fallback
        try:
            return int(raw)
        except ValueError:
            raise ApiError(400, "bad_parameter", f"{name} must be an integer") from None

    try:
        return SaliencyConfig(
            delta_s=_int("delta_s", base.delta_s),
            delta_l=_int("delta_l", base.delta_l),
            omega=_int("omega", base.omega),
            window_mode=params.get("window_mode", base.window_mode),
            boundary_policy=params.get("boundary_policy", base.boundary_policy),
        )
    except ValueError as exc:
        raise ApiError(400, "bad_parameter", str(exc)) from None


def create_app(state: AppState) -> FastAPI:
    app = FastAPI(title="convis", version="0.1.0", docs_url=None, redoc_url=None)

    @app.exception_handler(ConvisError)
    def _convis_error(_request: Request, exc: ConvisError):
        if isinstance(exc, ApiError):
            status, code = exc.status, exc.code
        elif isinstance(exc, UnknownSynsetError):
            status, code = 404, "unknown_synset"
        elif isinstance(exc, BackendError):
            status, code = 503, "backend_unavailable"
        elif isinstance(exc, NoPathError):
            status, code = 422, "no_path"
        else:
            status, code = 400, "bad_request"
        return JSONResponse(status_code=status, content={"code": code, "message": str(exc)})

    @app.exception_handler(ValueError)
    def _value_error(_request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"code": "bad_request", "message": str(exc)})

    def resolve_image_id(image_id: str) -> str:
        """Quiz aliases resolve for derived artifacts; records never do."""
        if image_id.startswith(QUIZ_ALIAS_PREFIX):
            if state.quiz is None:
                raise _not_found("image", image_id)
            return state.quiz.resolve_alias(image_id)
        return image_id

    @app.get("/health")
    @app.get("/api/v1/health")
    def health():
        return {"status": "ok", "hierarchy_size": len(state.hierarchy)}

    @app.post("/api/v1/images", status_code=201)
    async def upload_image(request: Request):
        body = await request.body()
        limit = state.config.max_upload_mb * 1024 * 1024
        if len(body) > limit:
            raise ApiError(413, "too_large", f"upload exceeds {state.config.max_upload_mb} MiB")
        filename = request.headers.get("x-filename", "upload")
        record = state.store.put(body, filename=filename)
        return record.to_json()

    @app.get("/api/v1/images/{image_id}")
    def get_image_record(image_id: str):
        # Deliberately refuses quiz aliases: records would expose the
        # hidden image's identity.
        if image_id.startswith(QUIZ_ALIAS_PREFIX):
            raise _not_found("image", image_id)
        return state.store.get_record(image_id).to_json()

    @app.post("/api/v1/images/{image_id}/precompute")
    def precompute(image_id: str, request: Request):
        real_id = resolve_image_id(image_id)
        cfg = _saliency_config(state, request.query_params)
        image = state.store.open_image(real_id)
        cfg_key = f"{cfg.delta_s}-{cfg.delta_l}-{cfg.omega}-{cfg.boundary_policy}"
        state.store.set_precompute_status(real_id, cfg_key, "running")
        locations, _means, hit = state.patch_cache.get_or_compute(image, cfg, state.backend)
        state.store.set_precompute_status(real_id, cfg_key, "done")
        return {"status": "done", "locations": len(locations), "cache_hit": hit}

    @app.get("/api/v1/images/{image_id}/saliency/{synset_id}")
    def get_saliency(image_id: str, synset_id: str, request: Request):
        real_id = resolve_image_id(image_id)
        cfg = _saliency_config(state, request.query_params)
        fmt = request.query_params.get("format", "png")
        if fmt not in ("png", "cvis"):
            raise ApiError(400, "bad_parameter", "format must be png or cvis")
        image = state.store.open_image(real_id)
        started = time.monotonic()
        grid = score_grid(
            image, synset_id, cfg, state.backend, state.defmat, state.hierarchy,
            cache=state.patch_cache,
        )
        smap = aggregate(grid)
        smap.image_hash = image.content_hash()
        elapsed_ms = (time.monotonic() - started) * 1000.0
        lo = float(smap.values.min())
        hi = float(smap.values.max())
        headers = {
            "X-Convis-Min": f"{lo:.6f}",
            "X-Convis-Max": f"{hi:.6f}",
            "X-Convis-Tau-Suggestion": f"{(lo + hi) / 2.0:.6f}",
            "X-Convis-Time-Ms": f"{elapsed_ms:.1f}",
            "X-Convis-Cache-Hit": "true" if grid.cache_hit else "false",
        }
        if fmt == "png":
            return Response(smap.to_png_bytes(), media_type="image/png", headers=headers)
        return Response(
            smap.to_cvis_bytes(), media_type="application/octet-stream", headers=headers
        )

    @app.get("/api/v1/images/{image_id}/top-concepts")
    def top_concepts(image_id: str, k: int = 10):
        if k < 1:
            raise ApiError(400, "bad_parameter", "k must be >= 1")
        real_id = resolve_image_id(image_id)
        image = state.store.open_image(real_id)
        emb = state.backend.embed_image(image)
        pairs = simcore.top_concepts(emb, state.defmat, k)
        return {"concepts": [{"id": sid, "rank": rank} for sid, rank in pairs]}

    @app.get("/api/v1/concepts/search")
    def concept_search(q: str = "", limit: int = 20):
        if not q:
            return {"results": []}
        if limit < 1:
            raise ApiError(400, "bad_parameter", "limit must be >= 1")
        results = state.hierarchy.search(q, limit=limit)
        return {"results": [_concept_summary(state, sid) for sid in results]}

    @app.get("/api/v1/concepts/{synset_id}")
    def concept_view(synset_id: str):
        syn = state.hierarchy.synset(synset_id)
        return {
            "id": syn.id,
            "lemmas": list(syn.lemmas),
            "definition": syn.definition,
            "children": list(state.hierarchy.children(synset_id)),
            "ancestors": state.hierarchy.ancestors(synset_id),
        }

    @app.post("/api/v1/quiz/sessions", status_code=201)
    def quiz_new():
        if state.quiz is None:
            raise ApiError(409, "quiz_unavailable", "no quiz dataset is configured")
        return state.quiz.new_session()

    @app.get("/api/v1/quiz/sessions/{session_id}")
    def quiz_view(session_id: str):
        if state.quiz is None:
            raise _not_found("quiz session", session_id)
        return state.quiz.view(session_id)

    @app.post("/api/v1/quiz/sessions/{session_id}/answer")
    async def quiz_answer(session_id: str, request: Request):
        if state.quiz is None:
            raise _not_found("quiz session", session_id)
        try:
            payload = await request.json()
            choice = payload["choice"]
        except Exception:
            raise ApiError(400, "bad_choice", 'body must be JSON {"choice": 0..3}') from None
        return state.quiz.answer(session_id, choice)

    ui_dir = state.config.ui_dir
    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def _concept_summary(state: AppState, synset_id: str) -> dict:
    syn = state.hierarchy.synset(synset_id)
    return {"id": syn.id, "lemmas": list(syn.lemmas), "definition": syn.definition}
