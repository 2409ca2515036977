"""Interactive token-to-region query service.

A loaded checkpoint (weights plus vocabulary) answers text queries
against previously uploaded images: the text is tokenized server-side
and each token's similarity against the cached feature grid is returned
as a min-max normalized heatmap at feature resolution.  The client is
responsible for upsampling heatmaps for display.
"""

from __future__ import annotations

import hashlib
import io
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image as PILImage
from pydantic import BaseModel

from tokenforge.corpus.bpe import BpeVocab, tokenize
from tokenforge.errors import BadImage, SpecError, TokenforgeError, ZeroNorm
from tokenforge.evalkit import minmax_norm, similarity_map, zero_shot_foreground
from tokenforge.model import (
    forward_features,
    load_checkpoint,
    prepare_image,
    token_embedding,
)

__all__ = [
    "MAX_SIDE",
    "LoadedCheckpoint",
    "ServiceState",
    "snap_dims",
    "load_service_checkpoint",
    "run_query",
    "create_app",
    "serve",
]

MAX_SIDE = 1024
DEFAULT_PORT = 8321


def snap_dims(height: int, width: int, patch_size: int) -> tuple[int, int]:
    """Snap both dims to the nearest multiple of 4*patch_size in [unit, 1024].

    The feature grid is 4/patch_size times the image, so serving sizes
    must be multiples of 4*patch_size.  Each dim snaps independently,
    which preserves aspect ratio approximately.
    """
    unit = 4 * patch_size
    if unit > MAX_SIDE:
        raise SpecError(f"patch_size {patch_size} exceeds the maximum serving size")

    def snap(v: int) -> int:
        units = int(round(v / unit))
        return unit * max(1, min(MAX_SIDE // unit, units))

    return snap(height), snap(width)


@dataclass(frozen=True)
class LoadedCheckpoint:
    """A checkpoint resolved for serving: weights, vocabulary, identity."""

    path: str
    ident: str  # content hash of the checkpoint file
    params: object
    vocab: BpeVocab


def load_service_checkpoint(path: str | Path) -> LoadedCheckpoint:
    """Load a checkpoint for serving; it must embed a vocabulary."""
    params, vocab_doc = load_checkpoint(path)
    if vocab_doc is None:
        raise SpecError(
            "checkpoint carries no vocabulary; serving needs one to tokenize queries"
        )
    ident = hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
    return LoadedCheckpoint(
        path=str(path), ident=ident, params=params, vocab=BpeVocab.from_json(vocab_doc)
    )


@dataclass
class StoredImage:
    rgb: np.ndarray  # decoded pixels at original size, uint8
    # checkpoint ident -> (resized uint8 pixels, feature grid)
    by_checkpoint: dict = field(default_factory=dict)


class ServiceState:
    """Uploaded images plus the active checkpoint.

    Queries read the checkpoint reference once and never mutate shared
    state, so they run concurrently; the lock only guards dictionary
    writes and the checkpoint swap.
    """

    def __init__(self, checkpoint: LoadedCheckpoint):
        self._lock = threading.Lock()
        self.checkpoint = checkpoint
        self.images: dict[str, StoredImage] = {}

    def upload(self, data: bytes) -> dict:
        """Register image bytes; returns id and served dimensions.

        The id is a content hash, so repeated uploads of the same bytes
        are idempotent.  Features for the active checkpoint are computed
        eagerly so the first query does not pay for them.
        """
        try:
            with PILImage.open(io.BytesIO(data)) as im:
                rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except Exception as exc:
            raise BadImage(f"could not decode image bytes: {exc}") from None
        image_id = hashlib.sha256(data).hexdigest()[:16]
        with self._lock:
            if image_id not in self.images:
                self.images[image_id] = StoredImage(rgb=rgb)
        resized, feats = self.features(image_id)
        return {
            "image_id": image_id,
            "width": int(resized.shape[1]),
            "height": int(resized.shape[0]),
            "grid_h": int(feats.shape[0]),
            "grid_w": int(feats.shape[1]),
        }

    def features(
        self, image_id: str, checkpoint: LoadedCheckpoint | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Resized pixels and feature grid for an image under a checkpoint.

        Raises KeyError for an unregistered image_id.  Results are cached
        per checkpoint ident; computing outside the lock keeps concurrent
        queries from serializing on inference.
        """
        ck = checkpoint or self.checkpoint
        with self._lock:
            stored = self.images[image_id]
            hit = stored.by_checkpoint.get(ck.ident)
        if hit is not None:
            return hit
        h, w = stored.rgb.shape[:2]
        nh, nw = snap_dims(h, w, ck.params.config.patch_size)
        if (nh, nw) != (h, w):
            img = PILImage.fromarray(stored.rgb).resize(
                (nw, nh), PILImage.Resampling.BILINEAR
            )
            resized = np.asarray(img, dtype=np.uint8)
        else:
            resized = stored.rgb
        feats, _ = forward_features(prepare_image(resized), ck.params)
        entry = (resized, feats)
        with self._lock:
            stored.by_checkpoint[ck.ident] = entry
        return entry

    def reload(self, path: str | None = None) -> LoadedCheckpoint:
        """Swap the active checkpoint atomically; omitted path re-reads it."""
        ck = load_service_checkpoint(path or self.checkpoint.path)
        with self._lock:
            self.checkpoint = ck
        return ck


def _token_result(span_text, token_id, heat: np.ndarray | None) -> dict:
    return {
        "text": span_text,
        "token_id": token_id,
        "heatmap": None if heat is None else heat.ravel().tolist(),
    }


def run_query(state: ServiceState, image_id: str, text: str) -> dict:
    """Answer one token-to-region query; see the endpoint for the schema.

    A single-space text is the background probe and takes the negated
    whitespace-similarity path; any other all-whitespace text is
    rejected.  Tokens outside the vocabulary (and tokens whose embedding
    has no direction) are listed with a null heatmap.  Raises KeyError
    for an unknown image_id.
    """
    if text != " " and not text.strip():
        raise SpecError("query text is empty; a single space probes the background")
    ck = state.checkpoint
    _, feats = state.features(image_id, ck)
    grid_h, grid_w, _ = feats.shape

    tokens_out = []
    maps = []
    if text == " ":
        sid = ck.vocab.id_of(" ")
        if sid is None:
            tokens_out.append(_token_result(" ", None, None))
        else:
            heat = zero_shot_foreground(feats, token_embedding([sid], ck.params)[0])
            tokens_out.append(_token_result(" ", sid, heat.scores))
            maps.append(heat.scores)
    else:
        for span in tokenize(text, ck.vocab, on_unknown="mark"):
            if span.token_id is None:
                tokens_out.append(_token_result(span.text, None, None))
                continue
            try:
                sim = similarity_map(
                    feats, token_embedding([span.token_id], ck.params)[0]
                )
            except ZeroNorm:
                tokens_out.append(_token_result(span.text, span.token_id, None))
                continue
            heat = minmax_norm(sim.scores)
            tokens_out.append(_token_result(span.text, span.token_id, heat))
            maps.append(heat)

    combined = np.maximum.reduce(maps).ravel().tolist() if maps else None
    return {
        "checkpoint": ck.ident,
        "grid_h": grid_h,
        "grid_w": grid_w,
        "tokens": tokens_out,
        "combined": combined,
    }


def _error_slug(exc: Exception) -> str:
    return re.sub(r"(?<!^)(?=[A-Z])", "_", type(exc).__name__).lower()


class QueryBody(BaseModel):
    image_id: str
    text: str


class CheckpointBody(BaseModel):
    path: str | None = None


def create_app(checkpoint_path: str | Path, frontend_dist: str | None = None):
    """Build the FastAPI application around one ServiceState."""
    state = ServiceState(load_service_checkpoint(checkpoint_path))
    app = FastAPI(title="tokenforge", docs_url=None, redoc_url=None)
    app.state.service = state

    @app.exception_handler(TokenforgeError)
    def domain_error(request: Request, exc: TokenforgeError):
        return JSONResponse(
            status_code=400, content={"error": _error_slug(exc), "detail": str(exc)}
        )

    @app.exception_handler(RequestValidationError)
    def validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422, content={"error": "validation", "detail": str(exc)}
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "checkpoint": state.checkpoint.ident}

    @app.post("/images")
    async def upload(request: Request):
        data = await request.body()
        if not data:
            raise BadImage("empty request body")
        return state.upload(data)

    @app.post("/query")
    def query(body: QueryBody):
        try:
            return run_query(state, body.image_id, body.text)
        except KeyError:
            return JSONResponse(
                status_code=404,
                content={
                    "error": "not_found",
                    "detail": f"unknown image_id {body.image_id!r}",
                },
            )

    @app.post("/checkpoint")
    def reload_checkpoint(body: CheckpointBody):
        ck = state.reload(body.path)
        return {"checkpoint": ck.ident, "path": ck.path}

    dist = frontend_dist or os.environ.get("FRONTEND_DIST")
    if dist is None:
        candidate = Path(__file__).resolve().parents[3] / "frontend" / "dist"
        dist = str(candidate) if candidate.is_dir() else None
    if dist and Path(dist).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=dist, html=True), name="ui")

    return app


def serve(
    checkpoint_path: str | None = None,
    port: int | None = None,
    host: str = "127.0.0.1",
) -> None:
    """Run the service; falls back to CHECKPOINT_PATH and PORT env vars."""
    import uvicorn

    path = checkpoint_path or os.environ.get("CHECKPOINT_PATH")
    if not path:
        raise SpecError("no checkpoint given; pass a path or set CHECKPOINT_PATH")
    app = create_app(path)
    uvicorn.run(app, host=host, port=int(port or os.environ.get("PORT", DEFAULT_PORT)))
