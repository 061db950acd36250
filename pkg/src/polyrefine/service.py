"""HTTP inference service consumed by the annotation client.

Endpoints:

* ``GET /health`` -> ``{"status": "ok", "model": "<hash>"}``
* ``POST /infer`` -> boundary polygon, region class, class probabilities,
  and the pre-refinement polygon for one image crop.
* ``POST /refine`` -> one more refinement pass over a client-edited polygon.

Requests carry the crop as base64 PNG in a JSON body (``image_base64``) or
as a multipart file field named ``image``.  Responses are canonical JSON
(sorted keys, no whitespace), byte-identical for identical requests; wall
time is reported in the ``X-Timing-Ms`` header so the body stays
deterministic.  The model is loaded once at startup and never mutated.
"""

from __future__ import annotations

import base64
import binascii
import json
import time

import numpy as np
from fastapi import FastAPI, Request, Response

from .estimator import BoundaryAnnotator
from .fileio import png_bytes_to_image

MAX_HEIGHT = 4096
MAX_WIDTH = 8192
MIN_SIDE = 8


class ServiceError(Exception):
    def __init__(self, status: int, reason: str):
        super().__init__(reason)
        self.status = status
        self.reason = reason


def _canonical_json(payload: dict, status: int = 200, timing_ms: float | None = None) -> Response:
    headers = {}
    if timing_ms is not None:
        headers["X-Timing-Ms"] = f"{timing_ms:.3f}"
    return Response(
        content=json.dumps(payload, sort_keys=True, separators=(",", ":")),
        media_type="application/json",
        status_code=status,
        headers=headers,
    )


def _round6(values) -> list:
    return [[round(float(x), 6), round(float(y), 6)] for x, y in values]


def _clamp_polygon(polygon: np.ndarray, width: int, height: int) -> np.ndarray:
    out = np.asarray(polygon, dtype=np.float64).copy()
    out[:, 0] = np.clip(out[:, 0], 0.0, float(width))
    out[:, 1] = np.clip(out[:, 1], 0.0, float(height))
    return out


async def _extract_image(request: Request) -> tuple[np.ndarray, dict]:
    """Decode the crop from JSON base64 or multipart; raise ServiceError."""
    content_type = request.headers.get("content-type", "")
    body_obj: dict = {}
    if content_type.startswith("multipart/form-data"):
        form = await request.form()
        upload = form.get("image")
        if upload is None:
            raise ServiceError(400, "multipart request is missing the 'image' file field")
        raw = await upload.read()
        for key in ("known_class", "polygon"):
            if key in form:
                try:
                    body_obj[key] = json.loads(form[key])
                except (TypeError, json.JSONDecodeError):
                    body_obj[key] = form[key]
    else:
        raw_body = await request.body()
        try:
            body_obj = json.loads(raw_body)
        except json.JSONDecodeError:
            raise ServiceError(400, "request body is neither valid JSON nor multipart form data")
        if not isinstance(body_obj, dict) or "image_base64" not in body_obj:
            raise ServiceError(400, "JSON body must carry an 'image_base64' field")
        try:
            raw = base64.b64decode(body_obj["image_base64"], validate=True)
        except (binascii.Error, TypeError):
            raise ServiceError(400, "'image_base64' is not valid base64")
    try:
        image = png_bytes_to_image(raw)
    except Exception:
        raise ServiceError(400, "could not decode the image payload as PNG/JPEG")
    _, h, w = image.shape
    if h > MAX_HEIGHT or w > MAX_WIDTH:
        raise ServiceError(413, f"image {w}x{h} exceeds the {MAX_WIDTH}x{MAX_HEIGHT} limit")
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ServiceError(400, f"image {w}x{h} is below the {MIN_SIDE}px minimum")
    return image, body_obj


def create_app(annotator: BoundaryAnnotator) -> FastAPI:
    annotator._require_fitted()
    model_hash = annotator.model_digest()
    app = FastAPI(title="polyrefine inference service", docs_url=None, redoc_url=None)

    @app.exception_handler(ServiceError)
    async def _service_error(_request, exc: ServiceError):
        return _canonical_json({"error": exc.reason}, status=exc.status)

    @app.get("/health")
    async def health():
        return _canonical_json({"status": "ok", "model": model_hash})

    @app.post("/infer")
    async def infer(request: Request):
        start = time.perf_counter()
        image, body = await _extract_image(request)
        _, h, w = image.shape
        result = annotator.predict(image)
        payload = {
            "polygon": _round6(_clamp_polygon(result["polygon"], w, h)),
            "initial_polygon": _round6(_clamp_polygon(result["initial_polygon"], w, h)),
            "region_class": result["region_class"],
            "class_probs": [round(float(p), 6) for p in result["class_probs"]],
            "model": model_hash,
        }
        if isinstance(body.get("known_class"), str):
            payload["known_class"] = body["known_class"]
        return _canonical_json(payload, timing_ms=(time.perf_counter() - start) * 1000)

    @app.post("/refine")
    async def refine(request: Request):
        start = time.perf_counter()
        image, body = await _extract_image(request)
        polygon = body.get("polygon")
        if not isinstance(polygon, list) or len(polygon) < 3:
            raise ServiceError(400, "'polygon' must be a list of at least 3 [x, y] points")
        try:
            pts = np.asarray(polygon, dtype=np.float64).reshape(len(polygon), 2)
        except (ValueError, TypeError):
            raise ServiceError(400, "'polygon' entries must be [x, y] pairs")
        if not np.isfinite(pts).all():
            raise ServiceError(400, "'polygon' contains non-finite coordinates")
        _, h, w = image.shape
        refined = annotator.refine_polygon(image, pts, iterations=1)
        payload = {
            "polygon": _round6(_clamp_polygon(refined, w, h)),
            "model": model_hash,
        }
        return _canonical_json(payload, timing_ms=(time.perf_counter() - start) * 1000)

    return app


def create_app_from_path(model_path) -> FastAPI:
    return create_app(BoundaryAnnotator.load(model_path))


def serve(model_path, host: str = "127.0.0.1", port: int = 8008) -> None:
    """Load the model and serve; import/load failures exit non-zero."""
    import uvicorn

    app = create_app_from_path(model_path)
    uvicorn.run(app, host=host, port=port, log_level="warning")
