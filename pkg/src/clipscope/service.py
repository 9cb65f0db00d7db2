"""HTTP service exposing explanations and match scores.

Endpoints: GET /health, GET /model, POST /explain (multipart image +
options), POST /score.  Uploads are capped at 16 MB.  Responses for the
same model, image, and options are byte-identical across calls.
"""

import numpy as np
from fastapi import FastAPI, File, Form, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import __version__
from ._kernels import BACKEND as KERNEL_BACKEND
from .explain import LAM_MODES, METHODS, explain_image, explain_text
from .images import ImageError, load_image_bytes, resize_center_crop
from .model import encode_image, encode_text

MAX_UPLOAD_BYTES = 16 * 1024 * 1024


def _error(status, detail):
    return JSONResponse(status_code=status, content={"detail": detail})


def _parse_layers(text):
    if text is None or text.strip() == "":
        return None
    return [int(part) for part in text.split(",") if part.strip() != ""]


def create_app(bundle):
    app = FastAPI(title="clipscope", version=__version__)
    # Browser front-ends are served from their own origin (a static file
    # server on another port), so the API must answer cross-origin calls.
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "version": __version__,
            "kernel_backend": KERNEL_BACKEND,
        }

    @app.get("/model")
    def model_info():
        n_params = int(sum(t.data.size for t in bundle.weights.values()))
        return {
            "config": bundle.config.to_dict(),
            "n_parameters": n_params,
            "methods": list(METHODS),
            "lam_modes": list(LAM_MODES),
        }

    async def _read_image(upload):
        data = await upload.read()
        if len(data) > MAX_UPLOAD_BYTES:
            return None, _error(413, f"image exceeds {MAX_UPLOAD_BYTES} bytes")
        try:
            img01 = load_image_bytes(data)
        except ImageError as e:
            return None, _error(400, str(e))
        return resize_center_crop(img01, bundle.config.image_size), None

    def _encode_text(text):
        try:
            return bundle.tokenizer.encode(text), None
        except ValueError as e:
            return None, _error(400, f"cannot tokenize text: {e}")

    @app.post("/explain")
    async def explain(
        image: UploadFile = File(...),
        text: str = Form(...),
        method: str = Form("grad-eclip"),
        lam_mode: str = Form("loosened"),
        layers: str = Form(None),
        upsample: str = Form("bilinear"),
        include_text_saliency: bool = Form(True),
    ):
        if method not in METHODS:
            return _error(400, f"unknown method {method!r}; choose from {list(METHODS)}")
        if lam_mode not in LAM_MODES:
            return _error(400, f"unknown lam_mode {lam_mode!r}; choose from {list(LAM_MODES)}")
        if upsample not in ("bilinear", "nearest"):
            return _error(400, f"unknown upsample {upsample!r}")
        try:
            layer_list = _parse_layers(layers)
        except ValueError:
            return _error(400, f"layers must be comma-separated integers, got {layers!r}")
        img01, err = await _read_image(image)
        if err:
            return err
        encoded, err = _encode_text(text)
        if err:
            return err
        pixels = bundle.preprocess(img01)
        try:
            heat = explain_image(bundle, pixels, encoded, method=method,
                                 lam_mode=lam_mode, layers=layer_list,
                                 upsample=upsample)
        except ValueError as e:
            return _error(400, str(e))
        saliency = None
        if include_text_saliency and method != "grad-cam":
            try:
                sal = explain_text(bundle, pixels, encoded, method=method,
                                   lam_mode=lam_mode, layers=layer_list)
                saliency = sal.to_records()
            except ValueError:
                saliency = None
        return {
            "method": method,
            "lam_mode": lam_mode,
            "text": text,
            "score": heat.score,
            "heatmap": heat.to_record(),
            "text_saliency": saliency,
        }

    @app.post("/score")
    async def score(image: UploadFile = File(...), text: str = Form(...)):
        img01, err = await _read_image(image)
        if err:
            return err
        encoded, err = _encode_text(text)
        if err:
            return err
        pixels = bundle.preprocess(img01)
        feat_i, _ = encode_image(bundle, pixels)
        feat_t, _ = encode_text(bundle, encoded)
        vi = feat_i.numpy()
        vt = feat_t.numpy()
        value = float(
            vi @ vt / (np.linalg.norm(vi) * np.linalg.norm(vt))
        )
        return {"score": value, "text": text}

    return app
