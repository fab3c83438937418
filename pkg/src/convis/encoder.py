"""Pluggable joint image/text embedding backends.

All backends obey the same contract:

* ``embed_text`` / ``embed_image`` return a unit-norm float32 vector of the
  backend's fixed dimension,
* identical inputs produce bitwise-identical outputs (determinism),
* concurrent calls behave as some serial interleaving.

Embeddings are quantized to float32 at the backend boundary so that disk
caches (stored as little-endian f32) round-trip bit-exactly.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as PILImage

from .errors import BackendError, BackendUnavailableError

__all__ = [
    "Image",
    "EncoderBackend",
    "MockHashBackend",
    "FixtureTableBackend",
    "RemoteServiceBackend",
    "RuntimeModelBackend",
    "CallCountingBackend",
    "cosine",
    "fnv1a64",
]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


class Image:
    """8-bit image with row-major pixel data and 1 or 3 channels."""

    __slots__ = ("_array",)

    def __init__(self, array: np.ndarray):
        arr = np.asarray(array)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, C) with C in {{1, 3}}, got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must have positive width and height")
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
        self._array = np.ascontiguousarray(arr)
        self._array.setflags(write=False)

    @property
    def width(self) -> int:
        return self._array.shape[1]

    @property
    def height(self) -> int:
        return self._array.shape[0]

    @property
    def channels(self) -> int:
        return self._array.shape[2]

    @property
    def array(self) -> np.ndarray:
        """Read-only (H, W, C) uint8 view."""
        return self._array

    def crop(self, x0: int, y0: int, x1: int, y1: int) -> "Image":
        """Half-open rectangle crop; must lie inside the image."""
        if not (0 <= x0 < x1 <= self.width and 0 <= y0 < y1 <= self.height):
            raise ValueError(f"crop [{x0},{x1})x[{y0},{y1}) outside {self.width}x{self.height}")
        return Image(self._array[y0:y1, x0:x1])

    def resized(self, width: int, height: int) -> "Image":
        """Bilinear resize (via Pillow)."""
        pil = self.to_pil().resize((width, height), PILImage.BILINEAR)
        return Image.from_pil(pil)

    def canonical_bytes(self) -> bytes:
        """Stable serialization: magic, dims header, then raw pixels."""
        header = b"CVIMG1" + b"".join(
            v.to_bytes(4, "little") for v in (self.width, self.height, self.channels)
        )
        return header + self._array.tobytes()

    def content_hash(self) -> str:
        """SHA-256 hex digest of the canonical serialization."""
        return hashlib.sha256(self.canonical_bytes()).hexdigest()

    def to_pil(self) -> PILImage.Image:
        if self.channels == 1:
            return PILImage.fromarray(self._array[:, :, 0], mode="L")
        return PILImage.fromarray(self._array, mode="RGB")

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.to_pil().save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def from_pil(cls, pil: PILImage.Image) -> "Image":
        if pil.mode == "L":
            return cls(np.asarray(pil, dtype=np.uint8))
        return cls(np.asarray(pil.convert("RGB"), dtype=np.uint8))

    @classmethod
    def from_bytes(cls, data: bytes) -> "Image":
        """Decode PNG/JPEG bytes."""
        try:
            pil = PILImage.open(io.BytesIO(data))
            pil.load()
        except Exception as exc:
            raise ValueError(f"cannot decode image payload: {exc}") from exc
        return cls.from_pil(pil)

    @classmethod
    def load(cls, path: str | Path) -> "Image":
        return cls.from_bytes(Path(path).read_bytes())

    def save(self, path: str | Path) -> None:
        self.to_pil().save(str(path))

    def __eq__(self, other) -> bool:
        return isinstance(other, Image) and np.array_equal(self._array, other._array)

    def __repr__(self) -> str:
        return f"Image({self.width}x{self.height}x{self.channels})"


def _finalize(vec: np.ndarray, dimension: int) -> np.ndarray:
    """Validate, L2-normalize in float64, then quantize to float32."""
    v = np.asarray(vec, dtype=np.float64).reshape(-1)
    if v.shape[0] != dimension:
        raise BackendError(f"backend produced dimension {v.shape[0]}, expected {dimension}")
    if not np.all(np.isfinite(v)):
        raise BackendError("backend produced non-finite embedding values")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise BackendError("backend produced a zero embedding vector")
    return (v / norm).astype(np.float32)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding."""
    va = np.asarray(a, dtype=np.float64).reshape(-1)
    vb = np.asarray(b, dtype=np.float64).reshape(-1)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for zero vectors")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


class EncoderBackend(ABC):
    """Abstract joint text/image encoder.

    Subclasses set ``kind``, ``model_id``, ``dimension`` and
    ``input_resolution`` (pixels per side images are resized to before
    encoding, or None for no resizing).
    """

    kind: str = "abstract"
    model_id: str = ""
    dimension: int = 0
    input_resolution: int | None = None

    @abstractmethod
    def embed_text(self, text: str) -> np.ndarray:
        """Unit-norm float32 vector for a non-empty string."""

    @abstractmethod
    def embed_image(self, image: Image) -> np.ndarray:
        """Unit-norm float32 vector; input is preprocessed per backend."""

    def embed_image_batch(self, images: Sequence[Image]) -> list[np.ndarray]:
        """Elementwise embed_image, order preserved.

        Failures are re-raised with the offending batch index.
        """
        out: list[np.ndarray] = []
        for idx, img in enumerate(images):
            try:
                out.append(self.embed_image(img))
            except BackendError as exc:
                raise BackendError(f"batch item {idx}: {exc}") from exc
        return out

    def embed_text_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for idx, text in enumerate(texts):
            try:
                out.append(self.embed_text(text))
            except BackendError as exc:
                raise BackendError(f"batch item {idx}: {exc}") from exc
        return out

    def _prepare_image(self, image: Image) -> Image:
        if self.input_resolution is None:
            return image
        r = self.input_resolution
        if image.width == r and image.height == r:
            return image
        return image.resized(r, r)


class MockHashBackend(EncoderBackend):
    """Deterministic stand-in encoder for tests and demos.

    The raw input bytes (domain-tagged so text and image inputs cannot
    collide) are hashed with 64-bit FNV-1a; the hash seeds an independent
    PRNG stream that draws ``dimension`` standard normals, which are then
    L2-normalized. No model file, no resizing (``input_resolution`` None),
    and distinct inputs give near-orthogonal vectors with overwhelming
    probability.
    """

    kind = "mock-hash"

    def __init__(self, dimension: int = 512):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension
        self.model_id = f"mock-hash-d{dimension}"

    def _draw(self, seed: int) -> np.ndarray:
        rng = np.random.Generator(np.random.PCG64(seed))
        return _finalize(rng.standard_normal(self.dimension), self.dimension)

    def embed_text(self, text: str) -> np.ndarray:
        if not text:
            raise BackendError("cannot embed empty text")
        return self._draw(fnv1a64(b"text\x00" + text.encode("utf-8")))

    def embed_image(self, image: Image) -> np.ndarray:
        img = self._prepare_image(image)
        return self._draw(fnv1a64(b"image\x00" + img.canonical_bytes()))


class FixtureTableBackend(EncoderBackend):
    """Explicit (key -> vector) lookup table for oracle tests.

    Text keys are literal strings; image keys are SHA-256 content hashes
    (see :meth:`Image.content_hash`). Vectors are L2-normalized at load,
    so unit-norm fixtures are returned exactly as registered.
    """

    kind = "fixture-table"

    def __init__(
        self,
        dimension: int,
        text: dict[str, Sequence[float]] | None = None,
        image_sha256: dict[str, Sequence[float]] | None = None,
        model_id: str = "fixture-table",
    ):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension
        self.model_id = model_id
        self._text = {k: _finalize(np.asarray(v), dimension) for k, v in (text or {}).items()}
        self._image = {
            k: _finalize(np.asarray(v), dimension) for k, v in (image_sha256 or {}).items()
        }

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureTableBackend":
        with Path(path).open("r", encoding="utf-8") as fh:
            spec = json.load(fh)
        try:
            dimension = int(spec["dimension"])
        except KeyError:
            raise BackendError(f"{path}: fixture file missing 'dimension'") from None
        return cls(
            dimension,
            text=spec.get("text", {}),
            image_sha256=spec.get("image_sha256", {}),
            model_id=f"fixture:{Path(path).name}",
        )

    def register_text(self, key: str, vector: Sequence[float]) -> None:
        self._text[key] = _finalize(np.asarray(vector), self.dimension)

    def register_image(self, image: Image, vector: Sequence[float]) -> None:
        self._image[image.content_hash()] = _finalize(np.asarray(vector), self.dimension)

    def embed_text(self, text: str) -> np.ndarray:
        if not text:
            raise BackendError("cannot embed empty text")
        try:
            return self._text[text].copy()
        except KeyError:
            raise BackendError(f"fixture table has no entry for text {text!r}") from None

    def embed_image(self, image: Image) -> np.ndarray:
        key = image.content_hash()
        try:
            return self._image[key].copy()
        except KeyError:
            raise BackendError(f"fixture table has no entry for image sha256 {key}") from None


class RemoteServiceBackend(EncoderBackend):
    """HTTP client for a remote embedding service.

    Protocol: ``POST {base}/embed/text {"texts": [...]}`` and
    ``POST {base}/embed/image {"images_b64": [...]}`` (base64 PNG), both
    answering ``{"vectors": [[f32]]}``. Vectors are re-normalized locally
    to enforce the unit-norm contract.
    """

    kind = "remote-service"

    def __init__(
        self,
        base_url: str,
        dimension: int | None = None,
        timeout: float = 60.0,
        client=None,
    ):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.model_id = f"remote:{self.base_url}"
        self._client = client or httpx.Client(timeout=timeout)
        self._lock = threading.Lock()
        if dimension is None:
            probe = self._post("/embed/text", {"texts": ["dimension probe"]})
            dimension = len(probe[0])
        self.dimension = dimension

    def _post(self, route: str, payload: dict) -> list[list[float]]:
        try:
            with self._lock:
                resp = self._client.post(self.base_url + route, json=payload)
            resp.raise_for_status()
            vectors = resp.json()["vectors"]
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(f"remote embedding service failed: {exc}") from exc
        if not isinstance(vectors, list):
            raise BackendError("remote service returned malformed 'vectors'")
        return vectors

    def embed_text(self, text: str) -> np.ndarray:
        if not text:
            raise BackendError("cannot embed empty text")
        return self.embed_text_batch([text])[0]

    def embed_text_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            return []
        vectors = self._post("/embed/text", {"texts": list(texts)})
        if len(vectors) != len(texts):
            raise BackendError("remote service returned wrong vector count")
        return [_finalize(np.asarray(v), self.dimension) for v in vectors]

    def embed_image(self, image: Image) -> np.ndarray:
        return self.embed_image_batch([image])[0]

    def embed_image_batch(self, images: Sequence[Image]) -> list[np.ndarray]:
        if not images:
            return []
        payload = {
            "images_b64": [
                base64.b64encode(self._prepare_image(img).to_png_bytes()).decode("ascii")
                for img in images
            ]
        }
        vectors = self._post("/embed/image", payload)
        if len(vectors) != len(images):
            raise BackendError("remote service returned wrong vector count")
        return [_finalize(np.asarray(v), self.dimension) for v in vectors]


# CLIP ViT-B/32 preprocessing constants (RGB mean/std over [0,1] pixels).
_CLIP_MEAN = np.array([0.48145466, 0.4578275, 0.40821073], dtype=np.float32)
_CLIP_STD = np.array([0.26862954, 0.26130258, 0.27577711], dtype=np.float32)


def clip_preprocess_array(image: Image, resolution: int) -> np.ndarray:
    """Resize + normalize an image into a (1, 3, R, R) float32 tensor."""
    img = image if (image.width == resolution and image.height == resolution) else image.resized(
        resolution, resolution
    )
    arr = img.array
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    arr = arr.astype(np.float32) / 255.0
    arr = (arr - _CLIP_MEAN) / _CLIP_STD
    return np.ascontiguousarray(arr.transpose(2, 0, 1)[np.newaxis])


class RuntimeModelBackend(EncoderBackend):
    """CLIP-style encoder loaded from an ONNX model bundle.

    Expects a directory with ``image_tower.onnx``, ``text_tower.onnx``,
    ``tokenizer.json`` (HuggingFace tokenizers format) and ``meta.json``::

        {"model_id": "...", "dimension": 512, "input_resolution": 224,
         "context_length": 77}

    Requires the ``onnx`` extra (onnxruntime + tokenizers); raises
    BackendUnavailableError when those are not importable.
    """

    kind = "runtime-model"

    def __init__(self, bundle_dir: str | Path):
        try:
            import onnxruntime  # noqa: F401
            from tokenizers import Tokenizer
        except ImportError as exc:
            raise BackendUnavailableError(
                "runtime-model backend needs the 'onnx' extra "
                "(pip install convis[onnx])"
            ) from exc

        bundle = Path(bundle_dir)
        meta_path = bundle / "meta.json"
        if not meta_path.is_file():
            raise BackendError(f"model bundle {bundle} is missing meta.json")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        self.dimension = int(meta["dimension"])
        self.input_resolution = int(meta.get("input_resolution", 224))
        self.model_id = str(meta.get("model_id", bundle.name))
        self._context_length = int(meta.get("context_length", 77))

        opts = onnxruntime.SessionOptions()
        opts.intra_op_num_threads = 0
        try:
            self._image_sess = onnxruntime.InferenceSession(
                str(bundle / "image_tower.onnx"), sess_options=opts
            )
            self._text_sess = onnxruntime.InferenceSession(
                str(bundle / "text_tower.onnx"), sess_options=opts
            )
            self._tokenizer = Tokenizer.from_file(str(bundle / "tokenizer.json"))
        except Exception as exc:
            raise BackendError(f"failed to load model bundle {bundle}: {exc}") from exc
        self._lock = threading.Lock()

    def _tokenize(self, text: str) -> np.ndarray:
        enc = self._tokenizer.encode(text)
        ids = enc.ids[: self._context_length]
        ids = ids + [0] * (self._context_length - len(ids))
        return np.asarray([ids], dtype=np.int64)

    def embed_text(self, text: str) -> np.ndarray:
        if not text:
            raise BackendError("cannot embed empty text")
        tokens = self._tokenize(text)
        name = self._text_sess.get_inputs()[0].name
        with self._lock:
            (out,) = self._text_sess.run(None, {name: tokens})
        return _finalize(out[0], self.dimension)

    def embed_image(self, image: Image) -> np.ndarray:
        tensor = clip_preprocess_array(image, self.input_resolution)
        name = self._image_sess.get_inputs()[0].name
        with self._lock:
            (out,) = self._image_sess.run(None, {name: tensor})
        return _finalize(out[0], self.dimension)


class CallCountingBackend(EncoderBackend):
    """Instrumentation wrapper counting per-item encode calls."""

    kind = "counting"

    def __init__(self, inner: EncoderBackend):
        self.inner = inner
        self.dimension = inner.dimension
        self.model_id = inner.model_id
        self.input_resolution = inner.input_resolution
        self.text_calls = 0
        self.image_calls = 0

    def reset(self) -> None:
        self.text_calls = 0
        self.image_calls = 0

    def embed_text(self, text: str) -> np.ndarray:
        self.text_calls += 1
        return self.inner.embed_text(text)

    def embed_image(self, image: Image) -> np.ndarray:
        self.image_calls += 1
        return self.inner.embed_image(image)

    def embed_image_batch(self, images: Sequence[Image]) -> list[np.ndarray]:
        self.image_calls += len(images)
        return self.inner.embed_image_batch(images)

    def embed_text_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        self.text_calls += len(texts)
        return self.inner.embed_text_batch(texts)
