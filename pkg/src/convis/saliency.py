"""Multi-scale patch scoring and spatial aggregation into saliency maps.

Pipeline per (image, synset): crop a small and a large square patch at
every stride-``omega`` grid location, embed both, average the two
embeddings, score each location with the descendant-maximized rank
similarity, then average per pixel over the overlapping windows that
involve it. Patch slicing follows ``x[j:j+delta, i:i+delta]`` with ``i``
the column anchor and ``j`` the row anchor.

Two deliberately configurable ambiguities:

* ``window_mode``: ``containment`` averages the scores of locations whose
  large patch actually covers the pixel; ``symmetric`` uses the literal
  inequality ``|l-i| < delta_l, |m-j| < delta_l`` on anchor coordinates.
* ``boundary_policy``: ``fit-only`` keeps only locations where the large
  patch lies fully inside the image; ``clamp`` keeps every stride anchor
  and shifts patch rectangles inward at the borders.

Mean patch embeddings are intentionally not renormalized: cosine is
invariant to positive scaling, so only the direction matters.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import simcore
from .encoder import EncoderBackend, Image
from .errors import CacheError
from .lexdb import Hierarchy
from .matrixio import read_vector_table, write_vector_table
from .simcore import DefinitionMatrix, resolve_cache_dir

__all__ = [
    "SaliencyConfig",
    "PatchLocation",
    "ScoreGrid",
    "SaliencyMap",
    "PatchEmbeddingCache",
    "patch_grid",
    "local_embedding",
    "score_grid",
    "aggregate",
    "compute_saliency",
    "render_overlay",
    "render_mask",
    "default_patch_cache",
]

WINDOW_MODES = ("containment", "symmetric")
BOUNDARY_POLICIES = ("fit-only", "clamp")

CVIS_MAGIC = b"CVIS"
CVIS_VERSION = 1
PATCH_CACHE_MAGIC = b"CVPE"


@dataclass(frozen=True)
class SaliencyConfig:
    """Patch sizes (pixels), stride, and the two policy switches.

    Defaults: small side 64, large side 128, stride 16, containment
    windows, fit-only boundaries.
    """

    delta_s: int = 64
    delta_l: int = 128
    omega: int = 16
    window_mode: str = "containment"
    boundary_policy: str = "fit-only"

    def __post_init__(self):
        if not (0 < self.delta_s <= self.delta_l):
            raise ValueError("require 0 < delta_s <= delta_l")
        if self.omega < 1:
            raise ValueError("stride omega must be >= 1")
        if self.window_mode not in WINDOW_MODES:
            raise ValueError(f"window_mode must be one of {WINDOW_MODES}")
        if self.boundary_policy not in BOUNDARY_POLICIES:
            raise ValueError(f"boundary_policy must be one of {BOUNDARY_POLICIES}")

    def embedding_key(self, image_hash: str, model_id: str) -> str:
        """Cache key for patch embeddings; window_mode is irrelevant here."""
        return "|".join(
            (
                image_hash,
                str(self.delta_s),
                str(self.delta_l),
                str(self.omega),
                self.boundary_policy,
                model_id,
            )
        )


@dataclass(frozen=True)
class PatchLocation:
    """One grid anchor with its actual small/large crop rectangles."""

    i: int
    j: int
    small: tuple[int, int, int, int]
    large: tuple[int, int, int, int]


def _clamped_rect(i: int, j: int, delta: int, width: int, height: int):
    x0 = max(0, min(i, width - delta))
    y0 = max(0, min(j, height - delta))
    return (x0, y0, min(x0 + delta, width), min(y0 + delta, height))


def patch_grid(image: Image, cfg: SaliencyConfig) -> list[PatchLocation]:
    """All valid stride-``omega`` anchors with their crop rectangles.

    Anchors are enumerated row-major (j outer, i inner). Under fit-only
    an image smaller than the large patch admits no location and raises.
    """
    w, h = image.width, image.height
    locations: list[PatchLocation] = []
    if cfg.boundary_policy == "fit-only":
        if w < cfg.delta_l or h < cfg.delta_l:
            raise ValueError(
                f"image {w}x{h} smaller than large patch {cfg.delta_l} under fit-only"
            )
        for j in range(0, h - cfg.delta_l + 1, cfg.omega):
            for i in range(0, w - cfg.delta_l + 1, cfg.omega):
                locations.append(
                    PatchLocation(
                        i,
                        j,
                        (i, j, i + cfg.delta_s, j + cfg.delta_s),
                        (i, j, i + cfg.delta_l, j + cfg.delta_l),
                    )
                )
    else:
        for j in range(0, h, cfg.omega):
            for i in range(0, w, cfg.omega):
                locations.append(
                    PatchLocation(
                        i,
                        j,
                        _clamped_rect(i, j, cfg.delta_s, w, h),
                        _clamped_rect(i, j, cfg.delta_l, w, h),
                    )
                )
    return locations


def local_embedding(
    image: Image, i: int, j: int, cfg: SaliencyConfig, backend: EncoderBackend
) -> np.ndarray:
    """Mean of the small- and large-patch embeddings at anchor (i, j).

    Float32, not renormalized; (i, j) must be a grid anchor.
    """
    loc = _location_at(image, i, j, cfg)
    e_small = backend.embed_image(image.crop(*loc.small))
    e_large = backend.embed_image(image.crop(*loc.large))
    return (e_small + e_large) / np.float32(2.0)


def _location_at(image: Image, i: int, j: int, cfg: SaliencyConfig) -> PatchLocation:
    if i % cfg.omega or j % cfg.omega:
        raise ValueError(f"({i}, {j}) is not on the stride-{cfg.omega} grid")
    for loc in patch_grid(image, cfg):
        if loc.i == i and loc.j == j:
            return loc
    raise ValueError(f"({i}, {j}) is not a valid grid location for this image")


def _embed_grid(
    image: Image, cfg: SaliencyConfig, backend: EncoderBackend
) -> tuple[list[PatchLocation], np.ndarray]:
    """Embed every grid location; rows are float32 mean embeddings."""
    locations = patch_grid(image, cfg)
    crops: list[Image] = []
    for loc in locations:
        crops.append(image.crop(*loc.small))
        crops.append(image.crop(*loc.large))
    embedded = backend.embed_image_batch(crops)
    means = np.empty((len(locations), backend.dimension), dtype=np.float32)
    for n in range(len(locations)):
        means[n] = (embedded[2 * n] + embedded[2 * n + 1]) / np.float32(2.0)
    return locations, means


class PatchEmbeddingCache:
    """Per-image cache of mean patch embeddings.

    Keyed by (image hash, delta_s, delta_l, omega, boundary_policy,
    model_id). Entries are kept in an LRU-bounded memory map and, when a
    directory is configured, persisted in the shared vector-table format
    so later processes skip re-encoding. Concurrent misses for one key
    are coalesced: a single worker computes while others wait.
    """

    def __init__(self, max_entries: int = 32, directory: str | Path | None = None):
        self.max_entries = max_entries
        self.directory = resolve_cache_dir(directory)
        self._entries: OrderedDict[str, tuple[list[PatchLocation], np.ndarray]] = OrderedDict()
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}

    def _disk_path(self, key: str) -> Path | None:
        if self.directory is None:
            return None
        return self.directory / f"patches-{hashlib.sha256(key.encode()).hexdigest()[:24]}.cvpe"

    def _remember(self, key: str, value: tuple[list[PatchLocation], np.ndarray]) -> None:
        self._entries[key] = value
        self._entries.move_to_end(key)
        while len(self._entries) > self.max_entries:
            self._entries.popitem(last=False)

    def _load_disk(self, key: str, model_id: str):
        path = self._disk_path(key)
        if path is None or not path.is_file():
            return None
        try:
            loc_ids, rows, stored_model, _digest = read_vector_table(path, PATCH_CACHE_MAGIC)
        except CacheError:
            return None
        if stored_model != model_id:
            return None
        locations = [_decode_location(s) for s in loc_ids]
        return locations, rows.astype(np.float32)

    def get_or_compute(
        self,
        image: Image,
        cfg: SaliencyConfig,
        backend: EncoderBackend,
        compute: Callable[[], tuple[list[PatchLocation], np.ndarray]] | None = None,
    ) -> tuple[list[PatchLocation], np.ndarray, bool]:
        """Return (locations, mean embeddings, cache_hit)."""
        key = cfg.embedding_key(image.content_hash(), backend.model_id)
        with self._lock:
            if key in self._entries:
                self._entries.move_to_end(key)
                locations, means = self._entries[key]
                return locations, means, True
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        with key_lock:
            with self._lock:
                if key in self._entries:
                    locations, means = self._entries[key]
                    return locations, means, True
            loaded = self._load_disk(key, backend.model_id)
            if loaded is not None:
                with self._lock:
                    self._remember(key, loaded)
                return loaded[0], loaded[1], True
            locations, means = (compute or (lambda: _embed_grid(image, cfg, backend)))()
            with self._lock:
                self._remember(key, (locations, means))
            path = self._disk_path(key)
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                write_vector_table(
                    path,
                    PATCH_CACHE_MAGIC,
                    [_encode_location(loc) for loc in locations],
                    means,
                    backend.model_id,
                    hashlib.sha256(key.encode()).digest(),
                )
            return locations, means, False

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
            self._key_locks.clear()


def _encode_location(loc: PatchLocation) -> str:
    return ",".join(
        str(v) for v in (loc.i, loc.j, *loc.small, *loc.large)
    )


def _decode_location(text: str) -> PatchLocation:
    vals = [int(v) for v in text.split(",")]
    return PatchLocation(vals[0], vals[1], tuple(vals[2:6]), tuple(vals[6:10]))


_DEFAULT_CACHE = PatchEmbeddingCache()


def default_patch_cache() -> PatchEmbeddingCache:
    """Process-wide cache used when no explicit cache is passed."""
    return _DEFAULT_CACHE


@dataclass
class ScoreGrid:
    """Rank-similarity score per grid location for one (image, synset)."""

    locations: tuple[PatchLocation, ...]
    scores: np.ndarray
    config: SaliencyConfig
    width: int
    height: int
    synset_id: str
    cache_hit: bool = False

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (len(self.locations),):
            raise ValueError("one score per location required")


def score_grid(
    image: Image,
    synset_id: str,
    cfg: SaliencyConfig,
    backend: EncoderBackend,
    defmat: DefinitionMatrix,
    hier: Hierarchy,
    cache: PatchEmbeddingCache | None = None,
) -> ScoreGrid:
    """Descendant-maximized rank similarity at every grid location.

    Patch embeddings are computed once per (image, config, model) and
    cached, so scoring further synsets on the same image performs no
    encoder calls.
    """
    hier.synset(synset_id)
    pcache = cache if cache is not None else _DEFAULT_CACHE
    locations, means, hit = pcache.get_or_compute(image, cfg, backend)
    scores = simcore.max_rank_sim_rows(means, synset_id, hier, defmat)
    return ScoreGrid(
        locations=tuple(locations),
        scores=scores,
        config=cfg,
        width=image.width,
        height=image.height,
        synset_id=synset_id,
        cache_hit=hit,
    )


@dataclass
class SaliencyMap:
    """Per-pixel saliency in [0, 1]; dimensions equal the source image."""

    values: np.ndarray
    synset_id: str
    image_hash: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("saliency values must be a (H, W) array")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def to_gray_image(self) -> Image:
        """8-bit grayscale rendering, pixel = round(255 * y), half up."""
        pixels = np.floor(self.values * 255.0 + 0.5).astype(np.uint8)
        return Image(pixels)

    def to_png_bytes(self) -> bytes:
        return self.to_gray_image().to_png_bytes()

    def save_png(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_png_bytes())

    def to_cvis_bytes(self) -> bytes:
        head = CVIS_MAGIC + struct.pack("<HII", CVIS_VERSION, self.width, self.height)
        return head + self.values.astype("<f4").tobytes(order="C")

    def save_cvis(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_cvis_bytes())

    @classmethod
    def from_cvis_bytes(cls, blob: bytes, synset_id: str = "") -> "SaliencyMap":
        if blob[:4] != CVIS_MAGIC:
            raise CacheError(f"bad CVIS magic {blob[:4]!r}")
        version, width, height = struct.unpack_from("<HII", blob, 4)
        if version != CVIS_VERSION:
            raise CacheError(f"unsupported CVIS version {version}")
        data = np.frombuffer(blob, dtype="<f4", offset=14, count=width * height)
        return cls(values=data.reshape(height, width).astype(np.float64), synset_id=synset_id)

    @classmethod
    def load_cvis(cls, path: str | Path, synset_id: str = "") -> "SaliencyMap":
        return cls.from_cvis_bytes(Path(path).read_bytes(), synset_id=synset_id)


def _influence_rect(loc: PatchLocation, cfg: SaliencyConfig, width: int, height: int):
    if cfg.window_mode == "containment":
        return loc.large
    d = cfg.delta_l
    return (
        max(0, loc.i - d + 1),
        max(0, loc.j - d + 1),
        min(width, loc.i + d),
        min(height, loc.j + d),
    )


def aggregate(grid: ScoreGrid) -> SaliencyMap:
    """Average each pixel's window of location scores.

    A location contributes to a pixel when its large patch covers it
    (containment) or when the anchor lies within delta_l in both axes
    (symmetric). Pixels with an empty window get 0.
    """
    if len(grid.locations) == 0:
        raise ValueError("cannot aggregate an empty score grid")
    sums = np.zeros((grid.height, grid.width), dtype=np.float64)
    counts = np.zeros((grid.height, grid.width), dtype=np.int64)
    for loc, score in zip(grid.locations, grid.scores):
        x0, y0, x1, y1 = _influence_rect(loc, grid.config, grid.width, grid.height)
        if x0 < x1 and y0 < y1:
            sums[y0:y1, x0:x1] += score
            counts[y0:y1, x0:x1] += 1
    values = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return SaliencyMap(values=values, synset_id=grid.synset_id)


def compute_saliency(
    image: Image,
    synset_id: str,
    cfg: SaliencyConfig,
    backend: EncoderBackend,
    defmat: DefinitionMatrix,
    hier: Hierarchy,
    cache: PatchEmbeddingCache | None = None,
) -> SaliencyMap:
    """Full pipeline: score the patch grid, then aggregate per pixel."""
    grid = score_grid(image, synset_id, cfg, backend, defmat, hier, cache=cache)
    smap = aggregate(grid)
    smap.image_hash = image.content_hash()
    return smap


def _palette_gray(y: np.ndarray) -> np.ndarray:
    level = np.floor(y * 255.0 + 0.5)
    return np.repeat(level[:, :, np.newaxis], 3, axis=2)


def _palette_jet(y: np.ndarray) -> np.ndarray:
    # Classic four-segment jet ramp: blue -> cyan -> yellow -> red.
    v = 4.0 * y
    r = np.clip(np.minimum(v - 1.5, -v + 4.5), 0.0, 1.0)
    g = np.clip(np.minimum(v - 0.5, -v + 3.5), 0.0, 1.0)
    b = np.clip(np.minimum(v + 0.5, -v + 2.5), 0.0, 1.0)
    return np.floor(np.stack([r, g, b], axis=2) * 255.0 + 0.5)


def _palette_hot(y: np.ndarray) -> np.ndarray:
    r = np.clip(y * 3.0, 0.0, 1.0)
    g = np.clip(y * 3.0 - 1.0, 0.0, 1.0)
    b = np.clip(y * 3.0 - 2.0, 0.0, 1.0)
    return np.floor(np.stack([r, g, b], axis=2) * 255.0 + 0.5)


PALETTES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "gray": _palette_gray,
    "jet": _palette_jet,
    "hot": _palette_hot,
}


def _check_dims(image: Image, smap: SaliencyMap) -> None:
    if image.width != smap.width or image.height != smap.height:
        raise ValueError(
            f"map {smap.width}x{smap.height} does not match image {image.width}x{image.height}"
        )


def render_overlay(image: Image, smap: SaliencyMap, colormap: str = "jet") -> Image:
    """Alpha-blend the colorized map over the image (fixed alpha 0.5)."""
    _check_dims(image, smap)
    try:
        palette = PALETTES[colormap]
    except KeyError:
        raise ValueError(f"unknown colormap {colormap!r}; have {sorted(PALETTES)}") from None
    base = image.array.astype(np.float64)
    if image.channels == 1:
        base = np.repeat(base, 3, axis=2)
    tint = palette(smap.values)
    blended = 0.5 * tint + 0.5 * base
    return Image(np.floor(blended + 0.5).astype(np.uint8))


def render_mask(image: Image, smap: SaliencyMap) -> Image:
    """Interpolate between white and the image: out = y*x + (1-y)*255."""
    _check_dims(image, smap)
    y = smap.values[:, :, np.newaxis]
    out = y * image.array.astype(np.float64) + (1.0 - y) * 255.0
    return Image(np.floor(out + 0.5).astype(np.uint8))
