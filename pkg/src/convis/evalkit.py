"""Quantitative evaluation: box localization metrics and OOD scoring.

Localization follows the standard saliency-benchmark recipe: threshold
the map, keep the largest connected component, take its bounding box,
and count samples whose IoU against ground truth clears 0.5, maximized
over a fixed threshold sweep. OOD scoring ranks test images against a
concept (or against training images for the image-image baseline) and
reports AUROC, openness, and the semantic distance between the concept
pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import simcore
from .encoder import EncoderBackend, Image, cosine
from .errors import ConfigError
from .lexdb import Hierarchy
from .saliency import (
    PatchEmbeddingCache,
    SaliencyConfig,
    SaliencyMap,
    compute_saliency,
)
from .simcore import DefinitionMatrix

__all__ = [
    "Box",
    "iou",
    "threshold_map",
    "largest_connected_component",
    "bounding_box",
    "max_box_acc",
    "auroc",
    "openness",
    "ood_score_maxrank",
    "ood_score_rank",
    "ood_score_imgimg",
    "OODSpec",
    "load_ood_spec",
    "run_ood_experiment",
    "WsolSample",
    "load_wsol_manifest",
    "run_wsol_experiment",
    "default_tau_grid",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with half-open pixel extents [min, max)."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    ix = max(0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    iy = max(0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def _map_values(smap) -> np.ndarray:
    values = smap.values if isinstance(smap, SaliencyMap) else np.asarray(smap)
    return np.asarray(values, dtype=np.float64)


def threshold_map(smap, tau: float) -> np.ndarray:
    """Boolean mask: pixel true iff y > tau, for tau in [0, 1]."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    return _map_values(smap) > tau


def largest_connected_component(mask: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """Keep only the maximal-area component of a boolean mask.

    Area ties go to the component holding the smallest pixel in row-major
    order. Empty input stays empty.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    if connectivity == 4:
        steps = ((-1, 0), (1, 0), (0, -1), (0, 1))
    else:
        steps = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0))

    visited = np.zeros_like(mask, dtype=bool)
    best: list[tuple[int, int]] = []
    # Scan order guarantees the first maximal component contains the
    # lexicographically smallest pixel of any tied component.
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or visited[sy, sx]:
                continue
            component = [(sy, sx)]
            visited[sy, sx] = True
            stack = [(sy, sx)]
            while stack:
                cy, cx = stack.pop()
                for dy, dx in steps:
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not visited[ny, nx]:
                        visited[ny, nx] = True
                        component.append((ny, nx))
                        stack.append((ny, nx))
            if len(component) > len(best):
                best = component
    out = np.zeros_like(mask)
    for cy, cx in best:
        out[cy, cx] = True
    return out


def bounding_box(mask: np.ndarray) -> Box | None:
    """Tight box around the true pixels; None for an empty mask."""
    mask = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    return Box(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def default_tau_grid() -> list[float]:
    """101 uniform thresholds 0.00, 0.01, ..., 1.00."""
    return [i / 100.0 for i in range(101)]


def box_from_map(smap, tau: float, connectivity: int = 8) -> Box | None:
    """Threshold, keep the largest component, box it; None if empty."""
    return bounding_box(largest_connected_component(threshold_map(smap, tau), connectivity))


def max_box_acc(
    maps: Sequence,
    gt: Sequence[Box],
    delta_hat: float = 0.5,
    tau_grid: Sequence[float] | None = None,
    connectivity: int = 8,
) -> tuple[float, float]:
    """Best-threshold fraction of samples whose extracted box matches GT.

    Returns (score, smallest maximizing tau). A sample whose thresholded
    mask is empty counts as a failure at that tau.
    """
    if tau_grid is None:
        tau_grid = default_tau_grid()
    if len(tau_grid) == 0:
        raise ValueError("tau_grid must be non-empty")
    if len(maps) != len(gt) or len(maps) == 0:
        raise ValueError("need equally many (>= 1) maps and ground-truth boxes")
    best_score = -1.0
    best_tau = float(tau_grid[0])
    for tau in tau_grid:
        hits = 0
        for smap, gt_box in zip(maps, gt):
            box = box_from_map(smap, tau, connectivity)
            if box is not None and iou(box, gt_box) >= delta_hat:
                hits += 1
        score = hits / len(maps)
        if score > best_score:
            best_score = score
            best_tau = float(tau)
    return best_score, best_tau


def _check_scores(scores: Sequence[float], side: str) -> np.ndarray:
    arr = np.asarray(list(scores), dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{side} score list must be non-empty")
    return arr


def _auroc_pairs(pos: np.ndarray, neg: np.ndarray) -> float:
    wins = np.count_nonzero(pos[:, np.newaxis] > neg[np.newaxis, :])
    ties = np.count_nonzero(pos[:, np.newaxis] == neg[np.newaxis, :])
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def _auroc_ranks(pos: np.ndarray, neg: np.ndarray) -> float:
    # Mann-Whitney U via midranks; exact for tied values.
    both = np.concatenate([pos, neg])
    order = np.argsort(both, kind="mergesort")
    ranks = np.empty(both.size, dtype=np.float64)
    sorted_vals = both[order]
    idx = 0
    while idx < both.size:
        end = idx
        while end + 1 < both.size and sorted_vals[end + 1] == sorted_vals[idx]:
            end += 1
        ranks[order[idx : end + 1]] = 0.5 * (idx + end) + 1.0
        idx = end + 1
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return u / (pos.size * neg.size)


def auroc(pos_scores: Sequence[float], neg_scores: Sequence[float]) -> float:
    """Probability that a positive outranks a negative; ties count half.

    Exact pair counting for small inputs, midrank Mann-Whitney for large
    ones (both agree exactly, including ties).
    """
    pos = _check_scores(pos_scores, "positive")
    neg = _check_scores(neg_scores, "negative")
    if pos.size * neg.size <= 1_000_000:
        return float(_auroc_pairs(pos, neg))
    return float(_auroc_ranks(pos, neg))


def openness(n_plus: int, n_minus: int) -> float:
    """Class-set imbalance descriptor 1 - sqrt(2a / (2a + b))."""
    if n_plus < 1:
        raise ValueError("need at least one known class")
    if n_minus < 0:
        raise ValueError("unknown class count cannot be negative")
    return 1.0 - float(np.sqrt(2.0 * n_plus / (2.0 * n_plus + n_minus)))


def ood_score_maxrank(
    x_emb: np.ndarray, s_plus: str, hier: Hierarchy, defmat: DefinitionMatrix
) -> float:
    """Descendant-maximized rank similarity as an in-distribution score."""
    return simcore.max_rank_sim(x_emb, s_plus, hier, defmat)


def ood_score_rank(x_emb: np.ndarray, s_plus: str, defmat: DefinitionMatrix) -> float:
    """Non-maximized ablation: plain rank similarity of the concept."""
    return simcore.rank_sim(x_emb, s_plus, defmat)


def ood_score_imgimg(x_emb: np.ndarray, train_embeddings: Sequence[np.ndarray]) -> float:
    """Best cosine against the known-class training embeddings."""
    if len(train_embeddings) == 0:
        raise ValueError("training embedding set must be non-empty")
    return max(cosine(t, x_emb) for t in train_embeddings)


@dataclass
class OODSpec:
    """Known/unknown class-set pair plus train/test image manifests."""

    s_plus: str
    s_minus: str
    lambda_plus: tuple[str, ...]
    lambda_minus: tuple[str, ...]
    train: tuple[tuple[str, str], ...] = ()
    test: tuple[tuple[str, str], ...] = ()
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        plus, minus = set(self.lambda_plus), set(self.lambda_minus)
        if not plus:
            raise ConfigError("lambda_plus must be non-empty")
        overlap = plus & minus
        if overlap:
            raise ConfigError(f"known/unknown class sets overlap: {sorted(overlap)}")
        for path, cls in self.train:
            if cls not in plus:
                raise ConfigError(f"train item {path!r} has non-known class {cls!r}")
        for path, cls in self.test:
            if cls not in plus and cls not in minus:
                raise ConfigError(f"test item {path!r} has unlisted class {cls!r}")

    def test_split(self) -> tuple[list[str], list[str]]:
        plus = set(self.lambda_plus)
        te_plus = [p for p, c in self.test if c in plus]
        te_minus = [p for p, c in self.test if c not in plus]
        return te_plus, te_minus


def load_ood_spec(path: str | Path) -> OODSpec:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        return OODSpec(
            s_plus=str(raw["s_plus"]),
            s_minus=str(raw["s_minus"]),
            lambda_plus=tuple(str(c) for c in raw["lambda_plus"]),
            lambda_minus=tuple(str(c) for c in raw["lambda_minus"]),
            train=tuple((str(r["path"]), str(r["class"])) for r in raw.get("train", [])),
            test=tuple((str(r["path"]), str(r["class"])) for r in raw.get("test", [])),
            base_dir=path.parent,
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing OOD spec field {exc.args[0]!r}") from exc


OOD_METHODS = ("max_rank", "rank", "img_img")


def run_ood_experiment(
    spec: OODSpec,
    backend: EncoderBackend,
    hier: Hierarchy,
    defmat: DefinitionMatrix,
    methods: Sequence[str] = OOD_METHODS,
) -> dict:
    """Score the test split with each method and report AUROCs.

    Image paths are resolved relative to the spec file. The report also
    carries openness (from the class-set sizes) and the undirected
    hierarchy distance between the concept pair.
    """
    for m in methods:
        if m not in OOD_METHODS:
            raise ConfigError(f"unknown OOD method {m!r}; have {OOD_METHODS}")
    te_plus_paths, te_minus_paths = spec.test_split()
    if not te_plus_paths or not te_minus_paths:
        raise ConfigError("both test sides (known and unknown classes) must be non-empty")

    def embed_paths(paths: list[str]) -> list[np.ndarray]:
        images = [Image.load(spec.base_dir / p) for p in paths]
        return backend.embed_image_batch(images)

    emb_plus = embed_paths(te_plus_paths)
    emb_minus = embed_paths(te_minus_paths)
    train_embs: list[np.ndarray] = []
    if "img_img" in methods:
        if not spec.train:
            raise ConfigError("img_img method requires a non-empty train set")
        train_embs = embed_paths([p for p, _ in spec.train])

    scores: dict[str, tuple[list[float], list[float]]] = {}
    for method in methods:
        if method == "max_rank":
            fn = lambda e: ood_score_maxrank(e, spec.s_plus, hier, defmat)
        elif method == "rank":
            fn = lambda e: ood_score_rank(e, spec.s_plus, defmat)
        else:
            fn = lambda e: ood_score_imgimg(e, train_embs)
        scores[method] = ([fn(e) for e in emb_plus], [fn(e) for e in emb_minus])

    return {
        "s_plus": spec.s_plus,
        "s_minus": spec.s_minus,
        "counts": {
            "lambda_plus": len(spec.lambda_plus),
            "lambda_minus": len(spec.lambda_minus),
            "train": len(spec.train),
            "test_plus": len(te_plus_paths),
            "test_minus": len(te_minus_paths),
        },
        "openness": openness(len(spec.lambda_plus), len(spec.lambda_minus)),
        "semantic_distance": hier.semantic_distance(spec.s_plus, spec.s_minus),
        "auroc": {m: auroc(*scores[m]) for m in methods},
        "config": {"backend_model": backend.model_id, "methods": list(methods)},
    }


@dataclass(frozen=True)
class WsolSample:
    """One localization sample: image path, GT box, concept to explain."""

    path: str
    box: Box
    concept: str


def load_wsol_manifest(path: str | Path) -> list[WsolSample]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        raw = json.load(fh)
    samples = []
    for n, rec in enumerate(raw):
        try:
            x0, y0, x1, y1 = (int(v) for v in rec["box"])
            samples.append(
                WsolSample(path=str(rec["path"]), box=Box(x0, y0, x1, y1), concept=str(rec["concept"]))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: bad manifest entry {n}: {exc}") from exc
    return samples


def run_wsol_experiment(
    samples: Sequence[WsolSample],
    cfg: SaliencyConfig,
    backend: EncoderBackend,
    defmat: DefinitionMatrix,
    hier: Hierarchy,
    delta_hat: float = 0.5,
    tau_grid: Sequence[float] | None = None,
    concept_override: str | None = None,
    base_dir: str | Path = ".",
    cache: PatchEmbeddingCache | None = None,
) -> dict:
    """Compute saliency per sample and evaluate MaxBoxAcc."""
    if not samples:
        raise ConfigError("WSOL manifest is empty")
    base = Path(base_dir)
    maps: list[SaliencyMap] = []
    boxes: list[Box] = []
    for sample in samples:
        concept = concept_override or sample.concept
        image = Image.load(base / sample.path)
        maps.append(compute_saliency(image, concept, cfg, backend, defmat, hier, cache=cache))
        boxes.append(sample.box)
    score, tau = max_box_acc(maps, boxes, delta_hat=delta_hat, tau_grid=tau_grid)
    return {
        "max_box_acc": score,
        "best_tau": tau,
        "delta_hat": delta_hat,
        "samples": len(samples),
        "config": {
            "backend_model": backend.model_id,
            "delta_s": cfg.delta_s,
            "delta_l": cfg.delta_l,
            "omega": cfg.omega,
            "window_mode": cfg.window_mode,
            "boundary_policy": cfg.boundary_policy,
            "concept_override": concept_override,
        },
    }
