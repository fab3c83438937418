"""Independent brute-force reference implementations.

Everything here is deliberately naive (nested loops, no caching, no
sorting shortcuts, union-find instead of BFS, etc.) and works from plain
data (parent maps, arrays) so it shares no code paths with the package.
"""

from __future__ import annotations

import math

import numpy as np


def cosine_ref(a, b) -> float:
    a = [float(v) for v in np.asarray(a).reshape(-1)]
    b = [float(v) for v in np.asarray(b).reshape(-1)]
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    value = dot / (na * nb)
    return max(-1.0, min(1.0, value))


def up_closure_ref(parent_map: dict[str, tuple[str, ...]], start: str) -> set[str]:
    """Reflexive ancestor closure by repeated parent lookup."""
    out = {start}
    frontier = [start]
    while frontier:
        node = frontier.pop()
        for parent in parent_map.get(node, ()):
            if parent not in out:
                out.add(parent)
                frontier.append(parent)
    return out


def descendants_ref(parent_map: dict[str, tuple[str, ...]], target: str) -> set[str]:
    """Reflexive descendant set: nodes whose ancestor closure hits target."""
    return {node for node in parent_map if target in up_closure_ref(parent_map, node)}


def all_pairs_distance_ref(parent_map: dict[str, tuple[str, ...]]) -> dict:
    """Undirected shortest paths by per-source BFS over a rebuilt adjacency."""
    adjacency: dict[str, set[str]] = {n: set() for n in parent_map}
    for node, parents in parent_map.items():
        for p in parents:
            adjacency[node].add(p)
            adjacency[p].add(node)
    dist: dict[tuple[str, str], int] = {}
    for source in parent_map:
        seen = {source: 0}
        queue = [source]
        while queue:
            nxt = []
            for node in queue:
                for nb in adjacency[node]:
                    if nb not in seen:
                        seen[nb] = seen[node] + 1
                        nxt.append(nb)
            queue = nxt
        for node, d in seen.items():
            dist[(source, node)] = d
    return dist


def rank_sim_ref(z_by_id: dict[str, float], target: str) -> float:
    smaller = 0
    for sid in z_by_id:
        if z_by_id[sid] < z_by_id[target]:
            smaller += 1
    return smaller / len(z_by_id)


def z_by_id_ref(embedding, def_vectors: dict[str, np.ndarray]) -> dict[str, float]:
    return {sid: cosine_ref(embedding, vec) for sid, vec in def_vectors.items()}


def max_rank_sim_ref(
    embedding,
    target: str,
    parent_map: dict[str, tuple[str, ...]],
    def_vectors: dict[str, np.ndarray],
) -> float:
    z = z_by_id_ref(embedding, def_vectors)
    members = descendants_ref(parent_map, target)
    return max(rank_sim_ref(z, sid) for sid in members)


def _axis_rect_ref(anchor: int, delta: int, size: int, policy: str) -> tuple[int, int]:
    if policy == "fit-only":
        return anchor, anchor + delta
    start = min(anchor, size - delta)
    if start < 0:
        start = 0
    return start, min(start + delta, size)


def grid_anchors_ref(width, height, delta_l, omega, policy) -> list[tuple[int, int]]:
    anchors = []
    if policy == "fit-only":
        j = 0
        while j + delta_l <= height:
            i = 0
            while i + delta_l <= width:
                anchors.append((i, j))
                i += omega
            j += omega
    else:
        j = 0
        while j < height:
            i = 0
            while i < width:
                anchors.append((i, j))
                i += omega
            j += omega
    return anchors


def saliency_ref(
    image,
    target: str,
    backend,
    parent_map: dict[str, tuple[str, ...]],
    definitions: dict[str, str],
    delta_s: int,
    delta_l: int,
    omega: int,
    window_mode: str,
    boundary_policy: str,
) -> np.ndarray:
    """Direct transcription of the saliency procedure, one step at a time.

    Embeds both patches at every anchor, averages, ranks against every
    definition embedding with a counting loop, maximizes over the
    descendant set, then averages per pixel with an explicit membership
    loop over all locations. No caching, no vectorized ranking.
    """
    from convis.encoder import Image as CvImage

    arr = image.array
    height, width = arr.shape[0], arr.shape[1]
    def_vectors = {sid: backend.embed_text(text) for sid, text in definitions.items()}
    members = descendants_ref(parent_map, target)

    scored: list[tuple[int, int, float]] = []
    for (i, j) in grid_anchors_ref(width, height, delta_l, omega, boundary_policy):
        sx0, sx1 = _axis_rect_ref(i, delta_s, width, boundary_policy)
        sy0, sy1 = _axis_rect_ref(j, delta_s, height, boundary_policy)
        lx0, lx1 = _axis_rect_ref(i, delta_l, width, boundary_policy)
        ly0, ly1 = _axis_rect_ref(j, delta_l, height, boundary_policy)
        e_small = backend.embed_image(CvImage(arr[sy0:sy1, sx0:sx1]))
        e_large = backend.embed_image(CvImage(arr[ly0:ly1, lx0:lx1]))
        local = (e_small + e_large) / np.float32(2.0)
        z = z_by_id_ref(local, def_vectors)
        best = max(rank_sim_ref(z, sid) for sid in members)
        scored.append((i, j, best))

    out = np.zeros((height, width), dtype=np.float64)
    for py in range(height):
        for px in range(width):
            window: list[float] = []
            for (i, j, score) in scored:
                if window_mode == "symmetric":
                    inside = abs(i - px) < delta_l and abs(j - py) < delta_l
                else:
                    lx0, lx1 = _axis_rect_ref(i, delta_l, width, boundary_policy)
                    ly0, ly1 = _axis_rect_ref(j, delta_l, height, boundary_policy)
                    inside = lx0 <= px < lx1 and ly0 <= py < ly1
                if inside:
                    window.append(score)
            out[py, px] = sum(window) / len(window) if window else 0.0
    return out


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def components_ref(mask: np.ndarray, connectivity: int = 8) -> list[set[tuple[int, int]]]:
    """Connected components via union-find; returned in discovery order."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    uf = _UnionFind(h * w)
    if connectivity == 4:
        offsets = [(-1, 0), (0, -1)]
    else:
        offsets = [(-1, -1), (-1, 0), (-1, 1), (0, -1)]
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            for dy, dx in offsets:
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and mask[ny, nx]:
                    uf.union(y * w + x, ny * w + nx)
    groups: dict[int, set[tuple[int, int]]] = {}
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                groups.setdefault(uf.find(y * w + x), set()).add((y, x))
    return [groups[k] for k in sorted(groups)]


def largest_component_ref(mask: np.ndarray, connectivity: int = 8) -> np.ndarray:
    comps = components_ref(mask, connectivity)
    out = np.zeros_like(np.asarray(mask, dtype=bool))
    if not comps:
        return out
    best_size = max(len(c) for c in comps)
    best = min(
        (c for c in comps if len(c) == best_size),
        key=lambda c: min(c),
    )
    for y, x in best:
        out[y, x] = True
    return out


def box_ref(mask: np.ndarray) -> tuple[int, int, int, int] | None:
    pixels = [(y, x) for y in range(mask.shape[0]) for x in range(mask.shape[1]) if mask[y, x]]
    if not pixels:
        return None
    ys = [p[0] for p in pixels]
    xs = [p[1] for p in pixels]
    return (min(xs), min(ys), max(xs) + 1, max(ys) + 1)


def iou_ref(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    inter = max(0, iw) * max(0, ih)
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    return inter / (area_a + area_b - inter)


def max_box_acc_ref(value_maps, gt_boxes, delta_hat: float, taus) -> tuple[float, float]:
    best_score, best_tau = -1.0, float(taus[0])
    for tau in taus:
        hits = 0
        for values, gt in zip(value_maps, gt_boxes):
            mask = np.asarray(values) > tau
            component = largest_component_ref(mask, 8)
            box = box_ref(component)
            if box is not None and iou_ref(box, gt) >= delta_hat:
                hits += 1
        score = hits / len(value_maps)
        if score > best_score:
            best_score, best_tau = score, float(tau)
    return best_score, best_tau


def auroc_ref(pos, neg) -> float:
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))
