"""Class-agnostic over-segmentation of RGB rasters.

graph_segment follows the graph-based scheme: pixels are nodes of an
8-neighbor graph weighted by Euclidean RGB distance, edges are processed
in ascending (weight, pixel index) order, and two components merge when
the edge weight is within both adaptive thresholds tau(C) = k / |C|.
Because the merge graph is 8-connected, the result is then split into
4-connected components and anything smaller than min_size is folded into
its most color-similar 4-neighbor, so every output region is 4-connected
with ids dense in row-major first-appearance order.

merge_regions greedily joins the most similar adjacent pair (color
histogram intersection + size complement + bounding-box fill) until the
region count reaches the target.
"""

from __future__ import annotations

import heapq
import os

import numpy as np

from .errors import ConfigError, EmptyImageError, IoError, ParseError
from .netpbm import read_pgm, write_pgm

__all__ = [
    "RegionMap",
    "graph_segment",
    "merge_regions",
    "region_stats",
    "write_region_map",
    "read_region_map",
    "DEFAULT_K",
    "DEFAULT_MIN_SIZE",
    "DEFAULT_SIM_WEIGHTS",
]

DEFAULT_K = 300.0
DEFAULT_MIN_SIZE = 64
DEFAULT_SIM_WEIGHTS = {"color": 0.6, "size": 0.2, "fill": 0.2}

HIST_BINS = 25


class RegionMap:
    """Dense per-pixel region ids; every region is 4-connected."""

    __slots__ = ("labels", "region_count")

    def __init__(self, labels: np.ndarray, region_count: int):
        self.labels = np.asarray(labels, dtype=np.int32)
        self.region_count = int(region_count)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def areas(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.region_count)


def _find(parent: list, x: int) -> int:
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def _edges_8(h: int, w: int, color: np.ndarray):
    """(a, b, weight) arrays over right/down/down-right/down-left pairs, a < b."""
    idx = np.arange(h * w).reshape(h, w)
    pairs = []
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        ys = slice(0, h - dy)
        xs = slice(0, w - dx) if dx >= 0 else slice(-dx, w)
        ys2 = slice(dy, h)
        xs2 = slice(dx, w) if dx >= 0 else slice(0, w + dx)
        a = idx[ys, xs].ravel()
        b = idx[ys2, xs2].ravel()
        wgt = np.sqrt(((color[a] - color[b]) ** 2).sum(axis=1))
        pairs.append((a, b, wgt))
    a = np.concatenate([p[0] for p in pairs])
    b = np.concatenate([p[1] for p in pairs])
    wgt = np.concatenate([p[2] for p in pairs])
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    order = np.lexsort((hi, lo, wgt))
    return lo[order], hi[order], wgt[order]


def _four_cc(labels_flat: list | np.ndarray, h: int, w: int) -> tuple[np.ndarray, int]:
    """Split same-valued pixels into 4-connected components, ids dense in
    row-major first-appearance order."""
    lab = np.asarray(labels_flat).reshape(h, w)
    parent = list(range(h * w))
    size = [1] * (h * w)
    idx = np.arange(h * w).reshape(h, w)
    for dy, dx in ((0, 1), (1, 0)):
        a = idx[: h - dy, : w - dx].ravel()
        b = idx[dy:, dx:].ravel()
        same = lab[: h - dy, : w - dx].ravel() == lab[dy:, dx:].ravel()
        for x, y in zip(a[same].tolist(), b[same].tolist()):
            rx, ry = _find(parent, x), _find(parent, y)
            if rx != ry:
                if size[rx] < size[ry]:
                    rx, ry = ry, rx
                parent[ry] = rx
                size[rx] += size[ry]
    roots = np.fromiter((_find(parent, i) for i in range(h * w)), dtype=np.int64, count=h * w)
    dense = {}
    out = np.empty(h * w, dtype=np.int32)
    for i, r in enumerate(roots.tolist()):
        if r not in dense:
            dense[r] = len(dense)
        out[i] = dense[r]
    return out.reshape(h, w), len(dense)


def _region_adjacency(labels: np.ndarray) -> set[tuple[int, int]]:
    h, w = labels.shape
    pairs = set()
    for dy, dx in ((0, 1), (1, 0)):
        a = labels[: h - dy, : w - dx].ravel()
        b = labels[dy:, dx:].ravel()
        diff = a != b
        lo = np.minimum(a[diff], b[diff])
        hi = np.maximum(a[diff], b[diff])
        pairs.update(zip(lo.tolist(), hi.tolist()))
    return pairs


def _merge_small(labels: np.ndarray, count: int, color: np.ndarray, min_size: int) -> tuple[np.ndarray, int]:
    """Fold regions below min_size into their most color-similar 4-neighbor,
    smallest region first (ties by lowest id)."""
    areas = np.bincount(labels.ravel(), minlength=count).astype(np.int64)
    csum = np.zeros((count, 3))
    np.add.at(csum, labels.ravel(), color)
    neighbors = [set() for _ in range(count)]
    for a, b in _region_adjacency(labels):
        neighbors[a].add(b)
        neighbors[b].add(a)

    parent = list(range(count))
    heap = [(int(areas[r]), r) for r in range(count) if areas[r] < min_size]
    heapq.heapify(heap)
    while heap:
        a, r = heapq.heappop(heap)
        if _find(parent, r) != r or areas[r] != a or areas[r] >= min_size:
            continue
        if not neighbors[r]:
            break  # the whole raster is one region
        mean_r = csum[r] / areas[r]
        best, best_d = -1, np.inf
        for nb in sorted(neighbors[r]):
            mean_n = csum[nb] / areas[nb]
            d = float(((mean_r - mean_n) ** 2).sum())
            if d < best_d:
                best, best_d = nb, d
        keep, gone = (r, best) if r < best else (best, r)
        parent[gone] = keep
        areas[keep] += areas[gone]
        csum[keep] += csum[gone]
        neighbors[keep] |= neighbors[gone]
        neighbors[keep].discard(keep)
        neighbors[keep].discard(gone)
        for nb in neighbors[gone]:
            if nb != keep:
                neighbors[nb].discard(gone)
                neighbors[nb].add(keep)
        neighbors[gone] = set()
        if areas[keep] < min_size:
            heapq.heappush(heap, (int(areas[keep]), keep))
    root = np.fromiter((_find(parent, r) for r in range(count)), dtype=np.int64, count=count)
    return _relabel_dense(root[labels])


def _relabel_dense(labels: np.ndarray) -> tuple[np.ndarray, int]:
    flat = labels.ravel()
    uniq, inv = np.unique(flat, return_inverse=True)
    # np.unique sorts by old id; remap to row-major first appearance
    first = np.full(uniq.size, flat.size, dtype=np.int64)
    np.minimum.at(first, inv, np.arange(flat.size))
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(uniq.size)
    return rank[inv].reshape(labels.shape).astype(np.int32), uniq.size


def _check_image(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise EmptyImageError(f"expected non-empty [H,W,3] RGB raster, got {img.shape}")
    return img.astype(np.float64).reshape(-1, 3)


def graph_segment(image: np.ndarray, k: float = DEFAULT_K, min_size: int = DEFAULT_MIN_SIZE) -> RegionMap:
    """Graph-based segmentation with adaptive threshold tau(C) = k / |C|."""
    if k <= 0:
        raise ConfigError(f"k must be positive, got {k}")
    if min_size < 1:
        raise ConfigError(f"min_size must be >= 1, got {min_size}")
    color = _check_image(image)
    h, w = image.shape[0], image.shape[1]
    n = h * w

    parent = list(range(n))
    size = [1] * n
    thr = [float(k)] * n
    ea, eb, ew = _edges_8(h, w, color)
    for a, b, wt in zip(ea.tolist(), eb.tolist(), ew.tolist()):
        ra, rb = _find(parent, a), _find(parent, b)
        if ra == rb:
            continue
        if wt <= thr[ra] and wt <= thr[rb]:
            if size[ra] < size[rb]:
                ra, rb = rb, ra
            parent[rb] = ra
            size[ra] += size[rb]
            thr[ra] = wt + k / size[ra]

    roots = [_find(parent, i) for i in range(n)]
    labels, count = _four_cc(roots, h, w)
    labels, count = _merge_small(labels, count, color, min_size)
    return RegionMap(labels, count)


def _histograms(labels: np.ndarray, count: int, color: np.ndarray) -> np.ndarray:
    """Raw per-region color histograms, HIST_BINS bins per channel."""
    bins = (color.astype(np.int64) * HIST_BINS) // 256
    hist = np.zeros((count, 3 * HIST_BINS))
    flat = labels.ravel()
    for ch in range(3):
        np.add.at(hist, (flat, ch * HIST_BINS + bins[:, ch]), 1.0)
    return hist


def _similarity(a: int, b: int, hist, areas, boxes, total: int, wts) -> float:
    ha = hist[a] / (3.0 * areas[a])
    hb = hist[b] / (3.0 * areas[b])
    color_sim = float(np.minimum(ha, hb).sum())
    size_sim = 1.0 - (areas[a] + areas[b]) / total
    y0 = min(boxes[a][0], boxes[b][0])
    x0 = min(boxes[a][1], boxes[b][1])
    y1 = max(boxes[a][2], boxes[b][2])
    x1 = max(boxes[a][3], boxes[b][3])
    bb = (y1 - y0 + 1) * (x1 - x0 + 1)
    fill_sim = 1.0 - (bb - areas[a] - areas[b]) / total
    return wts["color"] * color_sim + wts["size"] * size_sim + wts["fill"] * fill_sim


def merge_regions(
    image: np.ndarray,
    rm: RegionMap,
    target_count: int,
    sim_weights: dict | None = None,
) -> RegionMap:
    """Greedy highest-similarity merging of adjacent regions down to target_count."""
    if target_count < 1:
        raise ConfigError(f"target_count must be >= 1, got {target_count}")
    wts = dict(DEFAULT_SIM_WEIGHTS if sim_weights is None else sim_weights)
    if set(wts) != {"color", "size", "fill"} or any(v < 0 for v in wts.values()):
        raise ConfigError(f"sim_weights needs non-negative color/size/fill, got {wts}")
    color = _check_image(image)
    labels = rm.labels
    if labels.shape != image.shape[:2]:
        raise ConfigError(f"region map {labels.shape} does not match image {image.shape[:2]}")
    count = rm.region_count
    if count <= target_count:
        return RegionMap(labels.copy(), count)

    total = labels.size
    areas = np.bincount(labels.ravel(), minlength=count).astype(np.int64)
    hist = _histograms(labels, count, color)
    ys, xs = np.indices(labels.shape)
    boxes = []
    for r in range(count):
        m = labels == r
        boxes.append((int(ys[m].min()), int(xs[m].min()), int(ys[m].max()), int(xs[m].max())))
    neighbors = [set() for _ in range(count)]
    for a, b in _region_adjacency(labels):
        neighbors[a].add(b)
        neighbors[b].add(a)

    parent = list(range(count))
    live = count
    while live > target_count:
        best_pair, best_sim = None, -np.inf
        for a in range(count):
            if _find(parent, a) != a:
                continue
            for b in sorted(neighbors[a]):
                if b <= a:
                    continue
                s = _similarity(a, b, hist, areas, boxes, total, wts)
                if s > best_sim:
                    best_sim, best_pair = s, (a, b)
        if best_pair is None:
            break
        a, b = best_pair
        parent[b] = a
        areas[a] += areas[b]
        hist[a] += hist[b]
        boxes[a] = (
            min(boxes[a][0], boxes[b][0]),
            min(boxes[a][1], boxes[b][1]),
            max(boxes[a][2], boxes[b][2]),
            max(boxes[a][3], boxes[b][3]),
        )
        neighbors[a] |= neighbors[b]
        neighbors[a].discard(a)
        neighbors[a].discard(b)
        for nb in neighbors[b]:
            if nb != a:
                neighbors[nb].discard(b)
                neighbors[nb].add(a)
        neighbors[b] = set()
        live -= 1

    root = np.fromiter((_find(parent, r) for r in range(count)), dtype=np.int64, count=count)
    merged, final = _relabel_dense(root[labels])
    return RegionMap(merged, final)


def region_stats(rm: RegionMap) -> dict:
    """Recount areas and verify the partition/connectivity invariants."""
    labels = rm.labels
    flat = labels.ravel()
    ids_ok = flat.min() >= 0 and flat.max() < rm.region_count if flat.size else False
    dense_ok = ids_ok and np.unique(flat).size == rm.region_count
    areas = np.bincount(flat, minlength=rm.region_count) if ids_ok else np.zeros(rm.region_count, dtype=np.int64)
    if dense_ok:
        _, cc = _four_cc(flat, labels.shape[0], labels.shape[1])
        connectivity_ok = cc == rm.region_count
    else:
        connectivity_ok = False
    return {
        "region_count": rm.region_count,
        "areas": areas,
        "connectivity_ok": bool(connectivity_ok and dense_ok),
    }


def write_region_map(path, rm: RegionMap) -> None:
    """16-bit P5 raster of ids plus a sidecar text record of the count."""
    if rm.region_count > 65536:
        raise IoError(f"{rm.region_count} regions exceed 16-bit id range")
    write_pgm(path, rm.labels.astype(np.uint16), maxval=65535)
    meta = os.fspath(path) + ".meta"
    try:
        with open(meta, "w", encoding="utf-8") as f:
            f.write(f"region_count\t{rm.region_count}\n")
    except OSError as e:
        raise IoError(f"cannot write {meta}: {e}") from e


def read_region_map(path) -> RegionMap:
    labels = read_pgm(path).astype(np.int32)
    meta = os.fspath(path) + ".meta"
    try:
        with open(meta, encoding="utf-8") as f:
            line = f.readline().strip()
    except OSError as e:
        raise IoError(f"cannot read {meta}: {e}") from e
    fields = line.split("\t")
    if len(fields) != 2 or fields[0] != "region_count":
        raise ParseError(f"bad sidecar record: {line!r}")
    count = int(fields[1])
    if labels.size and (labels.min() < 0 or labels.max() != count - 1):
        raise ParseError(
            f"declared count {count} does not match id range [0, {labels.max()}]"
        )
    return RegionMap(labels, count)
