"""Scene parsing pipeline: multi-scale context windows around grid-cell
centers, tile classification fused across scales into a semantic grid map,
class-agnostic segmentation, and per-region majority voting down to pixels.

Windows near the border are completed by reflect padding; all windows are
nearest-neighbor resized to the classifier's input size.  Grid cells store
output label ids (the classifier's label table), not raw head indices.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import (
    ClassifierError,
    ConfigError,
    ExtentMismatchError,
    IncompatibleCheckpointError,
    OutOfBoundsError,
    SceneParseError,
    ShapeError,
)
from .fusion import DEFAULT_SCALE_WEIGHTS
from .segmentation import DEFAULT_K, DEFAULT_MIN_SIZE, RegionMap, graph_segment, merge_regions

__all__ = [
    "ContextWindowSpec",
    "SemanticGridMap",
    "ParseConfig",
    "OracleClassifier",
    "reflect_indices",
    "extract_context_windows",
    "build_grid_map",
    "integrate_semantics",
    "parse_image",
]

PAPER_WINDOW_SIZES = (56, 112, 224)


@dataclass(frozen=True)
class ContextWindowSpec:
    """Square context windows, smallest to largest, resized to one input size."""

    sizes: tuple[int, ...] = PAPER_WINDOW_SIZES
    canonical_input: int = PAPER_WINDOW_SIZES[0]
    padding: str = "reflect"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if not self.sizes or any(s < 1 for s in self.sizes):
            raise ConfigError(f"window sizes must be >= 1, got {self.sizes}")
        if any(a >= b for a, b in zip(self.sizes, self.sizes[1:])):
            raise ConfigError(f"window sizes must be strictly increasing, got {self.sizes}")
        if self.canonical_input < 1:
            raise ConfigError(f"canonical_input must be >= 1, got {self.canonical_input}")
        if self.padding != "reflect":
            raise ConfigError(f"only reflect padding is supported, got {self.padding!r}")


def reflect_indices(start: int, length: int, n: int) -> np.ndarray:
    """Indices start..start+length-1 folded into [0, n) by edge reflection
    (period 2n-2, edge samples not repeated)."""
    idx = np.arange(start, start + length)
    if n == 1:
        return np.zeros(length, dtype=np.int64)
    period = 2 * n - 2
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def _resize_nearest(patch: np.ndarray, out_size: int) -> np.ndarray:
    src = patch.shape[0]
    idx = (np.arange(out_size) * src) // out_size
    return patch[np.ix_(idx, idx)]


def extract_context_windows(raster: np.ndarray, center: tuple[int, int], spec: ContextWindowSpec) -> list[np.ndarray]:
    """Windows of every configured size centered on `center`, each resized
    to [canonical, canonical, 3]."""
    h, w = raster.shape[:2]
    cy, cx = int(center[0]), int(center[1])
    if not (0 <= cy < h and 0 <= cx < w):
        raise OutOfBoundsError(f"center ({cy},{cx}) outside {h}x{w} raster")
    out = []
    for size in spec.sizes:
        half = size // 2
        rows = reflect_indices(cy - half, size, h)
        cols = reflect_indices(cx - half, size, w)
        win = raster[np.ix_(rows, cols)]
        out.append(_resize_nearest(win, spec.canonical_input))
    return out


@dataclass
class SemanticGridMap:
    """Per-cell fused labels on a regular lattice covering the raster.

    Cell (gy, gx) covers pixel rows [gy*stride, (gy+1)*stride) and is
    classified from windows centered on the cell center (clamped to the
    raster edge for the trailing partial cells).
    """

    stride: int
    origin: int
    height: int
    width: int
    cell_labels: np.ndarray
    class_ids: list[int]
    cell_probs: np.ndarray | None = None

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.cell_labels.shape


def _cell_centers(extent: int, stride: int, origin: int) -> np.ndarray:
    count = (extent + stride - 1) // stride
    return np.minimum(origin + stride * np.arange(count), extent - 1)


def build_grid_map(
    raster: np.ndarray,
    classifier,
    spec: ContextWindowSpec,
    stride: int,
    scale_weights=None,
    keep_probs: bool = False,
    workers: int = 1,
) -> SemanticGridMap:
    """Classify every grid cell's context windows and fuse across scales.

    The classifier exposes either probs(patch) -> probability vector, a
    batched probs_batch([B,3,s,s] in [0,1]) fast path, or probs_at(raster,
    y, x) for location oracles.  Cells are independent; evaluation order
    never changes the result.
    """
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise ShapeError(f"expected [H,W,3] raster, got {raster.shape}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if scale_weights is None:
        scale_weights = DEFAULT_SCALE_WEIGHTS if len(spec.sizes) == 3 else (1.0,) * len(spec.sizes)
    w = np.asarray(scale_weights, dtype=np.float64)
    if w.shape != (len(spec.sizes),) or np.any(w <= 0):
        raise ConfigError(f"need {len(spec.sizes)} positive scale weights, got {scale_weights}")

    h, width = raster.shape[:2]
    origin = stride // 2
    cys = _cell_centers(h, stride, origin)
    cxs = _cell_centers(width, stride, origin)
    gh, gw = len(cys), len(cxs)
    class_ids = list(getattr(classifier, "label_ids", []))

    if hasattr(classifier, "probs_at"):
        fused = np.empty((gh, gw, 0))
        labels = np.empty((gh, gw), dtype=np.int32)
        for gy, cy in enumerate(cys):
            for gx, cx in enumerate(cxs):
                try:
                    p = np.asarray(classifier.probs_at(raster, int(cy), int(cx)), dtype=np.float64)
                except SceneParseError as e:
                    raise ClassifierError(f"cell ({gy},{gx}): {e}") from e
                if fused.shape[2] != p.size:
                    fused = np.empty((gh, gw, p.size))
                fused[gy, gx] = p  # every scale sees the same center pixel
                labels[gy, gx] = np.argmax(p)
    else:
        n_scales = len(spec.sizes)
        patches = np.empty((gh * gw, n_scales, spec.canonical_input, spec.canonical_input, 3), dtype=raster.dtype)
        for gy, cy in enumerate(cys):
            for gx, cx in enumerate(cxs):
                for s, win in enumerate(extract_context_windows(raster, (int(cy), int(cx)), spec)):
                    patches[gy * gw + gx, s] = win

        flat = patches.reshape(gh * gw * n_scales, spec.canonical_input, spec.canonical_input, 3)
        if hasattr(classifier, "probs_batch"):
            x = flat.transpose(0, 3, 1, 2).astype(np.float64) / 255.0

            def run(chunk):
                return classifier.probs_batch(x[chunk])

            chunks = [slice(i, min(i + 256, len(x))) for i in range(0, len(x), 256)]
            try:
                if workers > 1:
                    with ThreadPoolExecutor(max_workers=workers) as pool:
                        parts = list(pool.map(run, chunks))
                else:
                    parts = [run(c) for c in chunks]
            except SceneParseError as e:
                raise ClassifierError(str(e)) from e
            probs = np.concatenate(parts, axis=0)
        else:
            probs = None
            for i, patch in enumerate(flat):
                cell = divmod(i // n_scales, gw)
                try:
                    p = np.asarray(classifier.probs(patch), dtype=np.float64)
                except SceneParseError as e:
                    raise ClassifierError(f"cell {cell}: {e}") from e
                if probs is None:
                    probs = np.empty((len(flat), p.size))
                probs[i] = p
        per_scale = probs.reshape(gh * gw, n_scales, -1)
        fused = ((w[None, :, None] * per_scale).sum(axis=1) / w.sum()).reshape(gh, gw, -1)
        labels = np.argmax(fused, axis=2).astype(np.int32)

    if not class_ids:
        class_ids = list(range(1, fused.shape[2] + 1))
    if len(class_ids) != fused.shape[2]:
        raise ClassifierError(f"classifier returned {fused.shape[2]} probabilities for {len(class_ids)} labels")
    id_table = np.asarray(class_ids, dtype=np.int32)
    return SemanticGridMap(
        stride=stride,
        origin=origin,
        height=h,
        width=width,
        cell_labels=id_table[labels],
        class_ids=class_ids,
        cell_probs=fused if keep_probs else None,
    )


def integrate_semantics(grid: SemanticGridMap, regions: RegionMap) -> np.ndarray:
    """Majority vote of grid-cell labels inside each region; ties go to the
    lowest label id.  Returns the per-pixel label raster."""
    if regions.shape != (grid.height, grid.width):
        raise ExtentMismatchError(f"regions {regions.shape} vs grid raster {grid.height}x{grid.width}")
    gh, gw = grid.grid_shape
    cy = np.minimum(np.arange(grid.height) // grid.stride, gh - 1)
    cx = np.minimum(np.arange(grid.width) // grid.stride, gw - 1)
    pixel_labels = grid.cell_labels[np.ix_(cy, cx)]
    n_ids = int(grid.cell_labels.max()) + 1
    votes = np.zeros((regions.region_count, n_ids), dtype=np.int64)
    np.add.at(votes, (regions.labels.ravel(), pixel_labels.ravel()), 1)
    winner = np.argmax(votes, axis=1).astype(np.int32)
    return winner[regions.labels]


@dataclass(frozen=True)
class ParseConfig:
    """Everything parse_image needs beyond the checkpoint itself."""

    window_sizes: tuple[int, ...] | None = None
    stride: int | None = None
    scale_weights: tuple[float, ...] | None = None
    k: float = DEFAULT_K
    min_size: int = DEFAULT_MIN_SIZE
    target_count: int | None = None
    workers: int = 1
    keep_probs: bool = False
    expected_labels: tuple[str, ...] | None = None


class OracleClassifier:
    """Ground-truth lookup classifier: one-hot of the truth raster at the
    queried center pixel.  Truth values are 1-based label ids; 0 (void)
    yields a one-hot for the lowest class."""

    def __init__(self, truth: np.ndarray, n_classes: int | None = None):
        t = np.asarray(truth)
        if t.ndim != 2:
            raise ShapeError(f"truth raster must be 2-D, got {t.shape}")
        self.truth = t.astype(np.int32)
        self.n_classes = int(n_classes if n_classes is not None else self.truth.max())
        if self.n_classes < 1:
            raise ConfigError("oracle needs at least one class")
        self.label_ids = list(range(1, self.n_classes + 1))

    def probs_at(self, raster: np.ndarray, y: int, x: int) -> np.ndarray:
        del raster
        p = np.zeros(self.n_classes)
        label = int(self.truth[y, x])
        p[max(0, min(label - 1, self.n_classes - 1))] = 1.0
        return p


def windows_for_classifier(input_size: int, sizes: tuple[int, ...] | None = None) -> ContextWindowSpec:
    """Default window pyramid: the classifier's input size, then 2x and 4x."""
    if sizes is None:
        sizes = (input_size, 2 * input_size, 4 * input_size)
    return ContextWindowSpec(sizes=tuple(sizes), canonical_input=input_size)


@contextmanager
def _stage(name: str):
    try:
        yield
    except SceneParseError as e:
        raise type(e)(f"{name}: {e}") from e


def parse_image(
    raster: np.ndarray,
    classifier,
    config: ParseConfig = ParseConfig(),
) -> tuple[np.ndarray, SemanticGridMap, RegionMap]:
    """Full pipeline: grid map -> segmentation -> majority vote.

    Returns (label raster, grid map, region map).  Deterministic for a
    fixed classifier and config.
    """
    if config.expected_labels is not None:
        have = tuple(getattr(classifier, "labels", ()))
        if have != tuple(config.expected_labels):
            raise IncompatibleCheckpointError(
                f"checkpoint labels {have} do not match expected {tuple(config.expected_labels)}"
            )
    input_size = getattr(classifier, "input_size", None)
    if input_size is not None:
        spec = windows_for_classifier(input_size, config.window_sizes)
    else:
        sizes = config.window_sizes or PAPER_WINDOW_SIZES
        spec = ContextWindowSpec(sizes=tuple(sizes), canonical_input=min(sizes))
    stride = config.stride if config.stride is not None else max(1, spec.sizes[0] // 2)

    with _stage("grid"):
        grid = build_grid_map(
            raster,
            classifier,
            spec,
            stride,
            scale_weights=config.scale_weights,
            keep_probs=config.keep_probs,
            workers=config.workers,
        )
    with _stage("segment"):
        regions = graph_segment(raster, config.k, config.min_size)
        if config.target_count is not None:
            regions = merge_regions(raster, regions, config.target_count)
    with _stage("integrate"):
        labels = integrate_semantics(grid, regions)
    return labels, grid, regions
