import numpy as np
import pytest

from sceneparse import model, parser, segmentation
from sceneparse.errors import (
    ClassifierError,
    ConfigError,
    ExtentMismatchError,
    IncompatibleCheckpointError,
    OutOfBoundsError,
    ShapeError,
)
from tests.conftest import make_scene


def reflect_loops(start, length, n):
    """Bouncing-walk reflection oracle (edge samples not repeated)."""
    out = []
    for i in range(start, start + length):
        j = i
        if n == 1:
            out.append(0)
            continue
        while j < 0 or j > n - 1:
            j = -j if j < 0 else 2 * (n - 1) - j
        out.append(j)
    return out


def truth_regions(truth):
    labels, count = segmentation._four_cc(truth.ravel(), *truth.shape)
    return segmentation.RegionMap(labels, count)


class TestReflectIndices:
    @pytest.mark.parametrize("n", [1, 2, 3, 7, 10])
    def test_matches_bounce_oracle(self, n):
        for start in range(-3 * n, 2 * n):
            got = parser.reflect_indices(start, 2 * n + 3, n)
            assert list(got) == reflect_loops(start, 2 * n + 3, n), (start, n)

    def test_interior_is_identity(self):
        assert list(parser.reflect_indices(2, 5, 10)) == [2, 3, 4, 5, 6]

    def test_matches_numpy_pad(self):
        vals = np.arange(9.0)
        pad = 20
        padded = np.pad(vals, (pad, pad), mode="reflect")
        got = vals[parser.reflect_indices(-pad, 9 + 2 * pad, 9)]
        assert np.array_equal(got, padded)


class TestContextWindows:
    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            parser.ContextWindowSpec(sizes=(56, 56, 224))
        with pytest.raises(ConfigError):
            parser.ContextWindowSpec(sizes=())
        with pytest.raises(ConfigError):
            parser.ContextWindowSpec(padding="zero")

    def test_interior_window_is_direct_slice(self, rng):
        raster = rng.integers(0, 256, size=(40, 40, 3), dtype=np.uint8)
        spec = parser.ContextWindowSpec(sizes=(8,), canonical_input=8)
        (win,) = parser.extract_context_windows(raster, (20, 20), spec)
        assert np.array_equal(win, raster[16:24, 16:24])

    def test_resize_matches_index_formula(self, rng):
        raster = rng.integers(0, 256, size=(40, 40, 3), dtype=np.uint8)
        spec = parser.ContextWindowSpec(sizes=(8, 16), canonical_input=8)
        win8, win16 = parser.extract_context_windows(raster, (20, 20), spec)
        big = raster[12:28, 12:28]
        for y in range(8):
            for x in range(8):
                assert (win16[y, x] == big[(y * 16) // 8, (x * 16) // 8]).all()
        assert np.array_equal(win8, raster[16:24, 16:24])

    def test_border_window_matches_numpy_pad(self, rng):
        raster = rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8)
        spec = parser.ContextWindowSpec(sizes=(9,), canonical_input=9)
        (win,) = parser.extract_context_windows(raster, (0, 11), spec)
        padded = np.pad(raster, ((4, 4), (4, 4), (0, 0)), mode="reflect")
        assert np.array_equal(win, padded[0:9, 11:20])

    def test_window_larger_than_raster(self, rng):
        raster = rng.integers(0, 256, size=(6, 6, 3), dtype=np.uint8)
        spec = parser.ContextWindowSpec(sizes=(24,), canonical_input=24)
        (win,) = parser.extract_context_windows(raster, (3, 3), spec)
        assert win.shape == (24, 24, 3)

    def test_center_out_of_bounds(self, rng):
        raster = rng.integers(0, 256, size=(6, 6, 3), dtype=np.uint8)
        spec = parser.ContextWindowSpec(sizes=(4,), canonical_input=4)
        with pytest.raises(OutOfBoundsError):
            parser.extract_context_windows(raster, (6, 0), spec)


class TestOracleClassifier:
    def test_one_hot_at_truth(self):
        truth = np.array([[1, 2], [3, 1]])
        oc = parser.OracleClassifier(truth)
        assert oc.n_classes == 3
        assert list(oc.probs_at(None, 0, 1)) == [0.0, 1.0, 0.0]
        assert oc.label_ids == [1, 2, 3]

    def test_void_maps_to_lowest(self):
        oc = parser.OracleClassifier(np.array([[0, 2]]))
        assert list(oc.probs_at(None, 0, 0)) == [1.0, 0.0]


class TestBuildGridMap:
    def test_cell_centers(self):
        # extent 10, stride 4 -> 3 cells centered 2, 6, 9 (last clamped)
        got = parser._cell_centers(10, 4, 2)
        assert list(got) == [2, 6, 9]

    def test_oracle_grid_labels(self):
        truth = np.arange(1, 17).reshape(4, 4).clip(1, 4)
        truth = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
        raster = np.zeros((4, 4, 3), dtype=np.uint8)
        grid = parser.build_grid_map(
            raster, parser.OracleClassifier(truth), parser.ContextWindowSpec(sizes=(2,), canonical_input=2), stride=2
        )
        assert grid.grid_shape == (2, 2)
        # centers at (1,1),(1,3),(3,1),(3,3)
        assert np.array_equal(grid.cell_labels, [[1, 2], [3, 4]])

    def test_trained_classifier_paths_agree(self, tmp_path):
        from tests.test_model import SMALL, tile_dataset

        man = tile_dataset(tmp_path)
        ckpt, _ = model.train(
            SMALL, [man], model.TrainConfig(epochs=1, batch_size=8, schedule=(), seed=0)
        )
        clf = model.TileClassifier(ckpt)
        raster = make_scene(n_classes=3, size=32, seed=3)[0]
        spec = parser.windows_for_classifier(8)
        batched = parser.build_grid_map(raster, clf, spec, stride=4)

        class PerPatch:
            input_size = clf.input_size
            label_ids = clf.label_ids

            def probs(self, patch):
                return clf.probs(patch)

        single = parser.build_grid_map(raster, PerPatch(), spec, stride=4)
        assert np.array_equal(batched.cell_labels, single.cell_labels)

    def test_workers_do_not_change_result(self, tmp_path):
        from tests.test_model import SMALL, tile_dataset

        man = tile_dataset(tmp_path)
        ckpt, _ = model.train(
            SMALL, [man], model.TrainConfig(epochs=1, batch_size=8, schedule=(), seed=0)
        )
        clf = model.TileClassifier(ckpt)
        raster = make_scene(n_classes=3, size=48, seed=4)[0]
        spec = parser.windows_for_classifier(8)
        a = parser.build_grid_map(raster, clf, spec, stride=4, workers=1)
        b = parser.build_grid_map(raster, clf, spec, stride=4, workers=4)
        assert np.array_equal(a.cell_labels, b.cell_labels)

    def test_keep_probs(self):
        truth = np.ones((4, 4), dtype=np.int32)
        raster = np.zeros((4, 4, 3), dtype=np.uint8)
        grid = parser.build_grid_map(
            raster,
            parser.OracleClassifier(truth, n_classes=2),
            parser.ContextWindowSpec(sizes=(2,), canonical_input=2),
            stride=2,
            keep_probs=True,
        )
        assert grid.cell_probs.shape == (2, 2, 2)
        assert np.allclose(grid.cell_probs.sum(axis=2), 1.0)

    def test_bad_stride(self):
        raster = np.zeros((4, 4, 3), dtype=np.uint8)
        with pytest.raises(ConfigError):
            parser.build_grid_map(
                raster,
                parser.OracleClassifier(np.ones((4, 4))),
                parser.ContextWindowSpec(sizes=(2,), canonical_input=2),
                stride=0,
            )

    def test_classifier_failure_wrapped(self):
        class Broken:
            def probs_at(self, raster, y, x):
                raise ShapeError("boom")

        raster = np.zeros((4, 4, 3), dtype=np.uint8)
        with pytest.raises(ClassifierError):
            parser.build_grid_map(
                raster, Broken(), parser.ContextWindowSpec(sizes=(2,), canonical_input=2), stride=2
            )


class TestIntegrateSemantics:
    def _grid(self, cell_labels, stride, h, w):
        cells = np.asarray(cell_labels, dtype=np.int32)
        return parser.SemanticGridMap(
            stride=stride,
            origin=stride // 2,
            height=h,
            width=w,
            cell_labels=cells,
            class_ids=sorted(set(cells.ravel().tolist())),
        )

    def test_hand_vote(self):
        # regions split 4x4 into left/right halves; grid stride 2 gives one
        # cell per 2x2 block
        grid = self._grid([[1, 2], [1, 3]], stride=2, h=4, w=4)
        regions = segmentation.RegionMap(
            np.array([[0, 0, 1, 1]] * 4, dtype=np.int32), 2
        )
        out = parser.integrate_semantics(grid, regions)
        # left region: 8 votes label 1; right: 4 votes label 2, 4 votes 3
        # -> tie, lowest id wins
        assert (out[:, :2] == 1).all()
        assert (out[:, 2:] == 2).all()

    def test_unanimous_region(self):
        grid = self._grid([[5, 5], [5, 5]], stride=2, h=4, w=4)
        regions = segmentation.RegionMap(np.zeros((4, 4), dtype=np.int32), 1)
        assert (parser.integrate_semantics(grid, regions) == 5).all()

    def test_extent_mismatch(self):
        grid = self._grid([[1]], stride=2, h=2, w=2)
        regions = segmentation.RegionMap(np.zeros((3, 3), dtype=np.int32), 1)
        with pytest.raises(ExtentMismatchError):
            parser.integrate_semantics(grid, regions)

    def test_matches_vote_loops(self, rng):
        for _ in range(20):
            h = w = 12
            stride = int(rng.choice([2, 3, 4]))
            gh = gw = (h + stride - 1) // stride
            cells = rng.integers(1, 5, size=(gh, gw)).astype(np.int32)
            grid = self._grid(cells, stride, h, w)
            region_labels = rng.integers(0, 4, size=(h, w)).astype(np.int32)
            # make ids dense
            _, dense = np.unique(region_labels, return_inverse=True)
            region_labels = dense.reshape(h, w).astype(np.int32)
            rm = segmentation.RegionMap(region_labels, int(region_labels.max()) + 1)
            got = parser.integrate_semantics(grid, rm)
            for r in range(rm.region_count):
                mask = region_labels == r
                votes = {}
                for y, x in zip(*np.nonzero(mask)):
                    lab = cells[min(y // stride, gh - 1), min(x // stride, gw - 1)]
                    votes[lab] = votes.get(lab, 0) + 1
                best = min(sorted(votes), key=lambda l: (-votes[l], l))
                assert (got[mask] == best).all()


class TestParseImage:
    def test_oracle_with_truth_regions_is_perfect(self):
        raster, truth = make_scene(n_classes=4, size=96, seed=11)
        oc = parser.OracleClassifier(truth)
        grid = parser.build_grid_map(
            raster, oc, parser.ContextWindowSpec(sizes=(8,), canonical_input=8), stride=4
        )
        out = parser.integrate_semantics(grid, truth_regions(truth))
        assert (out == truth).all()

    def test_oracle_with_graph_regions_high_accuracy(self):
        raster, truth = make_scene(n_classes=4, size=128, seed=7)
        oc = parser.OracleClassifier(truth)
        cfg = parser.ParseConfig(window_sizes=(8, 16, 32), stride=4)
        labels, grid, regions = parser.parse_image(raster, oc, cfg)
        assert labels.shape == truth.shape
        assert (labels == truth).mean() > 0.98

    def test_rerun_is_identical(self):
        raster, truth = make_scene(n_classes=3, size=64, seed=2)
        oc = parser.OracleClassifier(truth)
        cfg = parser.ParseConfig(window_sizes=(8, 16), stride=4, min_size=16)
        a = parser.parse_image(raster, oc, cfg)[0]
        b = parser.parse_image(raster, oc, cfg)[0]
        assert np.array_equal(a, b)

    def test_expected_labels_mismatch(self):
        raster, truth = make_scene(n_classes=3, size=32, seed=2)

        class Named(parser.OracleClassifier):
            labels = ["x", "y", "z"]

        cfg = parser.ParseConfig(expected_labels=("a", "b", "c"), window_sizes=(8,), stride=4)
        with pytest.raises(IncompatibleCheckpointError):
            parser.parse_image(raster, Named(truth), cfg)

    def test_stage_prefix_on_errors(self):
        raster = np.zeros((16, 16, 3), dtype=np.uint8)

        class Broken:
            def probs_at(self, raster, y, x):
                raise ShapeError("boom")

        with pytest.raises(ClassifierError, match="^grid: "):
            parser.parse_image(raster, Broken(), parser.ParseConfig(window_sizes=(4,), stride=4))

    def test_target_count_merging(self):
        raster, truth = make_scene(n_classes=3, size=64, seed=5)
        oc = parser.OracleClassifier(truth)
        cfg = parser.ParseConfig(window_sizes=(8,), stride=4, min_size=8, target_count=5)
        _, _, regions = parser.parse_image(raster, oc, cfg)
        assert regions.region_count <= 5


class TestWindowsForClassifier:
    def test_default_pyramid(self):
        spec = parser.windows_for_classifier(32)
        assert spec.sizes == (32, 64, 128)
        assert spec.canonical_input == 32

    def test_explicit_sizes_kept(self):
        spec = parser.windows_for_classifier(16, sizes=(16, 48))
        assert spec.sizes == (16, 48)
        assert spec.canonical_input == 16
