import numpy as np
import pytest

from sceneparse import synthdata
from sceneparse.errors import ConfigError
from sceneparse.netpbm import read_ppm


def nearest_seed_loops(points, h, w):
    """Per-pixel nearest seed with squared euclidean distance; ties take the
    lowest point index."""
    out = np.zeros((h, w), dtype=int)
    for y in range(h):
        for x in range(w):
            best, best_d = 0, None
            for i, (py, px, _) in enumerate(points):
                d = (y - py) ** 2 + (x - px) ** 2
                if best_d is None or d < best_d:
                    best, best_d = i, d
            out[y, x] = points[best][2]
    return out


def largest_remainder_loops(n, total, exponent):
    w = np.array([(r + 1) ** -exponent for r in range(n)])
    ideal = total * w / w.sum()
    counts = np.maximum(np.floor(ideal).astype(int), 1)
    diff = total - counts.sum()
    rem = ideal - np.floor(ideal)
    if diff > 0:
        for i in sorted(range(n), key=lambda i: (-rem[i], i))[:diff]:
            counts[i] += 1
    while diff < 0:
        i = int(np.argmax(counts))
        if counts[i] <= 1:
            break
        counts[i] -= 1
        diff += 1
    return counts


class TestTextures:
    def test_default_classes_distinct(self):
        classes = synthdata.default_texture_classes(10)
        rgbs = {c.base_rgb for c in classes}
        assert len(rgbs) == 10

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            synthdata.TextureSpec((0, 0, 0), pattern="plaid")
        with pytest.raises(ConfigError):
            synthdata.TextureSpec((0, 0, 300))
        with pytest.raises(ConfigError):
            synthdata.TextureSpec((0, 0, 0), pattern="stripes", period=0)

    def test_flat_texture_is_constant(self):
        tex = synthdata.TextureSpec((10, 20, 30), noise_sigma=0.0)
        rng = np.random.Generator(np.random.PCG64(0))
        tile = synthdata.render_tile(tex, 8, rng)
        assert (tile == np.array([10, 20, 30], dtype=np.uint8)).all()

    def test_stripes_alternate_with_period(self):
        tex = synthdata.TextureSpec(
            (200, 0, 0), pattern="stripes", period=2, alt_rgb=(0, 0, 200), orientation="h"
        )
        spec = synthdata.SceneSpec(
            classes=[tex],
            layout=synthdata.GridLayout(rows=1, cols=1),
            height=8,
            width=8,
        )
        rgb, _ = synthdata.generate_scene_raster(spec, seed=0)
        rows = rgb[:, 0, 0]
        # horizontal stripes: two rows of one color, two of the other
        assert rows[0] == rows[1] and rows[2] == rows[3]
        assert rows[0] != rows[2]


class TestSceneRaster:
    def test_grid_layout_half_split(self):
        classes = synthdata.default_texture_classes(2, noise_sigma=0.0)
        spec = synthdata.SceneSpec(
            classes=classes,
            layout=synthdata.GridLayout(rows=1, cols=2),
            height=4,
            width=8,
        )
        _, truth = synthdata.generate_scene_raster(spec, seed=0)
        assert (truth[:, :4] == 1).all()
        assert (truth[:, 4:] == 2).all()

    def test_voronoi_matches_nearest_seed_oracle(self):
        points = [(3, 4, 0), (10, 12, 1), (10, 2, 2), (2, 12, 1)]
        classes = synthdata.default_texture_classes(3, noise_sigma=0.0)
        spec = synthdata.SceneSpec(
            classes=classes,
            layout=synthdata.VoronoiLayout(points=points),
            height=14,
            width=16,
        )
        _, truth = synthdata.generate_scene_raster(spec, seed=0)
        want = nearest_seed_loops(points, 14, 16) + 1
        assert np.array_equal(truth, want)

    def test_auto_voronoi_covers_all_classes(self):
        classes = synthdata.default_texture_classes(4)
        spec = synthdata.SceneSpec(
            classes=classes,
            layout=synthdata.VoronoiLayout(n_points=7),
            height=64,
            width=64,
        )
        for seed in range(5):
            _, truth = synthdata.generate_scene_raster(spec, seed)
            assert set(np.unique(truth)) == {1, 2, 3, 4}

    def test_deterministic(self):
        classes = synthdata.default_texture_classes(3)
        spec = synthdata.SceneSpec(
            classes=classes,
            layout=synthdata.VoronoiLayout(n_points=5),
            height=32,
            width=32,
        )
        a = synthdata.generate_scene_raster(spec, seed=9)
        b = synthdata.generate_scene_raster(spec, seed=9)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        c = synthdata.generate_scene_raster(spec, seed=10)
        assert not np.array_equal(a[0], c[0])

    def test_labels_are_one_based(self):
        classes = synthdata.default_texture_classes(3)
        spec = synthdata.SceneSpec(
            classes=classes,
            layout=synthdata.GridLayout(rows=1, cols=3),
            height=6,
            width=9,
        )
        _, truth = synthdata.generate_scene_raster(spec, seed=0)
        assert truth.min() == 1 and truth.max() == 3


class TestTileDataset:
    def test_counts_and_files(self, tmp_path):
        classes = synthdata.default_texture_classes(3)
        spec = synthdata.SceneSpec(
            classes=classes,
            layout=synthdata.GridLayout(rows=1, cols=3),
            height=16,
            width=48,
        )
        man = synthdata.generate_tile_dataset(spec, [4, 2, 3], 16, seed=0, out_dir=tmp_path)
        assert len(man) == 9
        labels = [s.fine_label for s in man.samples]
        assert labels.count(0) == 4 and labels.count(1) == 2 and labels.count(2) == 3
        for s in man.samples:
            img = read_ppm(tmp_path / s.raster_path)
            assert img.shape == (16, 16, 3)

    def test_bit_identical_across_runs(self, tmp_path):
        classes = synthdata.default_texture_classes(2)
        spec = synthdata.SceneSpec(
            classes=classes,
            layout=synthdata.GridLayout(rows=1, cols=2),
            height=8,
            width=16,
        )
        d1, d2 = tmp_path / "a", tmp_path / "b"
        m1 = synthdata.generate_tile_dataset(spec, 3, 8, seed=5, out_dir=d1)
        m2 = synthdata.generate_tile_dataset(spec, 3, 8, seed=5, out_dir=d2)
        for s1, s2 in zip(m1.samples, m2.samples):
            assert (d1 / s1.raster_path).read_bytes() == (d2 / s2.raster_path).read_bytes()


class TestLongTail:
    def test_worked_example(self):
        assert list(synthdata.long_tail_counts(5, 100, 1.0)) == [44, 22, 14, 11, 9]

    def test_matches_largest_remainder_oracle(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 12))
            total = int(rng.integers(n, 500))
            exp = float(rng.random() * 2.5 + 0.1)
            got = synthdata.long_tail_counts(n, total, exp)
            want = largest_remainder_loops(n, total, exp)
            assert list(got) == list(want), (n, total, exp)

    def test_total_preserved_and_positive(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 10))
            total = int(rng.integers(n, 300))
            got = synthdata.long_tail_counts(n, total, 1.5)
            assert sum(got) == total
            assert min(got) >= 1

    def test_monotone_nonincreasing(self):
        counts = synthdata.long_tail_counts(8, 1000, 1.2)
        assert all(a >= b for a, b in zip(counts, counts[1:]))
