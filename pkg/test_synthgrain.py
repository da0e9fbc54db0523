"""
Tests for synthetic grain generation
Kiểm tra sinh tile Voronoi, đo hạt và gán nhãn
"""

import numpy as np
import pytest

from graindoe.exceptions import ConfigurationError, DataError
from graindoe.services.imgprep import read_manifest
from graindoe.services.synthgrain import (
    GrainFieldSpec,
    Regime,
    generate_coupon,
    generate_dataset,
    generate_tile,
    ground_truth_frame,
    label_tile,
    measure_grain,
    scaled_thresholds,
    write_dataset,
)


class TestMeasureGrain:
    def test_square_peaks_on_the_diagonal(self):
        square = np.array([[0, 0], [10, 0], [10, 10], [0, 10]], dtype=float)
        m = measure_grain(square)
        assert m.d1 == pytest.approx(10 * np.sqrt(2))
        assert m.d2 == pytest.approx(10 * np.sqrt(2))
        assert m.angle == pytest.approx(45.0)

    def test_rectangle_size(self):
        rect = np.array([[0, 0], [20, 0], [20, 10], [0, 10]], dtype=float)
        assert measure_grain(rect).size == pytest.approx(15 * np.sqrt(2))

    def test_degenerate_polygon(self):
        with pytest.raises(DataError):
            measure_grain(np.array([[0, 0], [1, 1], [2, 2]], dtype=float))


class TestLabels:
    @pytest.mark.parametrize("size, expected", [(15, "good"), (20, "good"), (30, "neutral"), (40, "bad"), (55, "bad")])
    def test_size_thresholds(self, size, expected):
        assert label_tile(size) == expected

    def test_inverted_thresholds(self):
        with pytest.raises(ConfigurationError):
            label_tile(10.0, good_max_size=40, bad_min_size=20)

    def test_thresholds_scale_with_tile(self):
        assert scaled_thresholds(70) == (10.0, 20.0)


class TestGenerateTile:
    def test_is_pure_function_of_spec(self):
        spec = GrainFieldSpec(width=48, height=40, seed_count=12, seed=5)
        a, b = generate_tile(spec), generate_tile(spec)
        np.testing.assert_array_equal(a.pixels, b.pixels)
        assert a.pixels.shape == (40, 48, 3)
        assert len(a.polygons) == 12

    def test_seed_changes_tile(self):
        a = generate_tile(GrainFieldSpec(width=32, height=32, seed_count=10, seed=1))
        b = generate_tile(GrainFieldSpec(width=32, height=32, seed_count=10, seed=2))
        assert not np.array_equal(a.pixels, b.pixels)

    def test_boundaries_are_dark(self):
        spec = GrainFieldSpec(width=40, height=40, seed_count=15, seed=0)
        gray = generate_tile(spec).pixels[:, :, 0]
        assert gray.min() == round(spec.boundary_intensity)

    def test_more_seeds_mean_smaller_grains(self):
        fine = generate_tile(GrainFieldSpec(width=64, height=64, seed_count=150, seed=3)).mean_size()
        coarse = generate_tile(GrainFieldSpec(width=64, height=64, seed_count=6, seed=3)).mean_size()
        assert fine < coarse

    def test_invalid_spec(self):
        with pytest.raises(ConfigurationError):
            GrainFieldSpec(seed_count=0)


class TestDataset:
    def test_balanced_and_labelled_by_size(self):
        dataset = generate_dataset(n_good=3, n_bad=3, tile_size=64, seed=1)
        good_max, bad_min = scaled_thresholds(64)

        assert dataset.labels.count("good") == 3 and dataset.labels.count("bad") == 3
        for label, size in zip(dataset.labels, dataset.sizes):
            assert (size <= good_max) if label == "good" else (size >= bad_min)
        assert list(dataset.binary_labels()) == [1, 1, 1, 0, 0, 0]

    def test_unreachable_regime(self):
        with pytest.raises(DataError, match="rarely yields"):
            generate_dataset(1, 0, tile_size=64, regimes={"good": Regime("good", 2), "bad": Regime("bad", 8)})

    def test_written_dataset_has_manifest_and_truth(self, synthetic_dataset_dir):
        manifest = read_manifest(synthetic_dataset_dir / "manifest.csv")
        assert len(manifest) == 48
        assert set(manifest["label"]) == {"good", "bad"}
        assert (synthetic_dataset_dir / "grain_sizes.csv").exists()

    def test_write_dataset_returns_manifest_path(self, tmp_path):
        path = write_dataset(generate_dataset(1, 1, tile_size=64, seed=2), tmp_path, coupon="s")
        assert path == tmp_path / "manifest.csv"


class TestCoupon:
    def test_layout_and_margin(self):
        raster, labels = generate_coupon([["good", "bad"], ["good", "good"]], tile_size=(32, 24), seed=4, margin=2)

        assert raster.shape == (2 * 24 + 4, 2 * 32 + 4, 3)
        assert labels == {(0, 0): "good", (0, 1): "bad", (1, 0): "good", (1, 1): "good"}
        assert not raster[:2].any() and not raster[:, -2:].any()

    def test_ground_truth_frame(self):
        frame = ground_truth_frame({(1, 0): "bad", (0, 0): "good"}, "c1")
        assert list(frame.columns) == ["coupon", "row", "col", "label"]
        assert list(frame["label"]) == ["good", "bad"]

    def test_ragged_layout(self):
        with pytest.raises(ConfigurationError):
            generate_coupon([["good", "bad"], ["good"]])

    def test_unknown_regime(self):
        with pytest.raises(ConfigurationError):
            generate_coupon([["excellent"]], tile_size=(16, 16))
