"""
Synthetic Grain Service
Sinh tile vi cấu trúc hạt (Voronoi) có nhãn và đo kích thước hạt theo hai đường kính vuông góc lớn nhất
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from scipy import ndimage
from scipy.spatial import Voronoi, cKDTree

from ..exceptions import ConfigurationError, DataError
from ..utils.helpers import derive_rng, derive_seed
from .imgprep import Tile, write_manifest, write_tiles


logger = structlog.get_logger(__name__)

REFERENCE_TILE = 140
GOOD_MAX_SIZE = 20.0
BAD_MIN_SIZE = 40.0
MAX_ATTEMPTS_PER_TILE = 20


@dataclass(frozen=True)
class GrainFieldSpec:
    """Tham số sinh một tile hạt"""
    width: int = 140
    height: int = 140
    seed_count: int = 50
    base_intensity: float = 170.0
    intensity_jitter: float = 40.0
    boundary_width: int = 1
    boundary_intensity: float = 35.0
    seed: int = 0

    def __post_init__(self):
        if self.seed_count < 1:
            raise ConfigurationError("seed_count must be at least 1")
        if self.width < 2 or self.height < 2:
            raise ConfigurationError("tile must be at least 2x2")
        if self.boundary_width < 0:
            raise ConfigurationError("boundary width must be non-negative")


@dataclass(frozen=True)
class GrainMeasure:
    """Hai đường kính vuông góc d1 >= d2 và kích thước ước lượng (d1 + d2) / 2"""
    d1: float
    d2: float
    angle: float

    @property
    def size(self) -> float:
        return (self.d1 + self.d2) / 2.0


@dataclass
class SyntheticTile:
    pixels: np.ndarray
    polygons: List[np.ndarray]
    spec: GrainFieldSpec

    def mean_size(self, resolution_deg: float = 1.0) -> float:
        return float(np.mean([measure_grain(p, resolution_deg).size for p in self.polygons]))


class Regime(NamedTuple):
    """Chế độ mật độ hạt cho một nhãn"""
    label: str
    seed_count: int


DEFAULT_REGIMES: Dict[str, Regime] = {
    "good": Regime("good", 200),
    "bad": Regime("bad", 8),
}


@dataclass
class SyntheticDataset:
    tiles: List[np.ndarray] = field(default_factory=list)
    labels: List[str] = field(default_factory=list)
    sizes: List[float] = field(default_factory=list)
    seed_counts: List[int] = field(default_factory=list)

    def binary_labels(self) -> np.ndarray:
        return np.array([1 if label == "good" else 0 for label in self.labels], dtype=np.int8)


def _cell_polygons(points: np.ndarray, width: int, height: int) -> List[np.ndarray]:
    # mirrored copies make every original cell bounded and clipped to the tile
    mirrored = [
        points,
        np.column_stack([-points[:, 0], points[:, 1]]),
        np.column_stack([2 * width - points[:, 0], points[:, 1]]),
        np.column_stack([points[:, 0], -points[:, 1]]),
        np.column_stack([points[:, 0], 2 * height - points[:, 1]]),
    ]
    vor = Voronoi(np.vstack(mirrored))
    polygons = []
    for i in range(len(points)):
        region = vor.regions[vor.point_region[i]]
        polygons.append(np.clip(vor.vertices[region], [0, 0], [width, height]))
    return polygons


def generate_tile(spec: GrainFieldSpec) -> SyntheticTile:
    """
    Sinh tile hạt: tessellation Voronoi, cường độ theo hạt có jitter, biên hạt tối

    Pure function of ``spec``.
    """
    rng = derive_rng(spec.seed, spec.seed_count)
    points = rng.uniform([0.0, 0.0], [spec.width, spec.height], size=(spec.seed_count, 2))
    intensities = spec.base_intensity + rng.uniform(-spec.intensity_jitter, spec.intensity_jitter, spec.seed_count)

    ys, xs = np.mgrid[0:spec.height, 0:spec.width]
    centers = np.column_stack([xs.ravel() + 0.5, ys.ravel() + 0.5])
    _, owner = cKDTree(points).query(centers)
    labels = owner.reshape(spec.height, spec.width)

    image = intensities[labels]
    if spec.seed_count > 1 and spec.boundary_width > 0:
        boundary = ndimage.maximum_filter(labels, size=2) != ndimage.minimum_filter(labels, size=2)
        if spec.boundary_width > 1:
            boundary = ndimage.binary_dilation(boundary, iterations=spec.boundary_width - 1)
        image = np.where(boundary, spec.boundary_intensity, image)

    gray = np.clip(np.round(image), 0, 255).astype(np.uint8)
    pixels = np.repeat(gray[:, :, None], 3, axis=2)
    return SyntheticTile(pixels=pixels, polygons=_cell_polygons(points, spec.width, spec.height), spec=spec)


def _polygon_area(polygon: np.ndarray) -> float:
    x, y = polygon[:, 0], polygon[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def measure_grain(polygon: np.ndarray, resolution_deg: float = 1.0) -> GrainMeasure:
    """
    Đo hạt: tìm hướng θ cực đại hóa d(θ) + d(θ + 90°)

    d(θ) is the caliper (Feret) width of the polygon along direction θ,
    searched on a grid of ``resolution_deg``.

    Raises:
        DataError: polygon suy biến (ít hơn 3 đỉnh hoặc diện tích 0)
    """
    polygon = np.asarray(polygon, dtype=np.float64)
    if polygon.ndim != 2 or polygon.shape[0] < 3 or _polygon_area(polygon) <= 1e-12:
        raise DataError("degenerate grain polygon")
    if resolution_deg <= 0:
        raise ConfigurationError("angular resolution must be positive")

    angles = np.deg2rad(np.arange(0.0, 180.0, resolution_deg))

    def widths(theta: np.ndarray) -> np.ndarray:
        proj = polygon @ np.vstack([np.cos(theta), np.sin(theta)])
        return proj.max(axis=0) - proj.min(axis=0)

    d_a, d_b = widths(angles), widths(angles + np.pi / 2)
    best = int(np.argmax(d_a + d_b))
    d1, d2 = max(d_a[best], d_b[best]), min(d_a[best], d_b[best])
    return GrainMeasure(d1=float(d1), d2=float(d2), angle=float(np.rad2deg(angles[best])))


def label_tile(
    cells: Union[float, Sequence[np.ndarray], Sequence[GrainMeasure]],
    good_max_size: float = GOOD_MAX_SIZE,
    bad_min_size: float = BAD_MIN_SIZE,
) -> str:
    """Nhãn good / bad / neutral theo kích thước hạt trung bình"""
    if good_max_size >= bad_min_size:
        raise ConfigurationError("good_max_size must be below bad_min_size")
    if isinstance(cells, (int, float)):
        mean_size = float(cells)
    else:
        sizes = [c.size if isinstance(c, GrainMeasure) else measure_grain(c).size for c in cells]
        if not sizes:
            raise DataError("no grains to label")
        mean_size = float(np.mean(sizes))
    if mean_size <= good_max_size:
        return "good"
    if mean_size >= bad_min_size:
        return "bad"
    return "neutral"


def scaled_thresholds(tile_size: int) -> Tuple[float, float]:
    """Ngưỡng good/bad theo kích thước tile (tham chiếu tile 140 px)"""
    scale = tile_size / REFERENCE_TILE
    return GOOD_MAX_SIZE * scale, BAD_MIN_SIZE * scale


def generate_dataset(
    n_good: int,
    n_bad: int,
    tile_size: int = 140,
    regimes: Optional[Dict[str, Regime]] = None,
    seed: int = 0,
) -> SyntheticDataset:
    """
    Sinh tập tile cân bằng good/bad; tile neutral bị loại và sinh lại

    Raises:
        DataError: một regime không tạo được tile đúng nhãn
    """
    regimes = regimes or DEFAULT_REGIMES
    good_max, bad_min = scaled_thresholds(tile_size)
    dataset = SyntheticDataset()
    attempt_index = 0

    for label, count in (("good", n_good), ("bad", n_bad)):
        regime = regimes[label]
        made, misses = 0, 0
        while made < count:
            spec = GrainFieldSpec(
                width=tile_size,
                height=tile_size,
                seed_count=regime.seed_count,
                seed=derive_seed(seed, attempt_index),
            )
            attempt_index += 1
            tile = generate_tile(spec)
            size = tile.mean_size()
            if label_tile(size, good_max, bad_min) != label:
                misses += 1
                if misses > MAX_ATTEMPTS_PER_TILE * max(count, 1):
                    raise DataError(f"regime '{label}' (seed_count {regime.seed_count}) rarely yields '{label}' tiles")
                continue
            dataset.tiles.append(tile.pixels)
            dataset.labels.append(label)
            dataset.sizes.append(size)
            dataset.seed_counts.append(regime.seed_count)
            made += 1

    logger.info("🌱 Synthetic dataset generated", good=n_good, bad=n_bad, tile_size=tile_size, rejected=attempt_index - n_good - n_bad)
    return dataset


def write_dataset(dataset: SyntheticDataset, root: Union[str, Path], coupon: str = "synthetic") -> Path:
    """
    Ghi tập dữ liệu theo định dạng manifest của imgprep cùng sidecar kích thước hạt thật

    Returns:
        Đường dẫn manifest CSV
    """
    root = Path(root)
    tiles = [Tile(row=i, col=0, pixels=pixels, source=coupon) for i, pixels in enumerate(dataset.tiles)]
    labels = {(i, 0): label for i, label in enumerate(dataset.labels)}
    frame = write_tiles(tiles, root, coupon, labels=labels, quality=95)
    manifest = write_manifest(frame, root / "manifest.csv")
    truth = frame[["path"]].copy()
    truth["mean_size"] = dataset.sizes
    truth["seed_count"] = dataset.seed_counts
    truth.to_csv(root / "grain_sizes.csv", index=False)
    return manifest


def generate_coupon(
    layout: Sequence[Sequence[str]],
    tile_size: Tuple[int, int] = (140, 140),
    regimes: Optional[Dict[str, Regime]] = None,
    seed: int = 0,
    margin: int = 0,
) -> Tuple[np.ndarray, Dict[Tuple[int, int], str]]:
    """
    Ghép coupon RGB từ lưới tile theo regime; ``margin`` thêm viền đen quanh coupon

    Returns:
        (raster, nhãn theo (row, col))
    """
    regimes = regimes or DEFAULT_REGIMES
    tile_w, tile_h = tile_size
    rows, cols = len(layout), len(layout[0]) if layout else 0
    if rows == 0 or cols == 0 or any(len(r) != cols for r in layout):
        raise ConfigurationError("coupon layout must be a non-empty rectangular grid")
    if 2 * margin >= min(tile_w, tile_h):
        raise ConfigurationError("margin must be smaller than half a tile")

    raster = np.zeros((rows * tile_h + 2 * margin, cols * tile_w + 2 * margin, 3), dtype=np.uint8)
    labels = {}
    for r, line in enumerate(layout):
        for c, name in enumerate(line):
            if name not in regimes:
                raise ConfigurationError(f"unknown regime '{name}'")
            spec = GrainFieldSpec(width=tile_w, height=tile_h, seed_count=regimes[name].seed_count,
                                  seed=derive_seed(seed, r, c))
            y, x = margin + r * tile_h, margin + c * tile_w
            raster[y:y + tile_h, x:x + tile_w] = generate_tile(spec).pixels
            labels[(r, c)] = regimes[name].label
    return raster, labels


def ground_truth_frame(labels: Dict[Tuple[int, int], str], coupon: str) -> pd.DataFrame:
    rows = [{"coupon": coupon, "row": r, "col": c, "label": label} for (r, c), label in sorted(labels.items())]
    return pd.DataFrame.from_records(rows)
