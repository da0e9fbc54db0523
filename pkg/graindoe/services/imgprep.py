"""
Image Preparation Service
Cắt coupon thành lưới tile, chuyển xám, cân bằng histogram, loại tile biên, resize và augmentation
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
import pandas as pd
import structlog
from PIL import Image, UnidentifiedImageError
from skimage.color import rgb2gray

from ..exceptions import ConfigurationError, DataError
from ..utils.helpers import derive_rng, sha256_text


logger = structlog.get_logger(__name__)

LABELS = ("good", "bad", "neutral", "unlabeled")
MANIFEST_COLUMNS = ["path", "coupon", "row", "col", "label"]
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class Tile:
    """Một tile trong lưới, pixels dạng (H, W, 3) uint8"""
    row: int
    col: int
    pixels: np.ndarray
    source: str = ""


class GridLayout(NamedTuple):
    """Kích thước lưới tile"""
    rows: int
    cols: int
    tile_w: int
    tile_h: int


@dataclass
class TileGrid:
    """Lưới tile theo thứ tự hàng (row-major) cùng vị trí vùng cắt trong raster gốc"""
    tiles: List[Tile]
    rows: int
    cols: int
    tile_w: int
    tile_h: int
    source: str = ""
    origin: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.rows * self.cols != len(self.tiles):
            raise ConfigurationError(f"grid {self.rows}x{self.cols} does not hold {len(self.tiles)} tiles")

    def tile(self, row: int, col: int) -> Tile:
        return self.tiles[row * self.cols + col]

    @property
    def layout(self) -> GridLayout:
        return GridLayout(self.rows, self.cols, self.tile_w, self.tile_h)


@dataclass(frozen=True)
class AugmentParams:
    """Khoảng tham số augmentation; không có zoom, vùng trống được lấp bằng wrap"""
    rotation_range: float = 20.0
    shift_range: float = 0.1
    shear_range: float = 10.0
    horizontal_flip: bool = True
    vertical_flip: bool = True

    def __post_init__(self):
        if self.rotation_range < 0 or self.shear_range < 0 or not 0 <= self.shift_range < 1:
            raise ConfigurationError("augmentation ranges must be non-negative and shift < 1")

    @classmethod
    def from_config(cls, config) -> "AugmentParams":
        return cls(
            rotation_range=config.rotation_range,
            shift_range=config.shift_range,
            shear_range=config.shear_range,
            horizontal_flip=config.horizontal_flip,
            vertical_flip=config.vertical_flip,
        )


@dataclass
class PrepResult:
    """Kết quả chuẩn bị một coupon"""
    coupon: str
    grid: TileGrid
    kept: List[Tile] = field(default_factory=list)
    discarded: List[Tuple[int, int, float]] = field(default_factory=list)


def load_raster(path: Union[str, Path]) -> np.ndarray:
    """Đọc ảnh PNG/JPEG (mọi mode) thành RGB uint8"""
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("RGB"), dtype=np.uint8).copy()
    except (FileNotFoundError, UnidentifiedImageError, OSError) as e:
        raise DataError(f"cannot read raster {path}: {e}") from e


def save_png(path: Union[str, Path], pixels: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(_as_rgb(pixels), cv2.COLOR_RGB2BGR)):
        raise DataError(f"cannot write {path}")
    return path


def _as_rgb(pixels: np.ndarray) -> np.ndarray:
    if pixels.ndim == 2:
        return np.repeat(pixels[:, :, None], 3, axis=2)
    return pixels


def slice_raster(raster: np.ndarray, tile_w: int, tile_h: int, source: str = "") -> TileGrid:
    """
    Cắt raster thành lưới tile tile_w x tile_h

    The grid is centered: the leftover margin is split between both edges
    and dropped.

    Raises:
        ConfigurationError: tile lớn hơn raster
    """
    height, width = raster.shape[:2]
    if tile_w < 1 or tile_h < 1 or tile_w > width or tile_h > height:
        raise ConfigurationError(f"tile {tile_w}x{tile_h} does not fit raster {width}x{height}")

    rows, cols = height // tile_h, width // tile_w
    y0, x0 = (height - rows * tile_h) // 2, (width - cols * tile_w) // 2
    tiles = [
        Tile(
            row=r,
            col=c,
            pixels=raster[y0 + r * tile_h:y0 + (r + 1) * tile_h, x0 + c * tile_w:x0 + (c + 1) * tile_w].copy(),
            source=source,
        )
        for r in range(rows)
        for c in range(cols)
    ]
    logger.debug("✂️ Raster sliced", source=source, rows=rows, cols=cols, origin=(x0, y0))
    return TileGrid(tiles=tiles, rows=rows, cols=cols, tile_w=tile_w, tile_h=tile_h, source=source, origin=(x0, y0))


def grayscale_rgb_weighted(tile: np.ndarray) -> np.ndarray:
    """Xám theo trọng số 0.2125R + 0.7154G + 0.0721B, nhân bản ra 3 kênh"""
    if tile.ndim == 2:
        return _as_rgb(tile)
    luma = rgb2gray(tile[:, :, :3])
    gray = np.clip(np.round(luma * 255.0), 0, 255).astype(np.uint8)
    return _as_rgb(gray)


def hist_equalize(tile: np.ndarray) -> np.ndarray:
    """
    Cân bằng histogram 256 bin; ảnh hằng được trả về nguyên vẹn

    3-channel input is treated as replicated gray (first channel).
    """
    gray = tile[:, :, 0] if tile.ndim == 3 else tile
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    if gray.min() == gray.max():
        return tile.copy()
    equalized = cv2.equalizeHist(gray)
    return _as_rgb(equalized) if tile.ndim == 3 else equalized


def to_gray_equalized(tile: np.ndarray) -> np.ndarray:
    return hist_equalize(grayscale_rgb_weighted(tile))


def resize_bilinear(tile: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Nội suy bilinear độc lập theo từng trục"""
    if out_w < 1 or out_h < 1:
        raise ConfigurationError(f"resize target must be at least 1x1, got {out_w}x{out_h}")
    if tile.shape[1] == out_w and tile.shape[0] == out_h:
        return tile.copy()
    return cv2.resize(tile, (out_w, out_h), interpolation=cv2.INTER_LINEAR)


def black_fraction(tile: np.ndarray, black_level: int = 10) -> float:
    """Tỉ lệ pixel gần đen (mọi kênh < black_level)"""
    dark = tile < black_level
    if tile.ndim == 3:
        dark = np.all(dark, axis=2)
    return float(dark.mean())


def discard_boundary(
    tiles: Sequence[Tile],
    threshold: float = 0.05,
    black_level: int = 10,
) -> Tuple[List[Tile], List[Tuple[int, int, float]]]:
    """
    Loại tile biên coupon (quá nhiều pixel gần đen)

    Returns:
        (tile giữ lại, log (row, col, tỉ lệ đen) của tile bị loại)
    """
    if not 0.0 < threshold <= 1.0:
        raise ConfigurationError(f"black fraction threshold must be in (0, 1], got {threshold}")
    kept, discarded = [], []
    for tile in tiles:
        fraction = black_fraction(tile.pixels, black_level)
        if fraction > threshold or fraction == 1.0:
            discarded.append((tile.row, tile.col, fraction))
        else:
            kept.append(tile)
    if discarded:
        logger.info("🗑️ Boundary tiles discarded", count=len(discarded), kept=len(kept))
    return kept, discarded


def _affine_matrix(w: int, h: int, angle: float, shear: float, tx: float, ty: float) -> np.ndarray:
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    theta, phi = np.deg2rad(angle), np.deg2rad(shear)
    rotate = np.array([[np.cos(theta), -np.sin(theta), 0], [np.sin(theta), np.cos(theta), 0], [0, 0, 1]])
    shear_m = np.array([[1, -np.sin(phi), 0], [0, np.cos(phi), 0], [0, 0, 1]])
    to_origin = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]])
    back = np.array([[1, 0, cx + tx], [0, 1, cy + ty], [0, 0, 1]])
    return (back @ rotate @ shear_m @ to_origin)[:2]


def augment(tile: np.ndarray, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    """
    Biến đổi affine ngẫu nhiên (xoay, dịch, shear, lật), lấp vùng trống bằng wrap

    Shifts are whole pixels. An identity transform returns an exact copy.
    """
    h, w = tile.shape[:2]
    angle = rng.uniform(-params.rotation_range, params.rotation_range) if params.rotation_range else 0.0
    shear = rng.uniform(-params.shear_range, params.shear_range) if params.shear_range else 0.0
    max_x, max_y = int(params.shift_range * w), int(params.shift_range * h)
    tx = int(rng.integers(-max_x, max_x + 1)) if max_x else 0
    ty = int(rng.integers(-max_y, max_y + 1)) if max_y else 0
    flip_h = params.horizontal_flip and rng.random() < 0.5
    flip_v = params.vertical_flip and rng.random() < 0.5

    out = tile
    if angle == 0.0 and shear == 0.0:
        if tx or ty:
            out = np.roll(out, shift=(ty, tx), axis=(0, 1))
    else:
        matrix = _affine_matrix(w, h, angle, shear, tx, ty)
        out = cv2.warpAffine(out, matrix, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_WRAP)
    if flip_h:
        out = out[:, ::-1]
    if flip_v:
        out = out[::-1]
    return out.copy() if out is tile else np.ascontiguousarray(out)


def _label_key(label: str) -> int:
    return int(sha256_text(label)[:8], 16)


def balance_classes(
    tiles_by_label: Dict[str, List[np.ndarray]],
    params: AugmentParams,
    seed: int,
) -> Dict[str, List[np.ndarray]]:
    """
    Augment lớp thiểu số cho đến khi số lượng các lớp bằng nhau

    The k-th synthesized tile of a class draws from its own RNG keyed on
    (seed, label, k); other classes and their order have no effect on it.
    """
    target = max((len(v) for v in tiles_by_label.values()), default=0)
    balanced = {}
    for label, tiles in tiles_by_label.items():
        tiles = list(tiles)
        if not tiles and target:
            raise DataError(f"class '{label}' has no tiles to augment")
        originals = len(tiles)
        added = 0
        while len(tiles) < target:
            rng = derive_rng(seed, _label_key(label), added)
            source = tiles[int(rng.integers(0, originals))]
            tiles.append(augment(source, params, rng))
            added += 1
        if added:
            logger.info("🔁 Minority class augmented", label=label, added=added, total=len(tiles))
        balanced[label] = tiles
    return balanced


def prepare_coupon(raster: np.ndarray, coupon: str, config) -> PrepResult:
    """
    Chuỗi xử lý một coupon: slice -> grayscale -> equalize -> loại biên -> resize lưu trữ

    Boundary detection looks at the grayscale tile before equalization.
    """
    grid = slice_raster(raster, config.tile_width, config.tile_height, source=coupon)
    gray_tiles = [Tile(t.row, t.col, grayscale_rgb_weighted(t.pixels), coupon) for t in grid.tiles]
    kept, discarded = discard_boundary(gray_tiles, config.black_fraction_threshold, config.black_level)
    processed = [
        Tile(t.row, t.col, resize_bilinear(hist_equalize(t.pixels), config.store_width, config.store_height), coupon)
        for t in kept
    ]
    return PrepResult(coupon=coupon, grid=grid, kept=processed, discarded=discarded)


def tile_path(root: Union[str, Path], coupon: str, row: int, col: int) -> Path:
    return Path(root) / coupon / f"{row:03d}_{col:03d}.jpg"


def write_tiles(
    tiles: Sequence[Tile],
    root: Union[str, Path],
    coupon: str,
    labels: Optional[Dict[Tuple[int, int], str]] = None,
    quality: int = 90,
) -> pd.DataFrame:
    """
    Ghi tile JPEG vào ``<root>/<coupon>/<row>_<col>.jpg``

    Returns:
        Manifest rows (path relative to root, coupon, row, col, label)
    """
    root = Path(root)
    records = []
    for tile in tiles:
        path = tile_path(root, coupon, tile.row, tile.col)
        path.parent.mkdir(parents=True, exist_ok=True)
        bgr = cv2.cvtColor(_as_rgb(tile.pixels), cv2.COLOR_RGB2BGR)
        if not cv2.imwrite(str(path), bgr, [cv2.IMWRITE_JPEG_QUALITY, int(quality)]):
            raise DataError(f"cannot write tile {path}")
        label = (labels or {}).get((tile.row, tile.col), "unlabeled")
        records.append({
            "path": path.relative_to(root).as_posix(),
            "coupon": coupon,
            "row": tile.row,
            "col": tile.col,
            "label": label,
        })
    return pd.DataFrame.from_records(records, columns=MANIFEST_COLUMNS)


def write_manifest(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.sort_values(["coupon", "row", "col"]).to_csv(path, index=False)
    return path


def read_manifest(path: Union[str, Path]) -> pd.DataFrame:
    """
    Đọc manifest CSV của tile

    Raises:
        DataError: file không tồn tại, thiếu cột hoặc nhãn lạ
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    frame = pd.read_csv(path)
    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing manifest columns {', '.join(missing)}")
    unknown = sorted(set(frame["label"]) - set(LABELS))
    if unknown:
        raise DataError(f"{path}: unknown labels {', '.join(map(str, unknown))}")
    frame.attrs["root"] = str(path.parent)
    return frame


def read_tile(path: Union[str, Path]) -> np.ndarray:
    """Đọc tile JPEG/PNG thành RGB uint8"""
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise DataError(f"cannot read tile {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def to_network_input(tiles: Sequence[np.ndarray], input_shape: Tuple[int, int, int]) -> np.ndarray:
    """Resize tile về kích thước đầu vào mạng, chuẩn hóa [0, 1], NCHW float32"""
    channels, height, width = input_shape
    batch = np.empty((len(tiles), channels, height, width), dtype=np.float32)
    for i, tile in enumerate(tiles):
        resized = resize_bilinear(_as_rgb(tile), width, height)
        batch[i] = resized.transpose(2, 0, 1)[:channels].astype(np.float32) / 255.0
    return batch


def load_labeled_tiles(manifest: pd.DataFrame, root: Optional[Union[str, Path]] = None) -> Tuple[List[np.ndarray], np.ndarray]:
    """
    Đọc tile có nhãn good/bad từ manifest; neutral và unlabeled bị bỏ qua

    Returns:
        (tiles, labels) với good = 1, bad = 0
    """
    root = Path(root or manifest.attrs.get("root", "."))
    binary = manifest[manifest["label"].isin(["good", "bad"])]
    tiles = [read_tile(root / p) for p in binary["path"]]
    labels = (binary["label"] == "good").astype(np.int8).to_numpy()
    return tiles, labels


def list_rasters(input_dir: Union[str, Path]) -> List[Path]:
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise DataError(f"input directory not found: {input_dir}")
    return sorted(p for p in input_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
