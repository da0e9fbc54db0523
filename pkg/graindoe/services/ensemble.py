"""
Ensemble Image Service
Ghép tile đã phân loại thành ảnh coupon, tô đỏ giữ nguyên độ sáng theo xác suất bad, và báo cáo chấp nhận/loại coupon
"""

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from ..exceptions import ConfigurationError, DataError
from ..nn.model import ModelSpec, Weights, predict
from .imgprep import GridLayout, Tile, resize_bilinear, save_png, to_network_input


logger = structlog.get_logger(__name__)

LUMA_WEIGHTS = np.array([0.2125, 0.7154, 0.0721])
PLACEHOLDER_GRAY = 128
MAX_RED_SHIFT = 120.0

# zero-luma direction toward red
_RED_DIRECTION = np.array([1.0, 0.0, 0.0]) - LUMA_WEIGHTS[0]


@dataclass(frozen=True)
class TileClassification:
    """Kết quả phân loại một tile; good khi p_good >= threshold"""
    row: int
    col: int
    p_good: float
    label: str = ""
    threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.p_good <= 1.0:
            raise ConfigurationError(f"p_good must be in [0, 1], got {self.p_good}")
        if not self.label:
            object.__setattr__(self, "label", "good" if self.p_good >= self.threshold else "bad")


@dataclass
class CouponReport:
    """Báo cáo coupon: reject khi tỉ lệ tile bad vượt ngưỡng"""
    coupon: str
    tile_count: int
    bad_count: int
    bad_fraction: float
    min_p_good: float
    mean_p_good: float
    verdict: str
    threshold: float


def reassemble(
    layout: GridLayout,
    tiles: Mapping[Tuple[int, int], np.ndarray],
    discarded: Iterable[Tuple[int, int]] = (),
) -> np.ndarray:
    """
    Ghép lưới tile theo thứ tự hàng; ô bị loại là xám 50%

    Tiles of another size are resized to the grid cell.

    Raises:
        DataError: thiếu tile không nằm trong danh sách bị loại
    """
    discarded = set(discarded)
    missing = [
        (r, c) for r in range(layout.rows) for c in range(layout.cols)
        if (r, c) not in tiles and (r, c) not in discarded
    ]
    if missing:
        raise DataError("missing tiles at " + ", ".join(f"({r}, {c})" for r, c in missing))

    raster = np.full((layout.rows * layout.tile_h, layout.cols * layout.tile_w, 3), PLACEHOLDER_GRAY, dtype=np.uint8)
    for (r, c), pixels in tiles.items():
        if not (0 <= r < layout.rows and 0 <= c < layout.cols):
            raise DataError(f"tile ({r}, {c}) lies outside the {layout.rows}x{layout.cols} grid")
        if pixels.ndim == 2:
            pixels = np.repeat(pixels[:, :, None], 3, axis=2)
        if pixels.shape[:2] != (layout.tile_h, layout.tile_w):
            pixels = resize_bilinear(pixels, layout.tile_w, layout.tile_h)
        raster[r * layout.tile_h:(r + 1) * layout.tile_h, c * layout.tile_w:(c + 1) * layout.tile_w] = pixels
    return raster


def tint_strength(p_good: float, exponent: float = 1.0) -> float:
    if not 0.0 <= p_good <= 1.0:
        raise ConfigurationError(f"p_good must be in [0, 1], got {p_good}")
    return (1.0 - p_good) ** exponent


def tint_shift(tile: np.ndarray, p_good: float, exponent: float = 1.0) -> np.ndarray:
    """
    Độ dịch màu (float) của từng pixel về phía đỏ, không đổi luma

    The shift is s * k * d where d has zero luma and k is the largest step
    (capped at MAX_RED_SHIFT) that keeps every channel inside [0, 255].
    """
    s = tint_strength(p_good, exponent)
    rgb = tile.astype(np.float64)
    d = _RED_DIRECTION
    k_red = (255.0 - rgb[..., 0]) / d[0]
    k_green = rgb[..., 1] / -d[1]
    k_blue = rgb[..., 2] / -d[2]
    k = np.minimum(np.minimum(k_red, k_green), np.minimum(k_blue, MAX_RED_SHIFT))
    return s * k[..., None] * d


def tint_tile(tile: np.ndarray, p_good: float, exponent: float = 1.0) -> np.ndarray:
    """Tô đỏ tile với cường độ s = (1 - p_good)^exponent, giữ nguyên luma từng pixel"""
    if tint_strength(p_good, exponent) == 0.0:
        return tile.copy()
    tinted = tile.astype(np.float64) + tint_shift(tile, p_good, exponent)
    return np.clip(np.round(tinted), 0, 255).astype(np.uint8)


def luma(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float64) @ LUMA_WEIGHTS


def coupon_report(
    classifications: Sequence[TileClassification],
    coupon: str = "",
    threshold: float = 0.0,
) -> CouponReport:
    """
    Báo cáo coupon; ngưỡng 0 nghĩa là chỉ một tile bad cũng loại coupon

    Raises:
        DataError: không có tile nào
    """
    if not 0.0 <= threshold <= 1.0:
        raise ConfigurationError(f"reject threshold must be in [0, 1], got {threshold}")
    if not classifications:
        raise DataError(f"coupon '{coupon}' has no classified tiles")
    probs = np.array([c.p_good for c in classifications])
    bad = sum(1 for c in classifications if c.label == "bad")
    fraction = bad / len(classifications)
    return CouponReport(
        coupon=coupon,
        tile_count=len(classifications),
        bad_count=bad,
        bad_fraction=fraction,
        min_p_good=float(probs.min()),
        mean_p_good=float(probs.mean()),
        verdict="reject" if fraction > threshold else "accept",
        threshold=threshold,
    )


def classify_tiles(
    weights: Weights,
    spec: ModelSpec,
    tiles: Sequence[Tile],
    threshold: float = 0.5,
) -> List[TileClassification]:
    """Phân loại tile bằng mạng đã huấn luyện (không dropout)"""
    if not tiles:
        return []
    x = to_network_input([t.pixels for t in tiles], spec.input_shape)
    probs = np.clip(predict(spec, weights, x).astype(np.float64), 0.0, 1.0)
    return [
        TileClassification(row=t.row, col=t.col, p_good=float(p), threshold=threshold)
        for t, p in zip(tiles, probs)
    ]


def build_ensemble(
    layout: GridLayout,
    tiles: Sequence[Tile],
    classifications: Sequence[TileClassification],
    discarded: Iterable[Tuple[int, int]] = (),
    exponent: float = 1.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Ảnh ghép (untinted, tinted)"""
    by_cell = {(t.row, t.col): t.pixels for t in tiles}
    prob = {(c.row, c.col): c.p_good for c in classifications}
    discarded = list(discarded)
    untinted = reassemble(layout, by_cell, discarded)
    tinted_tiles = {cell: tint_tile(_rgb(px), prob.get(cell, 1.0), exponent) for cell, px in by_cell.items()}
    tinted = reassemble(layout, tinted_tiles, discarded)
    return untinted, tinted


def _rgb(pixels: np.ndarray) -> np.ndarray:
    return np.repeat(pixels[:, :, None], 3, axis=2) if pixels.ndim == 2 else pixels


def write_coupon_outputs(
    out_dir: Union[str, Path],
    report: CouponReport,
    untinted: np.ndarray,
    tinted: np.ndarray,
    classifications: Sequence[TileClassification],
) -> Dict[str, Path]:
    """
    Ghi PNG tinted/untinted, CSV theo tile và một dòng verdict

    Returns:
        Đường dẫn các file đã ghi
    """
    out_dir = Path(out_dir)
    coupon = report.coupon or "coupon"
    paths = {
        "untinted": save_png(out_dir / f"{coupon}_untinted.png", untinted),
        "tinted": save_png(out_dir / f"{coupon}_tinted.png", tinted),
        "tiles": out_dir / f"{coupon}_tiles.csv",
        "verdict": out_dir / f"{coupon}_verdict.csv",
    }
    pd.DataFrame.from_records(
        [{"row": c.row, "col": c.col, "p_good": c.p_good, "label": c.label} for c in classifications],
        columns=["row", "col", "p_good", "label"],
    ).to_csv(paths["tiles"], index=False)
    pd.DataFrame.from_records([asdict(report)]).to_csv(paths["verdict"], index=False)

    log = logger.warning if report.verdict == "reject" else logger.info
    log("🧾 Coupon verdict", coupon=coupon, verdict=report.verdict, bad=report.bad_count, tiles=report.tile_count)
    return paths
