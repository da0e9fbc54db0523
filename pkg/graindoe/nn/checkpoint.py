"""
Weights checkpoint
File nhị phân lưu trọng số: magic, version, hash ModelSpec, các mảng float32 little-endian
"""

import hashlib
import struct
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import structlog

from ..exceptions import DataError
from .model import ModelSpec, Weights, spec_to_text


logger = structlog.get_logger(__name__)

MAGIC = b"GDCK"
FORMAT_VERSION = 1
ARRAY_NAMES = ("kernel", "bias")

_HEADER = struct.Struct("<4sHI32s")
_ARRAY_HEADER = struct.Struct("<HBB")


def spec_hash(spec: ModelSpec) -> bytes:
    """SHA-256 của tài liệu key=value mô tả ModelSpec"""
    return hashlib.sha256(spec_to_text(spec).encode("utf-8")).digest()


def save_checkpoint(path: Union[str, Path], spec: ModelSpec, weights: Weights) -> Path:
    """Ghi checkpoint"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = list(weights.arrays())

    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(entries), spec_hash(spec)))
        for index, name, array in entries:
            f.write(_ARRAY_HEADER.pack(index, ARRAY_NAMES.index(name), array.ndim))
            f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())

    logger.info("💾 Checkpoint saved", path=str(path), arrays=len(entries))
    return path


def _read_arrays(path: Path) -> Tuple[bytes, Dict[int, Dict[str, np.ndarray]]]:
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise DataError(f"{path}: truncated checkpoint header")
    magic, version, count, digest = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DataError(f"{path}: not a weights checkpoint")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")

    offset = _HEADER.size
    params: Dict[int, Dict[str, np.ndarray]] = {}
    try:
        for _ in range(count):
            index, name_code, ndim = _ARRAY_HEADER.unpack_from(data, offset)
            offset += _ARRAY_HEADER.size
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            size = int(np.prod(shape))
            array = np.frombuffer(data, dtype="<f4", count=size, offset=offset).reshape(shape)
            offset += 4 * size
            params.setdefault(index, {})[ARRAY_NAMES[name_code]] = array.astype(np.float32)
    except (struct.error, ValueError, IndexError) as e:
        raise DataError(f"{path}: corrupt checkpoint ({e})") from e
    return digest, params


def _shape_diff(expected: Dict[int, Dict[str, Tuple[int, ...]]], found: Dict[int, Dict[str, Tuple[int, ...]]]) -> List[str]:
    diff = []
    for index in sorted(set(expected) | set(found)):
        for name in ARRAY_NAMES:
            want = expected.get(index, {}).get(name)
            got = found.get(index, {}).get(name)
            if want != got:
                diff.append(f"layer {index} {name}: expected {want}, found {got}")
    return diff


def load_checkpoint(path: Union[str, Path], spec: ModelSpec) -> Weights:
    """
    Đọc checkpoint và kiểm tra tương thích với ModelSpec

    Raises:
        DataError: file hỏng, hoặc shape không khớp (kèm danh sách khác biệt)
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    digest, params = _read_arrays(path)
    weights = Weights(params)

    diff = _shape_diff(spec.param_shapes(), weights.shapes())
    if diff:
        raise DataError("incompatible checkpoint:\n  " + "\n  ".join(diff))
    if digest != spec_hash(spec):
        logger.warning("⚠️ Checkpoint spec hash differs, shapes match", path=str(path))
    return weights
