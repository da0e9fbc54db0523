"""
Helper functions
Các hàm tiện ích cho GrainDoE
"""

import hashlib
import re
import uuid
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

import numpy as np


def generate_job_id() -> str:
    """Tạo ID duy nhất cho experiment job"""
    return f"job_{uuid.uuid4().hex[:16]}"


def validate_job_id(job_id: str) -> bool:
    """Xác thực ID job"""
    return bool(re.match(r"^job_[0-9a-f]{16}$", job_id))


def sanitize_filename(name: str) -> str:
    """Làm sạch tên file (dùng cho coupon id)"""
    invalid_chars = '<>:"/\\|?*'
    for char in invalid_chars:
        name = name.replace(char, "_")
    name = re.sub(r"\s+", "-", name.strip())
    return name or "unnamed"


def format_datetime(dt: datetime) -> str:
    """Format datetime thành string"""
    return dt.strftime("%Y-%m-%d %H:%M:%S")


def sha256_text(text: str) -> str:
    """SHA-256 của một chuỗi UTF-8"""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path: Union[str, Path]) -> Optional[str]:
    """SHA-256 của file, None nếu file không tồn tại"""
    path = Path(path)
    if not path.exists():
        return None
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def derive_rng(*keys: int) -> np.random.Generator:
    """
    RNG độc lập cho từng (master_seed, treatment, replicate, ...)

    Kết quả chỉ phụ thuộc vào các khóa, không phụ thuộc thứ tự thực thi.
    """
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def derive_seed(*keys: int) -> int:
    """Seed số nguyên 32-bit dẫn xuất từ các khóa"""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])
