"""
Cấu hình hệ thống GrainDoE
Configuration management for GrainDoE
"""

import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from dotenv import dotenv_values
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Add project root to sys.path to enable imports from config
project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))


class ImagePrepConfig(BaseSettings):
    """Cấu hình cắt tile và chuẩn hóa ảnh"""

    model_config = SettingsConfigDict(env_prefix="IMGPREP_", extra="ignore")

    tile_width: int = Field(490, description="Chiều rộng tile cắt từ coupon (px)")
    tile_height: int = Field(368, description="Chiều cao tile cắt từ coupon (px)")
    store_width: int = Field(189, description="Chiều rộng tile lưu trữ (px)")
    store_height: int = Field(142, description="Chiều cao tile lưu trữ (px)")
    black_level: int = Field(10, description="Mức xám coi là gần đen")
    black_fraction_threshold: float = Field(0.05, description="Tỉ lệ pixel đen để loại tile biên")
    jpeg_quality: int = Field(90, description="Chất lượng JPEG khi ghi tile")


class AugmentConfig(BaseSettings):
    """Cấu hình data augmentation (không có zoom)"""

    model_config = SettingsConfigDict(env_prefix="AUGMENT_", extra="ignore")

    rotation_range: float = Field(20.0, description="Góc xoay tối đa (độ)")
    shift_range: float = Field(0.1, description="Dịch chuyển tối đa (tỉ lệ kích thước)")
    shear_range: float = Field(10.0, description="Góc shear tối đa (độ)")
    horizontal_flip: bool = Field(True, description="Cho phép lật ngang")
    vertical_flip: bool = Field(True, description="Cho phép lật dọc")


class TrainingConfig(BaseSettings):
    """Cấu hình huấn luyện"""

    model_config = SettingsConfigDict(env_prefix="TRAIN_", extra="ignore")

    epochs: int = Field(35, description="Số epoch mỗi lần huấn luyện")
    replicates: int = Field(1, description="Số lần lặp lại mỗi treatment")
    train_size: int = Field(5020, description="Số ảnh huấn luyện")
    val_size: int = Field(1600, description="Số ảnh validation")
    test_size: int = Field(800, description="Số ảnh test")
    threshold: float = Field(0.5, description="Ngưỡng phân loại good")
    last_epochs_window: int = Field(5, description="Số epoch cuối để lấy trung bình accuracy")
    profile: str = Field("paper", description="Profile mạng: paper hoặc tiny")


class ExperimentConfig(BaseSettings):
    """Cấu hình chạy thí nghiệm DoE và k-fold"""

    model_config = SettingsConfigDict(env_prefix="EXPERIMENT_", extra="ignore")

    master_seed: int = Field(0, description="Seed gốc")
    threads: int = Field(1, description="Số treatment chạy song song")
    folds: int = Field(10, description="Số fold cross-validation")
    runs_per_fold: int = Field(5, description="Số lần chạy mỗi fold")
    reject_threshold: float = Field(0.0, description="Tỉ lệ tile bad tối đa để chấp nhận coupon")
    tint_exponent: float = Field(1.0, description="Số mũ cường độ tint (1 = tuyến tính)")
    output_dir: str = Field("./runs", description="Thư mục kết quả")


class ServerConfig(BaseSettings):
    """Cấu hình server"""

    model_config = SettingsConfigDict(env_prefix="SERVER_", extra="ignore")

    host: str = Field("localhost", description="Host server")
    port: int = Field(8001, description="Port server")
    cors_origins: List[str] = Field(["*"], description="CORS origins")


class Settings(BaseSettings):
    """Cấu hình tổng thể hệ thống"""

    # Logging
    log_level: str = Field("INFO", description="Mức log")

    # Sub-configs
    imgprep: ImagePrepConfig = ImagePrepConfig()
    augment: AugmentConfig = AugmentConfig()
    training: TrainingConfig = TrainingConfig()
    experiment: ExperimentConfig = ExperimentConfig()
    server: ServerConfig = ServerConfig()

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="allow",
    )


SECTIONS = {
    "IMGPREP_": ("imgprep", ImagePrepConfig),
    "AUGMENT_": ("augment", AugmentConfig),
    "TRAIN_": ("training", TrainingConfig),
    "EXPERIMENT_": ("experiment", ExperimentConfig),
    "SERVER_": ("server", ServerConfig),
}


# Global settings instance
settings = Settings()


def load_config_from_file(
    config_path: Optional[Path], base: Optional[Settings] = None
) -> Tuple[Settings, Dict[str, str]]:
    """
    Load a KEY=value config document

    Keys prefixed with a section (``AUGMENT_ROTATION_RANGE=20``) update that
    sub-config; ``LOG_LEVEL`` updates the root. Every other key is returned
    unparsed so the caller can validate it as a hyperparameter.

    Args:
        config_path: Path to the document (dotenv syntax)
        base: Settings to start from (defaults to the global instance)

    Returns:
        (settings, remaining hyperparameter keys lower-cased)
    """
    base = base or settings
    if not config_path:
        return base, {}

    values = dotenv_values(config_path)
    sections: Dict[str, Dict[str, str]] = {name: {} for name, _ in SECTIONS.values()}
    root: Dict[str, str] = {}
    remaining: Dict[str, str] = {}

    for raw_key, value in values.items():
        if value is None:
            continue
        key = raw_key.strip().upper()
        if key == "LOG_LEVEL":
            root["log_level"] = value
            continue
        for prefix, (name, _) in SECTIONS.items():
            if key.startswith(prefix):
                sections[name][key[len(prefix):].lower()] = value
                break
        else:
            remaining[key.lower()] = value

    updates = dict(root)
    for prefix, (name, config_cls) in SECTIONS.items():
        current = getattr(base, name).model_dump()
        current.update(sections[name])
        updates[name] = config_cls(**current)

    return base.model_copy(update=updates), remaining


def save_config_to_file(config_path: Path, config: Settings) -> None:
    """Save configuration as a KEY=value document"""
    config_path.parent.mkdir(parents=True, exist_ok=True)

    lines = [f"LOG_LEVEL={config.log_level}"]
    for prefix, (name, _) in SECTIONS.items():
        for key, value in getattr(config, name).model_dump().items():
            if isinstance(value, list):
                continue
            lines.append(f"{prefix}{key.upper()}={value}")

    config_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
