"""
Hyperparameter bundle
Bộ siêu tham số của CNN phân loại hạt (một treatment đã giải mã)
"""

from typing import Dict, Literal, NamedTuple, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ..exceptions import ConfigurationError


OptimizerKind = Literal["adam", "adamax", "nadam"]
ActivationKind = Literal["tanh", "selu", "relu", "sigmoid"]
PaddingKind = Literal["same", "valid"]

LAYER_KEYS = ("c1", "c2", "c3", "d1")


class Hyperparams(BaseModel):
    """Siêu tham số của một treatment"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    batch_size: int = Field(240, ge=1, description="Batch size")
    kernel_constraint: Optional[float] = Field(7.5, description="Max-norm c cho dense layers")
    optimizer: OptimizerKind = "adam"

    drop_c1: float = 0.0
    drop_c2: float = 0.0
    drop_c3: float = 0.0
    drop_d1: float = 0.0

    maxpool_c1: bool = True
    maxpool_c2: bool = True
    maxpool_c3: bool = True

    filter_c1: int = 3
    filter_c2: int = 3
    filter_c3: int = 3

    padding: PaddingKind = "same"
    stride_c1: int = 2
    activation: ActivationKind = "relu"

    l1_c1: float = Field(0.0, ge=0.0)
    l1_c2: float = Field(0.0, ge=0.0)
    l1_c3: float = Field(0.0, ge=0.0)
    l1_d1: float = Field(0.0, ge=0.0)
    l2_c1: float = Field(0.0, ge=0.0)
    l2_c2: float = Field(0.0, ge=0.0)
    l2_c3: float = Field(0.0, ge=0.0)
    l2_d1: float = Field(0.0, ge=0.0)

    learning_rate: float = Field(1e-3, gt=0.0)
    beta1: float = Field(0.9, gt=0.0, lt=1.0)
    beta2: float = Field(0.999, gt=0.0, lt=1.0)
    epsilon: float = Field(1e-7, gt=0.0)

    @field_validator("drop_c1", "drop_c2", "drop_c3", "drop_d1")
    @classmethod
    def _check_drop(cls, value: float) -> float:
        if not 0.0 <= value < 1.0:
            raise ValueError("drop rate must be in [0, 1)")
        return value

    @field_validator("filter_c1", "filter_c2", "filter_c3")
    @classmethod
    def _check_filter(cls, value: int) -> int:
        if value not in (3, 5, 7):
            raise ValueError("filter size must be 3, 5 or 7")
        return value

    @field_validator("stride_c1")
    @classmethod
    def _check_stride(cls, value: int) -> int:
        if value not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        return value

    @field_validator("kernel_constraint")
    @classmethod
    def _check_constraint(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and value <= 0:
            raise ValueError("max-norm constraint must be positive")
        return value

    @field_validator("optimizer", "activation", "padding", mode="before")
    @classmethod
    def _lower(cls, value):
        return value.strip().lower() if isinstance(value, str) else value

    def drop(self, layer: str) -> float:
        return getattr(self, f"drop_{layer}")

    def l1(self, layer: str) -> float:
        return getattr(self, f"l1_{layer}")

    def l2(self, layer: str) -> float:
        return getattr(self, f"l2_{layer}")


def make_hyperparams(values: Dict[str, object], base: Optional[Hyperparams] = None) -> Hyperparams:
    """Tạo Hyperparams từ dict, lỗi validate -> ConfigurationError"""
    merged = (base or Hyperparams()).model_dump()
    unknown = sorted(set(values) - set(merged))
    if unknown:
        raise ConfigurationError(f"unknown hyperparameter keys: {', '.join(unknown)}")
    merged.update(values)
    if isinstance(merged.get("kernel_constraint"), str) and merged["kernel_constraint"].lower() in ("", "none"):
        merged["kernel_constraint"] = None
    try:
        return Hyperparams(**merged)
    except ValidationError as e:
        raise ConfigurationError(f"invalid hyperparameters: {e}") from e


class Profile(NamedTuple):
    """Kích thước mạng theo profile"""
    input_shape: Tuple[int, int, int]
    filters: Tuple[int, int, int]
    dense_units: int


PROFILES: Dict[str, Profile] = {
    "paper": Profile(input_shape=(3, 140, 140), filters=(32, 32, 64), dense_units=64),
    "tiny": Profile(input_shape=(3, 64, 64), filters=(8, 8, 16), dense_units=16),
}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigurationError(f"unknown profile '{name}' (expected one of {', '.join(PROFILES)})")


# CCD verification configuration
VERIFIED_CONFIG = Hyperparams()

# Same network with the regularization settings picked after the L2 screening
VERIFIED_CONFIG_L2 = VERIFIED_CONFIG.model_copy(
    update={"l2_c1": 1e-3, "l2_c2": 1e-7, "l2_c3": 1e-7, "l2_d1": 1e-7}
)
