"""
Design of Experiments Service
Dịch vụ dựng, mã hóa, xáo trộn và lưu ma trận thí nghiệm DSD/CCD
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import product
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from dotenv import dotenv_values

from ..exceptions import ConfigurationError, DataError, DecodeError, UnsupportedDesignError
from ..nn.hyperparams import VERIFIED_CONFIG, Hyperparams, make_hyperparams


logger = structlog.get_logger(__name__)

CODE_TOLERANCE = 1e-9


class DesignKind(str, Enum):
    """Loại ma trận thí nghiệm"""
    DSD = "dsd"
    CCD = "ccd"
    CUSTOM = "custom"


class AlphaMode(str, Enum):
    """Cách đặt star point của CCD"""
    ROTATABLE = "rotatable"
    FACE = "face"
    INSCRIBED = "inscribed"


def _same_value(a: Any, b: Any) -> bool:
    if isinstance(a, str) or isinstance(b, str):
        return str(a).strip().lower() == str(b).strip().lower()
    return math.isclose(float(a), float(b), rel_tol=1e-9, abs_tol=1e-12)


@dataclass(frozen=True)
class FactorDef:
    """Một factor của thí nghiệm: mức thô, mã hóa và giá trị Hyperparams tương ứng"""
    name: str
    param: str
    factor_class: str = "training"
    factor_type: str = "continuous"
    levels: Tuple[Any, ...] = ()
    coded: Tuple[float, ...] = (-1.0, 0.0, 1.0)
    values: Optional[Tuple[Any, ...]] = None
    interpolate: bool = False
    scale: str = "linear"

    def __post_init__(self):
        if self.factor_type not in ("continuous", "categorical"):
            raise ConfigurationError(f"factor '{self.name}': unknown type '{self.factor_type}'")
        if len(self.levels) != len(self.coded):
            raise ConfigurationError(f"factor '{self.name}': {len(self.levels)} levels but {len(self.coded)} codes")
        if self.values is not None and len(self.values) != len(self.levels):
            raise ConfigurationError(f"factor '{self.name}': values do not match levels")
        if self.scale not in ("linear", "log10"):
            raise ConfigurationError(f"factor '{self.name}': unknown scale '{self.scale}'")

    @property
    def is_categorical(self) -> bool:
        return self.factor_type == "categorical"

    @property
    def param_values(self) -> Tuple[Any, ...]:
        return self.values if self.values is not None else self.levels

    def _axis(self) -> Tuple[float, float]:
        low, high = float(self.levels[0]), float(self.levels[-1])
        if self.scale == "log10":
            low, high = math.log10(low), math.log10(high)
        return (low + high) / 2, (high - low) / 2

    def raw_from_code(self, code: float, row: Optional[int] = None) -> Any:
        """Mã hóa -> giá trị thô (mức trong bảng)"""
        for level, c in zip(self.levels, self.coded):
            if abs(float(code) - c) <= CODE_TOLERANCE:
                return level
        if not self.interpolate:
            raise DecodeError(self.name, row, code)
        center, half = self._axis()
        value = center + float(code) * half
        return 10 ** value if self.scale == "log10" else value

    def param_from_raw(self, raw: Any, row: Optional[int] = None) -> Any:
        """Giá trị thô -> giá trị Hyperparams"""
        for level, value in zip(self.levels, self.param_values):
            if _same_value(level, raw):
                return value
        if self.interpolate and not isinstance(raw, str):
            return float(raw)
        raise DecodeError(self.name, row, raw)

    def code_from_raw(self, raw: Any, row: Optional[int] = None) -> float:
        """Giá trị thô -> mã hóa"""
        for level, c in zip(self.levels, self.coded):
            if _same_value(level, raw):
                return float(c)
        if self.interpolate and not isinstance(raw, str):
            center, half = self._axis()
            value = math.log10(float(raw)) if self.scale == "log10" else float(raw)
            return (value - center) / half
        raise DecodeError(self.name, row, raw)

    def raw_from_param(self, value: Any, row: Optional[int] = None) -> Any:
        """Giá trị Hyperparams -> giá trị thô"""
        for level, v in zip(self.levels, self.param_values):
            if _same_value(v, value) if not isinstance(v, bool) else v == value:
                return level
        if self.interpolate and not isinstance(value, (str, bool)):
            return float(value)
        raise DecodeError(self.name, row, value)


@dataclass
class DesignMatrix:
    """Ma trận thí nghiệm đã mã hóa, theo thứ tự chuẩn"""
    kind: DesignKind
    factors: List[FactorDef]
    rows: np.ndarray
    run_order: Optional[np.ndarray] = None
    replicate_count: int = 1
    fixed: Hyperparams = field(default_factory=Hyperparams)
    name: str = "custom"

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.factors):
            raise ConfigurationError(
                f"design rows {self.rows.shape} do not match {len(self.factors)} factors"
            )
        if self.run_order is None:
            self.run_order = np.arange(len(self.rows))
        self.kind = DesignKind(self.kind)

    @property
    def n_rows(self) -> int:
        return int(self.rows.shape[0])

    @property
    def factor_names(self) -> List[str]:
        return [f.name for f in self.factors]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.factor_names.index(name)]

    def continuous_indices(self) -> List[int]:
        return [i for i, f in enumerate(self.factors) if not f.is_categorical]

    def categorical_indices(self) -> List[int]:
        return [i for i, f in enumerate(self.factors) if f.is_categorical]

    def raw_rows(self) -> List[List[Any]]:
        return [
            [factor.raw_from_code(code, row=i + 1) for factor, code in zip(self.factors, row)]
            for i, row in enumerate(self.rows)
        ]


@dataclass
class CcdSpec:
    """Tham số CCD"""
    k: int
    alpha_mode: AlphaMode = AlphaMode.ROTATABLE
    alpha: Optional[float] = None
    center_points: int = 5
    block_factor: Optional[FactorDef] = None

    @property
    def n_f(self) -> int:
        return 2 ** self.k

    def resolved_alpha(self) -> float:
        mode = AlphaMode(self.alpha_mode)
        if mode == AlphaMode.FACE:
            return 1.0
        alpha = self.alpha if self.alpha is not None else self.n_f ** 0.25
        if mode == AlphaMode.INSCRIBED and alpha <= 1.0:
            raise ConfigurationError(f"inscribed CCD needs alpha > 1, got {alpha}")
        return alpha


@dataclass
class DsdReport:
    """Kết quả kiểm tra cấu trúc DSD"""
    n_rows: int
    expected_rows: int
    center_rows: List[int]
    unpaired_rows: List[int]
    strict_violations: List[Tuple[int, str]]
    max_main_quadratic_dot: float
    row_count_ok: bool

    @property
    def fold_over_ok(self) -> bool:
        return not self.unpaired_rows

    @property
    def orthogonal(self) -> bool:
        return self.max_main_quadratic_dot <= 1e-12

    @property
    def structural_ok(self) -> bool:
        return self.fold_over_ok and self.row_count_ok and bool(self.center_rows)

    @property
    def strict_ok(self) -> bool:
        return self.structural_ok and self.orthogonal and not self.strict_violations

    def violations(self) -> List[str]:
        messages = []
        if not self.row_count_ok:
            messages.append(f"row count {self.n_rows}, expected {self.expected_rows}")
        if not self.center_rows:
            messages.append("no center row")
        messages += [f"row {r}: no fold-over mate" for r in self.unpaired_rows]
        messages += [f"row {r}: column '{c}' is not the negation of its mate" for r, c in self.strict_violations]
        if not self.orthogonal:
            messages.append(f"main effects not orthogonal to quadratics (max |dot| {self.max_main_quadratic_dot:.3g})")
        return messages


# ---------------------------------------------------------------------------
# Conference matrices
# ---------------------------------------------------------------------------

def _prime_power(q: int) -> Optional[Tuple[int, int]]:
    for p in range(2, q + 1):
        if q % p == 0:
            k, rest = 0, q
            while rest % p == 0:
                rest //= p
                k += 1
            return (p, k) if rest == 1 else None
    return None


def _poly_mod(a: List[int], b: List[int], p: int) -> List[int]:
    """Phần dư a mod b trên GF(p); hệ số từ bậc thấp đến cao"""
    a = a[:]
    inv = pow(b[-1], p - 2, p)
    while len(a) >= len(b) and any(a):
        if a[-1] == 0:
            a.pop()
            continue
        factor = (a[-1] * inv) % p
        shift = len(a) - len(b)
        for i, coeff in enumerate(b):
            a[shift + i] = (a[shift + i] - factor * coeff) % p
        a.pop()
    return a


def _irreducible(p: int, k: int) -> List[int]:
    for tail in product(range(p), repeat=k):
        candidate = list(tail) + [1]
        if candidate[0] == 0:
            continue
        reducible = False
        for degree in range(1, k // 2 + 1):
            for low in product(range(p), repeat=degree):
                divisor = list(low) + [1]
                if not any(_poly_mod(candidate, divisor, p)):
                    reducible = True
                    break
            if reducible:
                break
        if not reducible:
            return candidate
    raise UnsupportedDesignError(f"no irreducible polynomial of degree {k} over GF({p})")


class _GaloisField:
    """GF(p^k), phần tử là số nguyên mã hóa hệ số cơ số p"""

    def __init__(self, p: int, k: int):
        self.p, self.k, self.q = p, k, p ** k
        self.modulus = _irreducible(p, k) if k > 1 else None

    def _digits(self, a: int) -> List[int]:
        return [(a // self.p ** i) % self.p for i in range(self.k)]

    def _int(self, digits: Sequence[int]) -> int:
        return sum(d * self.p ** i for i, d in enumerate(digits))

    def sub(self, a: int, b: int) -> int:
        return self._int([(x - y) % self.p for x, y in zip(self._digits(a), self._digits(b))])

    def mul(self, a: int, b: int) -> int:
        if self.k == 1:
            return (a * b) % self.p
        x, y = self._digits(a), self._digits(b)
        prod = [0] * (2 * self.k - 1)
        for i, xi in enumerate(x):
            for j, yj in enumerate(y):
                prod[i + j] = (prod[i + j] + xi * yj) % self.p
        rest = _poly_mod(prod, self.modulus, self.p)
        return self._int(rest + [0] * (self.k - len(rest)))


def _paley(q: int) -> np.ndarray:
    p, k = _prime_power(q)
    gf = _GaloisField(p, k)
    squares = {gf.mul(x, x) for x in range(1, q)}

    def chi(a: int) -> int:
        return 0 if a == 0 else (1 if a in squares else -1)

    quad = np.array([[chi(gf.sub(i, j)) for j in range(q)] for i in range(q)], dtype=np.int64)
    c = np.zeros((q + 1, q + 1), dtype=np.int64)
    c[0, 1:] = 1
    c[1:, 0] = 1 if q % 4 == 1 else -1
    c[1:, 1:] = quad
    return c


def _is_skew(c: np.ndarray) -> bool:
    return bool(np.array_equal(c, -c.T))


def conference_matrix(order: int) -> np.ndarray:
    """
    Conference matrix bậc ``order`` (C C^T = (order-1) I, đường chéo 0)

    Paley construction when order-1 is an odd prime power, otherwise skew
    doubling [[C, C+I], [C-I, -C]] from a skew matrix of half the order.

    Raises:
        UnsupportedDesignError: no construction for this order
    """
    if order < 2 or order % 2:
        raise UnsupportedDesignError(f"no conference matrix of order {order} (order must be even)")

    q = order - 1
    pk = _prime_power(q)
    if pk is not None and pk[0] != 2:
        c = _paley(q)
    else:
        half = order // 2
        try:
            base = conference_matrix(half) if half % 2 == 0 else None
        except UnsupportedDesignError:
            base = None
        if base is None or not _is_skew(base):
            raise UnsupportedDesignError(f"no conference matrix construction for order {order}")
        eye = np.eye(half, dtype=np.int64)
        c = np.block([[base, base + eye], [base - eye, -base]])

    if not np.array_equal(c @ c.T, (order - 1) * np.eye(order, dtype=np.int64)):
        raise UnsupportedDesignError(f"conference construction failed for order {order}")
    return c


# ---------------------------------------------------------------------------
# DSD / CCD generation
# ---------------------------------------------------------------------------

def generate_dsd(
    continuous: Sequence[FactorDef],
    categorical: Sequence[FactorDef] = (),
    fixed: Optional[Hyperparams] = None,
) -> DesignMatrix:
    """
    Dựng Definitive Screening Design

    Rows 2i and 2i+1 are conference row i and its negation. Categorical
    factors take the last columns; their zero cell becomes +1 (and -1 in the
    mate). One all-zero center row, or two center rows with the categorical
    columns at -1 and +1 when categorical factors exist.
    """
    m = len(continuous) + len(categorical)
    if len(continuous) < 4:
        raise ConfigurationError(f"DSD needs at least 4 continuous factors, got {len(continuous)}")
    c = conference_matrix(m).astype(np.float64)
    n_cat = len(categorical)

    rows = []
    for i in range(m):
        row = c[i].copy()
        for j in range(m - n_cat, m):
            if row[j] == 0:
                row[j] = 1.0
        rows.append(row)
        rows.append(-row)

    if n_cat:
        for sign in (-1.0, 1.0):
            center = np.zeros(m)
            center[m - n_cat:] = sign
            rows.append(center)
    else:
        rows.append(np.zeros(m))

    factors = list(continuous) + list(categorical)
    logger.info("🧪 DSD generated", factors=m, categorical=n_cat, rows=len(rows))
    return DesignMatrix(
        kind=DesignKind.DSD,
        factors=factors,
        rows=np.array(rows),
        fixed=fixed or Hyperparams(),
        name=f"dsd{m}",
    )


def _is_center(row: np.ndarray, continuous: Sequence[int]) -> bool:
    return all(abs(row[j]) <= CODE_TOLERANCE for j in continuous)


def validate_dsd(matrix: Union[DesignMatrix, np.ndarray]) -> DsdReport:
    """
    Kiểm tra cấu trúc DSD: fold-over, center row, số hàng, trực giao main/quadratic

    Mates are consecutive non-center rows. A column pairs when the two codes
    are negations, or when either is zero (reported as a strict violation
    if they are not exact negations).
    """
    if isinstance(matrix, np.ndarray):
        factors = [FactorDef(name=f"x{j + 1}", param="", levels=(-1, 0, 1), interpolate=True) for j in range(matrix.shape[1])]
        matrix = DesignMatrix(kind=DesignKind.DSD, factors=factors, rows=matrix)

    rows = matrix.rows
    names = matrix.factor_names
    cont = matrix.continuous_indices()
    n_cat = len(matrix.categorical_indices())
    m = len(matrix.factors)

    center_rows = [i + 1 for i, row in enumerate(rows) if _is_center(row, cont)]
    body = [i for i, row in enumerate(rows) if not _is_center(row, cont)]

    unpaired: List[int] = []
    strict: List[Tuple[int, str]] = []
    if len(body) % 2:
        unpaired.append(body[-1] + 1)
        body = body[:-1]
    for a, b in zip(body[0::2], body[1::2]):
        paired = True
        for j in range(m):
            x, y = rows[a, j], rows[b, j]
            if abs(x + y) <= CODE_TOLERANCE:
                continue
            if abs(x) <= CODE_TOLERANCE or abs(y) <= CODE_TOLERANCE:
                strict.append((a + 1, names[j]))
                continue
            paired = False
        if not paired:
            unpaired.extend([a + 1, b + 1])

    cont_cols = rows[:, cont]
    dots = cont_cols.T @ (cont_cols ** 2) if cont else np.zeros((1, 1))
    expected = 2 * m + (2 if n_cat else 1)
    n = len(rows)
    row_count_ok = n == expected if matrix.kind == DesignKind.DSD else n >= 2 * m + 1

    return DsdReport(
        n_rows=n,
        expected_rows=expected,
        center_rows=center_rows,
        unpaired_rows=unpaired,
        strict_violations=strict,
        max_main_quadratic_dot=float(np.max(np.abs(dots))) if dots.size else 0.0,
        row_count_ok=row_count_ok,
    )


def generate_ccd(
    spec: CcdSpec,
    continuous: Sequence[FactorDef],
    fixed: Optional[Hyperparams] = None,
) -> DesignMatrix:
    """
    Dựng Central Composite Design

    Cube points in standard order (first factor changes fastest), then star
    points (-alpha, +alpha) per factor, then center replicates; the whole
    block repeats for each level of ``spec.block_factor``. Inscribed mode
    contracts the cube by 1/alpha and puts star points at +-1.
    """
    k = len(continuous)
    if k < 2:
        raise ConfigurationError(f"CCD needs k >= 2 continuous factors, got {k}")
    if spec.k != k:
        raise ConfigurationError(f"CcdSpec.k = {spec.k} but {k} factors given")
    alpha = spec.resolved_alpha()
    mode = AlphaMode(spec.alpha_mode)

    cube = np.array([[1.0 if (i >> j) & 1 else -1.0 for j in range(k)] for i in range(spec.n_f)])
    star_distance = alpha
    if mode == AlphaMode.INSCRIBED:
        cube = cube / alpha
        star_distance = 1.0
    stars = []
    for j in range(k):
        for sign in (-1.0, 1.0):
            point = np.zeros(k)
            point[j] = sign * star_distance
            stars.append(point)
    block = np.vstack([cube, np.array(stars), np.zeros((spec.center_points, k))])

    factors = [replace(f, interpolate=True) for f in continuous]
    if spec.block_factor is not None:
        factors.append(spec.block_factor)
        rows = np.vstack([
            np.hstack([block, np.full((len(block), 1), code)]) for code in spec.block_factor.coded
        ])
    else:
        rows = block

    logger.info("🧪 CCD generated", k=k, alpha=round(alpha, 5), mode=mode.value, rows=len(rows))
    return DesignMatrix(
        kind=DesignKind.CCD,
        factors=factors,
        rows=rows,
        fixed=fixed or Hyperparams(),
        name=f"ccd{k}",
    )


# ---------------------------------------------------------------------------
# Row coding
# ---------------------------------------------------------------------------

def decode_row(
    row: Sequence[float],
    factors: Sequence[FactorDef],
    fixed: Optional[Hyperparams] = None,
    row_index: Optional[int] = None,
) -> Hyperparams:
    """
    Giải mã một hàng mã hóa thành Hyperparams đầy đủ

    Factors not in the design keep the values of ``fixed``.

    Raises:
        DecodeError: mã không ứng với mức nào của factor
    """
    values = {}
    for factor, code in zip(factors, row):
        raw = factor.raw_from_code(code, row_index)
        values[factor.param] = factor.param_from_raw(raw, row_index)
    return make_hyperparams(values, base=fixed)


def encode_row(h: Hyperparams, factors: Sequence[FactorDef]) -> np.ndarray:
    """Mã hóa Hyperparams thành hàng coded (nghịch đảo của decode_row)"""
    coded = []
    for factor in factors:
        raw = factor.raw_from_param(getattr(h, factor.param))
        coded.append(factor.code_from_raw(raw))
    return np.array(coded)


def randomize_run_order(matrix: DesignMatrix, seed: int) -> DesignMatrix:
    """Hoán vị thứ tự chạy theo seed; thứ tự chuẩn được giữ nguyên"""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    return replace(matrix, run_order=rng.permutation(matrix.n_rows))


# ---------------------------------------------------------------------------
# Built-in designs
# ---------------------------------------------------------------------------

def _continuous(name, param, levels, factor_class="training", values=None, interpolate=True, scale="linear"):
    return FactorDef(
        name=name, param=param, factor_class=factor_class, factor_type="continuous",
        levels=tuple(levels), coded=(-1.0, 0.0, 1.0),
        values=tuple(values) if values is not None else None,
        interpolate=interpolate, scale=scale,
    )


def _categorical(name, param, levels, values, factor_class="cnn-layer"):
    return FactorDef(
        name=name, param=param, factor_class=factor_class, factor_type="categorical",
        levels=tuple(levels), coded=(-1.0, 1.0), values=tuple(values),
    )


SCREENING_CONTINUOUS = [
    _continuous("Batch", "batch_size", (80, 160, 240)),
    _continuous("KernConst", "kernel_constraint", (3, 5, 7)),
    _continuous("Optm", "optimizer", (1, 2, 3), values=("adam", "adamax", "nadam"), interpolate=False),
    _continuous("DropC1", "drop_c1", (0, 0.1, 0.2)),
    _continuous("DropC2", "drop_c2", (0, 0.1, 0.2)),
    _continuous("DropC3", "drop_c3", (0, 0.1, 0.2)),
    _continuous("DropD1", "drop_d1", (0.1, 0.3, 0.5)),
    _continuous("FiltC1", "filter_c1", (3, 5, 7), factor_class="cnn-layer", interpolate=False),
    _continuous("FiltC2", "filter_c2", (3, 5, 7), factor_class="cnn-layer", interpolate=False),
    _continuous("FiltC3", "filter_c3", (3, 5, 7), factor_class="cnn-layer", interpolate=False),
    _continuous("Active", "activation", (1, 2, 3), factor_class="cnn-layer",
                values=("tanh", "selu", "relu"), interpolate=False),
]

SCREENING_CATEGORICAL = [
    _categorical("MaxPC1", "maxpool_c1", (0, 2), (False, True)),
    _categorical("MaxPC2", "maxpool_c2", (0, 2), (False, True)),
    _categorical("MaxPC3", "maxpool_c3", (0, 2), (False, True)),
    _categorical("Padd", "padding", ("V", "S"), ("valid", "same")),
    _categorical("StrideC1", "stride_c1", (1, 2), (1, 2)),
]

SCREENING_COLUMNS = [
    "Batch", "KernConst", "Optm", "DropC1", "DropC2", "DropC3", "DropD1",
    "MaxPC1", "MaxPC2", "MaxPC3", "FiltC1", "FiltC2", "FiltC3", "Padd", "StrideC1", "Active",
]

# Screening matrix in standard order, printed columns
SCREENING_TABLE = """
160 7 3 0.2 0.2 0.2 0.5 2 2 2 7 7 7 S 2 3
160 3 1 0 0 0 0.1 0 0 0 3 3 3 V 1 1
240 5 1 0 0.2 0 0.5 2 0 2 3 3 7 V 2 3
80 5 3 0.2 0 0.2 0.1 0 2 0 7 7 3 S 1 1
240 7 2 0 0 0.2 0.1 2 0 2 7 3 3 S 1 3
80 3 2 0.2 0.2 0 0.5 0 2 0 3 7 7 V 2 1
240 7 3 0.1 0 0 0.5 0 0 2 7 7 3 V 2 1
80 3 1 0.1 0.2 0.2 0.1 2 2 0 3 3 7 S 1 3
240 3 3 0.2 0.1 0 0.1 2 0 0 7 7 7 V 1 3
80 7 1 0 0.1 0.2 0.5 0 2 2 3 3 3 S 2 1
240 7 1 0.2 0.2 0.1 0.1 0 0 2 3 5 5 S 1 1
80 3 3 0 0 0.1 0.5 2 2 0 7 3 3 V 2 3
240 3 3 0 0.2 0.2 0.3 0 0 0 7 3 7 S 2 1
80 7 1 0.2 0 0 0.3 2 2 2 3 7 3 V 1 3
240 3 1 0.2 0 0.2 0.5 0 0 0 3 7 3 S 2 3
80 7 3 0 0.2 0 0.1 2 2 2 7 3 7 V 1 1
240 7 3 0.2 0.2 0.2 0.5 2 0 0 3 3 3 V 1 1
80 3 1 0 0 0 0.1 0 2 2 7 7 7 S 2 3
240 3 1 0 0.2 0 0.5 2 2 0 7 7 3 S 1 1
80 7 3 0.2 0 0.2 0.1 0 0 2 3 3 7 V 2 3
240 7 1 0 0 0.2 0.1 2 2 0 5 7 7 V 2 1
80 3 3 0.2 0.2 0 0.5 0 0 2 5 3 3 S 1 3
240 7 3 0 0 0 0.5 0 2 0 3 5 7 S 1 3
80 3 1 0.2 0.2 0.2 0.1 2 0 2 7 5 3 V 2 1
240 3 3 0.2 0 0 0.1 2 2 2 3 3 5 S 2 1
80 7 1 0 0.2 0.2 0.5 0 0 0 7 7 5 V 1 3
240 7 1 0.2 0.2 0 0.1 0 2 0 7 3 3 V 2 3
80 3 3 0 0 0.2 0.5 2 0 2 3 7 7 S 1 1
240 3 3 0 0.2 0.2 0.1 0 2 2 3 7 3 V 1 3
80 7 1 0.2 0 0 0.5 2 0 0 7 3 7 S 2 1
240 3 1 0.2 0 0.2 0.5 0 2 2 7 3 7 V 1 2
80 7 3 0 0.2 0 0.1 2 0 0 3 7 3 S 2 2
160 5 2 0.1 0.1 0.1 0.3 0 0 0 5 5 5 V 1 2
160 5 2 0.1 0.1 0.1 0.3 2 2 2 5 5 5 S 2 2
"""

REGULARIZATION_FACTORS = [
    _continuous(name, param, (1e-7, 1e-5, 1e-3), factor_class="cnn-layer", scale="log10")
    for name, param in (("C1_L2", "l2_c1"), ("C2_L2", "l2_c2"), ("C3_L2", "l2_c3"), ("D1_L2", "l2_d1"))
]

REGULARIZATION_TABLE = """
1e-3 1e-3 1e-3 1e-3
1e-7 1e-7 1e-7 1e-7
1e-5 1e-3 1e-7 1e-7
1e-5 1e-7 1e-3 1e-3
1e-3 1e-5 1e-3 1e-7
1e-7 1e-5 1e-7 1e-3
1e-7 1e-3 1e-5 1e-3
1e-3 1e-7 1e-5 1e-7
1e-7 1e-7 1e-3 1e-5
1e-3 1e-3 1e-7 1e-5
1e-3 1e-7 1e-7 1e-3
1e-7 1e-3 1e-3 1e-7
1e-5 1e-5 1e-5 1e-5
"""

OPTIMIZATION_FACTORS = [
    _continuous("KernConst", "kernel_constraint", (3, 5, 7)),
    _continuous("DropD1", "drop_d1", (0.1, 0.3, 0.5)),
]

OPTIMIZER_BLOCK = _categorical("Optimizer", "optimizer", ("Adam", "Adamax"), ("adam", "adamax"), factor_class="training")


def _parse_scalar(text: str) -> Any:
    text = str(text).strip()
    try:
        number = float(text)
    except ValueError:
        return text
    return int(number) if number.is_integer() and "e" not in text.lower() and "." not in text else number


def _matrix_from_table(table: str, factors: Sequence[FactorDef]) -> np.ndarray:
    rows = []
    for row_index, line in enumerate(table.strip().splitlines(), start=1):
        cells = line.split()
        rows.append([f.code_from_raw(_parse_scalar(c), row_index) for f, c in zip(factors, cells)])
    return np.array(rows)


def builtin_design(name: str) -> DesignMatrix:
    """
    Ma trận có sẵn

    ``screening``: 16-factor DSD (34 rows) exactly as printed, kept verbatim.
    ``optimization``: rotatable CCD on kernel constraint and dense dropout,
    two optimizer blocks, 5 centers each (26 rows).
    ``regularization``: 4-factor L2 DSD (13 rows), log-scaled levels.
    """
    if name == "screening":
        by_name = {f.name: f for f in SCREENING_CONTINUOUS + SCREENING_CATEGORICAL}
        factors = [by_name[c] for c in SCREENING_COLUMNS]
        return DesignMatrix(
            kind=DesignKind.DSD,
            factors=factors,
            rows=_matrix_from_table(SCREENING_TABLE, factors),
            name="screening",
        )
    if name == "optimization":
        spec = CcdSpec(k=2, alpha_mode=AlphaMode.ROTATABLE, center_points=5, block_factor=OPTIMIZER_BLOCK)
        design = generate_ccd(spec, OPTIMIZATION_FACTORS, fixed=VERIFIED_CONFIG)
        design.name = "optimization"
        return design
    if name == "regularization":
        return DesignMatrix(
            kind=DesignKind.CUSTOM,
            factors=list(REGULARIZATION_FACTORS),
            rows=_matrix_from_table(REGULARIZATION_TABLE, REGULARIZATION_FACTORS),
            fixed=VERIFIED_CONFIG,
            name="regularization",
        )
    raise ConfigurationError(f"unknown built-in design '{name}' (expected screening, optimization, regularization)")


BUILTIN_DESIGNS = ("screening", "optimization", "regularization")


# ---------------------------------------------------------------------------
# CSV + sidecar
# ---------------------------------------------------------------------------

def _join(values: Sequence[Any]) -> str:
    return "|".join(str(v) for v in values)


def write_factor_sidecar(matrix: DesignMatrix, path: Union[str, Path]) -> Path:
    """Ghi metadata FactorDef dạng KEY=value"""
    path = Path(path)
    lines = [
        f"DESIGN_NAME={matrix.name}",
        f"DESIGN_KIND={matrix.kind.value}",
        f"REPLICATES={matrix.replicate_count}",
        f"FACTOR_COUNT={len(matrix.factors)}",
    ]
    for i, f in enumerate(matrix.factors, start=1):
        prefix = f"FACTOR_{i:02d}_"
        lines += [
            f"{prefix}NAME={f.name}",
            f"{prefix}PARAM={f.param}",
            f"{prefix}CLASS={f.factor_class}",
            f"{prefix}TYPE={f.factor_type}",
            f"{prefix}LEVELS={_join(f.levels)}",
            f"{prefix}CODED={_join(f.coded)}",
            f"{prefix}VALUES={_join(f.param_values)}",
            f"{prefix}INTERPOLATE={str(f.interpolate).lower()}",
            f"{prefix}SCALE={f.scale}",
        ]
    for key, value in matrix.fixed.model_dump().items():
        lines.append(f"FIXED_{key.upper()}={'' if value is None else value}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _param_scalar(text: str) -> Any:
    if text in ("True", "False"):
        return text == "True"
    return _parse_scalar(text)


def read_factor_sidecar(path: Union[str, Path]) -> Tuple[Dict[str, str], List[FactorDef], Hyperparams]:
    """Đọc sidecar -> (metadata, factors, fixed Hyperparams)"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"factor sidecar not found: {path}")
    values = {k: v for k, v in dotenv_values(path).items() if v is not None}
    try:
        count = int(values["FACTOR_COUNT"])
        factors = []
        for i in range(1, count + 1):
            prefix = f"FACTOR_{i:02d}_"
            factors.append(FactorDef(
                name=values[f"{prefix}NAME"],
                param=values[f"{prefix}PARAM"],
                factor_class=values[f"{prefix}CLASS"],
                factor_type=values[f"{prefix}TYPE"],
                levels=tuple(_parse_scalar(v) for v in values[f"{prefix}LEVELS"].split("|")),
                coded=tuple(float(v) for v in values[f"{prefix}CODED"].split("|")),
                values=tuple(_param_scalar(v) for v in values[f"{prefix}VALUES"].split("|")),
                interpolate=values.get(f"{prefix}INTERPOLATE", "false").lower() == "true",
                scale=values.get(f"{prefix}SCALE", "linear"),
            ))
    except (KeyError, ValueError) as e:
        raise DataError(f"{path}: malformed factor sidecar ({e})") from e

    fixed_values = {
        key[len("FIXED_"):].lower(): (None if value == "" else value)
        for key, value in values.items() if key.startswith("FIXED_")
    }
    fixed = make_hyperparams(fixed_values) if fixed_values else Hyperparams()
    meta = {k: values[k] for k in ("DESIGN_NAME", "DESIGN_KIND", "REPLICATES") if k in values}
    return meta, factors, fixed


def write_design_csv(matrix: DesignMatrix, path: Union[str, Path], sidecar: bool = True) -> Path:
    """
    Ghi ma trận ra CSV (giá trị thô, thứ tự chuẩn, cột RunOrder) và sidecar ``.factors``
    """
    path = Path(path)
    frame = pd.DataFrame(matrix.raw_rows(), columns=matrix.factor_names)
    run_position = np.empty(matrix.n_rows, dtype=int)
    run_position[matrix.run_order] = np.arange(1, matrix.n_rows + 1)
    frame.insert(0, "RunOrder", run_position)
    frame.insert(0, "TC", np.arange(1, matrix.n_rows + 1))
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    if sidecar:
        write_factor_sidecar(matrix, sidecar_path(path))
    logger.info("📝 Design written", path=str(path), rows=matrix.n_rows)
    return path


def sidecar_path(csv_path: Union[str, Path]) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_suffix(".factors")


def read_design_csv(path: Union[str, Path], sidecar: Optional[Union[str, Path]] = None) -> DesignMatrix:
    """
    Đọc CSV ma trận theo sidecar

    Raises:
        DataError: thiếu cột hoặc ô không parse được (nêu hàng/cột)
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"design CSV not found: {path}")
    meta, factors, fixed = read_factor_sidecar(sidecar or sidecar_path(path))
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)

    missing = [f.name for f in factors if f.name not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing factor columns {', '.join(missing)}")

    rows = []
    for i, record in enumerate(frame.to_dict("records"), start=1):
        coded = []
        for factor in factors:
            cell = record[factor.name]
            try:
                coded.append(factor.code_from_raw(_parse_scalar(cell), i))
            except DecodeError as e:
                raise DataError(f"{path}: row {i}, column '{factor.name}': cannot parse {cell!r}") from e
        rows.append(coded)

    run_order = None
    if "RunOrder" in frame.columns:
        try:
            positions = frame["RunOrder"].astype(int).to_numpy()
            run_order = np.argsort(positions, kind="stable")
        except ValueError as e:
            raise DataError(f"{path}: column 'RunOrder' is not an integer column") from e

    return DesignMatrix(
        kind=DesignKind(meta.get("DESIGN_KIND", "custom")),
        factors=factors,
        rows=np.array(rows) if rows else np.zeros((0, len(factors))),
        run_order=run_order,
        replicate_count=int(meta.get("REPLICATES", 1)),
        fixed=fixed,
        name=meta.get("DESIGN_NAME", path.stem),
    )


def load_design(reference: Union[str, Path]) -> DesignMatrix:
    """Tên thiết kế có sẵn hoặc đường dẫn CSV (kèm sidecar .factors)"""
    if str(reference) in BUILTIN_DESIGNS:
        return builtin_design(str(reference))
    path = Path(reference)
    if path.suffix.lower() != ".csv":
        raise ConfigurationError(
            f"design '{reference}' is neither a built-in design ({', '.join(BUILTIN_DESIGNS)}) nor a CSV file"
        )
    return read_design_csv(path)
