"""
Regression and ANOVA Service
Hồi quy bình phương tối thiểu, bảng ANOVA, PRESS, VIF và thống kê tóm tắt cho response của DoE
"""

import re
from dataclasses import asdict, dataclass, field, is_dataclass
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from scipy import linalg
from scipy.special import betainc

from ..exceptions import ConfigurationError, DataError, LeverageError


logger = structlog.get_logger(__name__)

ALIAS_TOLERANCE = 1e-10
P_DISPLAY_FLOOR = 0.0005

GROUP_LABELS = {
    "linear": "Linear",
    "square": "Square",
    "interaction": "2-Way Interaction",
}


@dataclass(frozen=True)
class Term:
    """Một term của mô hình hồi quy"""
    name: str
    factors: Tuple[str, ...]
    kind: str  # linear | square | interaction | categorical


@dataclass
class RegressionModel:
    """Mô hình đã fit bằng QR"""
    terms: List[Term]
    columns: List[str]
    column_terms: List[int]
    X: np.ndarray
    y: np.ndarray
    coefficients: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    q: np.ndarray
    dropped_columns: List[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def rank(self) -> int:
        return int(self.X.shape[1])

    @property
    def sse(self) -> float:
        return float(np.sum(self.residuals ** 2))

    @property
    def sst(self) -> float:
        return float(np.sum((self.y - self.y.mean()) ** 2))

    @property
    def error_df(self) -> int:
        return self.n - self.rank

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.columns.index(name)])

    def leverage(self) -> np.ndarray:
        return np.sum(self.q ** 2, axis=1)


@dataclass
class ModelSummary:
    """S, R², R²-adj, R²-pred, PRESS"""
    s: Optional[float]
    r_sq: float
    r_sq_adj: Optional[float]
    r_sq_pred: Optional[float]
    press: Optional[float]


@dataclass
class AnovaRow:
    source: str
    df: int
    seq_ss: float
    contribution: float
    adj_ss: Optional[float] = None
    adj_ms: Optional[float] = None
    f: Optional[float] = None
    p: Optional[float] = None
    vif: Optional[float] = None
    level: int = 0


@dataclass
class AnovaTable:
    """Bảng ANOVA cùng model summary"""
    rows: List[AnovaRow]
    summary: ModelSummary
    model: RegressionModel

    def row(self, source: str) -> AnovaRow:
        for r in self.rows:
            if r.source == source:
                return r
        raise KeyError(source)

    def to_frame(self) -> pd.DataFrame:
        records = []
        for r in self.rows:
            records.append({
                "Source": r.source,
                "DF": r.df,
                "Seq SS": r.seq_ss,
                "Contribution": r.contribution,
                "Adj SS": r.adj_ss,
                "Adj MS": r.adj_ms,
                "F-Value": r.f,
                "P-Value": r.p,
                "VIF": r.vif,
            })
        return pd.DataFrame.from_records(records)


@dataclass
class RunSummary:
    """Thống kê tóm tắt của một response qua nhiều lần chạy"""
    response: str
    n: int
    mean: Optional[float]
    sd: Optional[float]
    se: Optional[float]


# ---------------------------------------------------------------------------
# Terms and model matrix
# ---------------------------------------------------------------------------

_CATEGORICAL_RE = re.compile(r"^C\((\w+)\)$")


def _parse_term(token: str, factors: Sequence[str], categorical: Sequence[str]) -> Term:
    match = _CATEGORICAL_RE.match(token)
    if match:
        name = match.group(1)
        if name not in factors:
            raise ConfigurationError(f"unknown factor '{name}' in term '{token}'")
        return Term(name=name, factors=(name,), kind="categorical")

    if token.endswith("^2"):
        token = f"{token[:-2]}*{token[:-2]}"
    parts = tuple(p for p in token.split("*") if p)
    unknown = [p for p in parts if p not in factors]
    if unknown:
        raise ConfigurationError(f"unknown factor '{unknown[0]}' in term '{token}'")
    if len(parts) == 1:
        if parts[0] in categorical:
            return Term(name=parts[0], factors=parts, kind="categorical")
        return Term(name=parts[0], factors=parts, kind="linear")
    if len(parts) == 2 and parts[0] == parts[1]:
        if parts[0] in categorical:
            raise ConfigurationError(f"categorical factor '{parts[0]}' cannot be squared")
        return Term(name=f"{parts[0]}*{parts[0]}", factors=parts, kind="square")
    if len(parts) == 2:
        return Term(name=f"{parts[0]}*{parts[1]}", factors=parts, kind="interaction")
    raise ConfigurationError(f"unsupported term '{token}' (only main, square and 2-way terms)")


def build_model_terms(
    factors: Sequence[str],
    spec: str = "linear",
    categorical: Sequence[str] = (),
) -> List[Term]:
    """
    Dựng danh sách term từ chuỗi mô tả

    ``spec`` is a ``+``/comma separated list of keywords (``linear``,
    ``quadratic``, ``interactions``, ``full``) and explicit terms
    (``a``, ``a*b``, ``a*a``, ``a^2``, ``C(a)``). Squares are never built
    for categorical factors. Order: linear, square, interaction, as written.
    """
    factors = list(factors)
    continuous = [f for f in factors if f not in categorical]
    terms: List[Term] = []

    def add(term: Term):
        if term not in terms:
            terms.append(term)

    for token in (t.strip() for t in re.split(r"[+,\s]+", spec) if t.strip()):
        keyword = token.lower()
        if keyword in ("linear", "quadratic", "interactions", "full"):
            for f in factors:
                add(Term(f, (f,), "categorical" if f in categorical else "linear"))
            if keyword in ("quadratic", "full"):
                for f in continuous:
                    add(Term(f"{f}*{f}", (f, f), "square"))
            if keyword in ("interactions", "full"):
                for a, b in combinations(factors, 2):
                    add(Term(f"{a}*{b}", (a, b), "interaction"))
        else:
            add(_parse_term(token, factors, categorical))

    order = {"linear": 0, "categorical": 0, "square": 1, "interaction": 2}
    return sorted(terms, key=lambda t: order[t.kind])


def _numeric(data: pd.DataFrame, name: str) -> np.ndarray:
    try:
        return data[name].astype(float).to_numpy()
    except KeyError:
        raise DataError(f"column '{name}' not found")
    except (TypeError, ValueError) as e:
        raise DataError(f"column '{name}' is not numeric ({e})") from e


def model_matrix(data: pd.DataFrame, terms: Sequence[Term]) -> Tuple[np.ndarray, List[str], List[int]]:
    """Ma trận thiết kế: cột intercept, sau đó các cột của từng term (categorical dùng effects coding)"""
    n = len(data)
    columns = [np.ones(n)]
    names = ["Intercept"]
    owners = [-1]
    for t_index, term in enumerate(terms):
        if term.kind == "categorical":
            if term.factors[0] not in data.columns:
                raise DataError(f"column '{term.factors[0]}' not found")
            values = data[term.factors[0]].to_numpy()
            levels = sorted(pd.unique(values), key=lambda v: (str(type(v)), v))
            if len(levels) < 2:
                raise DataError(f"categorical factor '{term.name}' has fewer than two levels")
            last = levels[-1]
            for level in levels[:-1]:
                columns.append(np.where(values == level, 1.0, np.where(values == last, -1.0, 0.0)))
                names.append(f"{term.name}[{level}]")
                owners.append(t_index)
        else:
            col = np.ones(n)
            for f in term.factors:
                col = col * _numeric(data, f)
            columns.append(col)
            names.append(term.name)
            owners.append(t_index)
    return np.column_stack(columns), names, owners


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def _numerical_rank(X: np.ndarray) -> int:
    if X.shape[1] == 0:
        return 0
    _, r, _ = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    return int(np.sum(diag > ALIAS_TOLERANCE * max(1.0, diag[0])))


def _independent_columns(X: np.ndarray) -> List[int]:
    """Chỉ số các cột giữ lại; cột phụ thuộc tuyến tính vào các cột trước bị bỏ"""
    X = np.asarray(X, dtype=np.float64)
    rank = _numerical_rank(X)
    if rank == X.shape[1]:
        return list(range(X.shape[1]))
    kept: List[int] = []
    for j in range(X.shape[1]):
        if len(kept) == rank:
            break
        if _numerical_rank(X[:, kept + [j]]) == len(kept) + 1:
            kept.append(j)
    return kept


def fit_least_squares(
    X: np.ndarray,
    y: np.ndarray,
    names: Optional[Sequence[str]] = None,
    terms: Optional[Sequence[Term]] = None,
    column_terms: Optional[Sequence[int]] = None,
) -> RegressionModel:
    """
    Fit bình phương tối thiểu bằng phân rã QR

    Columns that are linear combinations of earlier ones are dropped in
    order and listed in ``dropped_columns``.

    Raises:
        DataError: ít quan sát hơn số cột còn lại
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError(f"design matrix {X.shape} does not match {y.shape[0]} observations")
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    column_terms = list(column_terms) if column_terms is not None else list(range(X.shape[1]))

    kept = _independent_columns(X)
    dropped = [names[j] for j in range(X.shape[1]) if j not in kept]
    if dropped:
        logger.warning("⚠️ Aliased columns dropped", columns=dropped)
    Xk = X[:, kept]
    if Xk.shape[0] < Xk.shape[1]:
        raise DataError(f"{Xk.shape[0]} observations cannot fit {Xk.shape[1]} model columns")

    q, r = linalg.qr(Xk, mode="economic")
    beta = linalg.solve_triangular(r, q.T @ y)
    fitted = Xk @ beta
    return RegressionModel(
        terms=list(terms) if terms is not None else [Term(n, (n,), "linear") for n in names],
        columns=[names[j] for j in kept],
        column_terms=[column_terms[j] for j in kept],
        X=Xk,
        y=y,
        coefficients=beta,
        fitted=fitted,
        residuals=y - fitted,
        q=q,
        dropped_columns=dropped,
    )


def fit_model(data: pd.DataFrame, terms: Sequence[Term], response: str) -> RegressionModel:
    """Fit mô hình từ DataFrame theo danh sách term"""
    X, names, owners = model_matrix(data, terms)
    return fit_least_squares(X, _numeric(data, response), names=names, terms=terms, column_terms=owners)


def _sse_without(model: RegressionModel, drop: Sequence[int]) -> float:
    keep = [j for j in range(model.rank) if j not in set(drop)]
    Xr = model.X[:, keep]
    q, _ = linalg.qr(Xr, mode="economic")
    resid = model.y - q @ (q.T @ model.y)
    return float(resid @ resid)


def _vif(model: RegressionModel, j: int) -> float:
    target = model.X[:, j]
    others = model.X[:, [k for k in range(model.rank) if k != j]]
    q, _ = linalg.qr(others, mode="economic")
    resid = target - q @ (q.T @ target)
    centered = target - target.mean()
    ss = float(centered @ centered)
    if ss == 0.0:
        return float("inf")
    r_sq = 1.0 - float(resid @ resid) / ss
    return float("inf") if r_sq >= 1.0 else 1.0 / (1.0 - r_sq)


def f_tail(f: float, df1: int, df2: int) -> float:
    """
    P(F > f) với F ~ F(df1, df2), qua hàm beta không đầy đủ chính quy hóa

    Raises:
        ConfigurationError: df < 1 hoặc f âm
    """
    if df1 < 1 or df2 < 1:
        raise ConfigurationError(f"F distribution needs df >= 1, got ({df1}, {df2})")
    if f < 0:
        raise ConfigurationError(f"F statistic must be non-negative, got {f}")
    if f == 0:
        return 1.0
    if np.isinf(f):
        return 0.0
    return float(betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f)))


def press_statistic(model: RegressionModel) -> Tuple[float, float]:
    """
    PRESS = sum((e_i / (1 - h_ii))^2) và R²-pred (floor 0)

    Raises:
        LeverageError: h_ii = 1 tại một quan sát
    """
    h = model.leverage()
    for i, value in enumerate(h):
        if value >= 1.0 - 1e-10:
            raise LeverageError(i + 1)
    press = float(np.sum((model.residuals / (1.0 - h)) ** 2))
    sst = model.sst
    r_sq_pred = max(0.0, 1.0 - press / sst) if sst > 0 else 0.0
    return press, r_sq_pred


def _pure_error(model: RegressionModel) -> Tuple[float, int]:
    _, groups = np.unique(np.round(model.X, 9), axis=0, return_inverse=True)
    groups = np.asarray(groups).reshape(-1)
    ss, distinct = 0.0, int(groups.max()) + 1 if len(groups) else 0
    for g in range(distinct):
        values = model.y[groups == g]
        ss += float(np.sum((values - values.mean()) ** 2))
    return ss, model.n - distinct


def _f_and_p(ms: float, ms_error: Optional[float], df: int, df_error: int) -> Tuple[Optional[float], Optional[float]]:
    if df_error < 1 or ms_error is None or df < 1:
        return None, None
    f = float("inf") if ms_error == 0 else ms / ms_error
    return f, f_tail(f, df, df_error)


def anova_decompose(model: RegressionModel) -> AnovaTable:
    """
    Bảng ANOVA: Model, nhóm Linear/Square/2-Way Interaction, từng term, Error, Total

    Seq SS comes from Q^T y in term order, Adj SS from refitting without
    the term (or the whole group). Error splits into Lack-of-Fit and Pure
    Error when repeated design points exist.
    """
    sst, sse = model.sst, model.sse
    df_error = model.error_df
    ms_error = sse / df_error if df_error > 0 else None
    effects = model.q.T @ model.y
    seq_by_column = effects ** 2

    def pct(ss: float) -> float:
        return 100.0 * ss / sst if sst > 0 else 0.0

    def columns_of(term_indices: Sequence[int]) -> List[int]:
        wanted = set(term_indices)
        return [j for j, t in enumerate(model.column_terms) if t in wanted]

    def make_row(source: str, cols: List[int], level: int, with_vif: bool = False) -> AnovaRow:
        df = len(cols)
        seq_ss = float(seq_by_column[cols].sum())
        adj_ss = max(0.0, _sse_without(model, cols) - sse)
        adj_ms = adj_ss / df if df else 0.0
        f, p = _f_and_p(adj_ms, ms_error, df, df_error)
        vif = max(_vif(model, j) for j in cols) if with_vif and cols else None
        return AnovaRow(source, df, seq_ss, pct(seq_ss), adj_ss, adj_ms, f, p, vif, level)

    model_cols = [j for j, t in enumerate(model.column_terms) if t >= 0]
    rows = [make_row("Model", model_cols, 0)]

    present = sorted({t for t in model.column_terms if t >= 0})
    for t in present:
        if model.terms[t].kind == "categorical":
            rows.append(make_row(model.terms[t].name, columns_of([t]), 1, with_vif=True))
    for kind, label in GROUP_LABELS.items():
        members = [t for t in present if model.terms[t].kind == kind]
        if not members:
            continue
        rows.append(make_row(label, columns_of(members), 1))
        for t in members:
            rows.append(make_row(model.terms[t].name, columns_of([t]), 2, with_vif=True))

    rows.append(AnovaRow("Error", df_error, sse, pct(sse), sse, ms_error, level=0))
    pure_ss, pure_df = _pure_error(model)
    lof_df = df_error - pure_df
    if pure_df > 0 and lof_df > 0:
        lof_ss = max(0.0, sse - pure_ss)
        lof_ms, pure_ms = lof_ss / lof_df, pure_ss / pure_df
        f, p = _f_and_p(lof_ms, pure_ms, lof_df, pure_df)
        rows.append(AnovaRow("Lack-of-Fit", lof_df, lof_ss, pct(lof_ss), lof_ss, lof_ms, f, p, level=1))
        rows.append(AnovaRow("Pure Error", pure_df, pure_ss, pct(pure_ss), pure_ss, pure_ms, level=1))
    rows.append(AnovaRow("Total", model.n - 1, sst, 100.0 if sst > 0 else 0.0, level=0))

    try:
        press, r_sq_pred = press_statistic(model)
    except LeverageError as e:
        logger.warning("⚠️ PRESS undefined", reason=str(e))
        press, r_sq_pred = None, None

    r_sq = 1.0 - sse / sst if sst > 0 else 1.0
    summary = ModelSummary(
        s=float(np.sqrt(ms_error)) if ms_error is not None else None,
        r_sq=r_sq,
        r_sq_adj=1.0 - (sse / df_error) / (sst / (model.n - 1)) if df_error > 0 and sst > 0 else None,
        r_sq_pred=r_sq_pred,
        press=press,
    )
    return AnovaTable(rows=rows, summary=summary, model=model)


def analyze(data: pd.DataFrame, factors: Sequence[str], response: str, spec: str = "linear",
            categorical: Sequence[str] = ()) -> AnovaTable:
    """Dựng term, fit và phân tích ANOVA trong một bước"""
    terms = build_model_terms(factors, spec, categorical)
    model = fit_model(data, terms, response)
    table = anova_decompose(model)
    logger.info("📊 ANOVA computed", response=response, terms=len(terms), n=model.n, r_sq=round(table.summary.r_sq, 4))
    return table


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

def records_frame(records: Union[pd.DataFrame, Sequence[Any]]) -> pd.DataFrame:
    """Chuẩn hóa danh sách record (dataclass/dict) thành DataFrame"""
    if isinstance(records, pd.DataFrame):
        return records.copy()
    rows = [asdict(r) if is_dataclass(r) else dict(r) for r in records]
    return pd.DataFrame.from_records(rows)


def glm_anova(
    records: Union[pd.DataFrame, Sequence[Any]],
    factors: Sequence[str],
    response: str,
) -> AnovaTable:
    """ANOVA mô hình tuyến tính tổng quát với các factor categorical (vd. fold, run)"""
    data = records_frame(records)
    return analyze(data, factors, response, spec="linear", categorical=factors)


def summarize_runs(
    records: Union[pd.DataFrame, Sequence[Any]],
    responses: Sequence[str] = ("tst_acc",),
) -> Dict[str, RunSummary]:
    """
    Trung bình, độ lệch chuẩn mẫu (n-1) và SE = S/sqrt(n) cho từng response

    SD and SE are None for fewer than two records.
    """
    data = records_frame(records)
    result = {}
    for response in responses:
        values = _numeric(data, response) if len(data) else np.zeros(0)
        values = values[~np.isnan(values)]
        n = int(values.size)
        mean = float(values.mean()) if n else None
        sd = float(values.std(ddof=1)) if n >= 2 else None
        se = sd / np.sqrt(n) if sd is not None else None
        result[response] = RunSummary(response=response, n=n, mean=mean, sd=sd, se=se)
    return result


def level_means(data: pd.DataFrame, factors: Sequence[str], response: str) -> pd.DataFrame:
    """Trung bình response theo từng mức của từng factor (dữ liệu main-effects plot)"""
    frames = []
    for factor in factors:
        grouped = data.groupby(factor)[response].agg(["mean", "count"]).reset_index()
        grouped.columns = ["level", "mean", "n"]
        grouped.insert(0, "factor", factor)
        frames.append(grouped)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["factor", "level", "mean", "n"])


def interaction_means(data: pd.DataFrame, a: str, b: str, response: str) -> pd.DataFrame:
    """Trung bình response theo cặp mức (a, b) (dữ liệu interaction plot)"""
    grouped = data.groupby([a, b])[response].agg(["mean", "count"]).reset_index()
    return grouped.rename(columns={"count": "n"})


def impute_failed(
    records: Union[pd.DataFrame, Sequence[Any]],
    responses: Sequence[str],
    group_column: str = "replicate",
    fault_column: str = "fault",
) -> pd.DataFrame:
    """
    Thay response của treatment lỗi bằng trung bình các treatment còn lại cùng nhóm replicate

    Imputed rows get ``imputed = True``.
    """
    data = records_frame(records)
    if "imputed" not in data.columns:
        data["imputed"] = False
    faulted = data[fault_column].fillna("").astype(str).str.len() > 0
    for group, rows in data.groupby(group_column).groups.items():
        rows = list(rows)
        bad = [i for i in rows if faulted.loc[i]]
        good = [i for i in rows if not faulted.loc[i]]
        if not bad:
            continue
        if not good:
            logger.warning("⚠️ Nothing to impute from", group=group, faulted=len(bad))
            continue
        for response in responses:
            data.loc[bad, response] = data.loc[good, response].astype(float).mean()
        data.loc[bad, "imputed"] = True
        logger.info("🩹 Faulted records imputed", group=group, count=len(bad))
    return data


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def format_p(p: Optional[float]) -> str:
    if p is None:
        return "*"
    return "0.000" if p < P_DISPLAY_FLOOR else f"{p:.3f}"


def _fmt(value: Optional[float], digits: int = 4) -> str:
    if value is None:
        return "*"
    if np.isinf(value):
        return "inf"
    return f"{value:.{digits}f}"


def format_anova_text(table: AnovaTable) -> str:
    """Bảng ANOVA dạng text căn lề cùng khối Model Summary"""
    header = f"{'Source':<28}{'DF':>4}{'Seq SS':>12}{'Contribution':>14}{'Adj SS':>12}{'Adj MS':>12}{'F-Value':>10}{'P-Value':>9}{'VIF':>7}"
    lines = ["Analysis of Variance", "", header]
    for r in table.rows:
        source = "  " * r.level + r.source
        lines.append(
            f"{source:<28}{r.df:>4}{_fmt(r.seq_ss):>12}{r.contribution:>13.2f}%"
            f"{_fmt(r.adj_ss):>12}{_fmt(r.adj_ms):>12}{_fmt(r.f, 2):>10}"
            f"{(format_p(r.p) if r.f is not None else ''):>9}{(_fmt(r.vif, 2) if r.vif is not None else ''):>7}"
        )

    s = table.summary

    def pct(value: Optional[float]) -> str:
        return "*" if value is None else f"{100 * value:.2f}%"

    lines += [
        "",
        "Model Summary",
        "",
        f"{'S':>10}{'R-sq':>10}{'R-sq(adj)':>11}{'PRESS':>12}{'R-sq(pred)':>12}",
        f"{_fmt(s.s):>10}{pct(s.r_sq):>10}{pct(s.r_sq_adj):>11}{_fmt(s.press):>12}{pct(s.r_sq_pred):>12}",
    ]
    if table.model.dropped_columns:
        lines += ["", "Aliased terms removed: " + ", ".join(table.model.dropped_columns)]
    return "\n".join(lines) + "\n"


def write_anova(table: AnovaTable, csv_path: Union[str, Path], text_path: Optional[Union[str, Path]] = None) -> Path:
    """Ghi bảng ANOVA ra CSV và (tuỳ chọn) text"""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    table.to_frame().to_csv(csv_path, index=False)
    if text_path is not None:
        Path(text_path).write_text(format_anova_text(table), encoding="utf-8")
    logger.info("📝 ANOVA written", path=str(csv_path), rows=len(table.rows))
    return csv_path
