"""
Training Service
Chia dữ liệu, vòng huấn luyện theo epoch, đánh giá confusion matrix, chạy thí nghiệm DoE, k-fold và fine-tune
"""

import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from ..api.models.schemas import RunManifest
from ..exceptions import DataError, GrainDoeError, TrainingFault
from ..nn.checkpoint import save_checkpoint
from ..nn.hyperparams import Hyperparams, get_profile
from ..nn.model import (
    ModelSpec,
    Weights,
    backprop,
    build_model,
    count_params,
    freeze_indices,
    init_weights,
    make_dropout_masks,
    predict,
)
from ..nn.optim import OptimizerState, optimizer_step
from ..nn.tensor_ops import bce_loss
from ..utils.helpers import derive_rng, derive_seed, format_datetime, sha256_file, sha256_text
from .doe import DesignMatrix, decode_row
from .imgprep import load_labeled_tiles, read_manifest, to_network_input


logger = structlog.get_logger(__name__)

RESPONSE_COLUMNS = ["TC", "epoch", "time", "trn_acc", "val_acc", "tst_acc", "tpr", "tnr", "ppr", "replicate", "fault", "imputed"]
KFOLD_COLUMNS = ["fold", "run"] + RESPONSE_COLUMNS
RESPONSES = ("trn_acc", "val_acc", "tst_acc", "tpr", "tnr", "ppr")


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass
class SplitArrays:
    """Mảng đã tách cho train/validation/test (x dạng NCHW, y: good = 1)"""
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(self.x_train.shape[1:])


@dataclass
class DatasetSplit:
    """Chỉ số train/validation/test, rời nhau và cân bằng lớp"""
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    labels: np.ndarray

    def class_counts(self) -> Dict[str, Tuple[int, int]]:
        """(good, bad) cho từng phần"""
        return {
            name: (int(np.sum(self.labels[idx] == 1)), int(np.sum(self.labels[idx] == 0)))
            for name, idx in (("train", self.train), ("validation", self.validation), ("test", self.test))
        }

    def materialize(self, x: np.ndarray) -> SplitArrays:
        y = self.labels.astype(np.float32)
        return SplitArrays(
            x_train=x[self.train], y_train=y[self.train],
            x_val=x[self.validation], y_val=y[self.validation],
            x_test=x[self.test], y_test=y[self.test],
        )


def split_dataset(labels: np.ndarray, sizes: Sequence[int], seed: int) -> DatasetSplit:
    """
    Chia phân tầng có seed thành train/validation/test với số lượng cho trước

    Each part holds half good and half bad (the extra one of an odd size is bad).

    Raises:
        DataError: không đủ mẫu một lớp
    """
    labels = np.asarray(labels).astype(np.int8).reshape(-1)
    if len(sizes) != 3 or any(s < 0 for s in sizes):
        raise DataError(f"split sizes must be three non-negative counts, got {sizes}")
    rng = derive_rng(seed)
    pools = {cls: rng.permutation(np.flatnonzero(labels == cls)) for cls in (1, 0)}
    needed = {1: sum(s // 2 for s in sizes), 0: sum(s - s // 2 for s in sizes)}
    for cls, name in ((1, "good"), (0, "bad")):
        if needed[cls] > len(pools[cls]):
            raise DataError(f"split needs {needed[cls]} '{name}' samples, only {len(pools[cls])} available")

    cursor = {1: 0, 0: 0}
    parts = []
    for size in sizes:
        take = {1: size // 2, 0: size - size // 2}
        chosen = []
        for cls in (1, 0):
            chosen.append(pools[cls][cursor[cls]:cursor[cls] + take[cls]])
            cursor[cls] += take[cls]
        parts.append(rng.permutation(np.concatenate(chosen)))
    return DatasetSplit(train=parts[0], validation=parts[1], test=parts[2], labels=labels)


def load_dataset(
    manifest_path: Union[str, Path],
    input_shape: Tuple[int, int, int],
) -> Tuple[np.ndarray, np.ndarray]:
    """Đọc manifest tile, trả về (x NCHW float32, nhãn good = 1)"""
    manifest = read_manifest(manifest_path)
    tiles, labels = load_labeled_tiles(manifest)
    if len(tiles) == 0:
        raise DataError(f"{manifest_path}: manifest holds no labeled tiles")
    return to_network_input(tiles, input_shape), labels


def load_split_arrays(
    manifest_path: Union[str, Path],
    sizes: Sequence[int],
    seed: int,
    input_shape: Tuple[int, int, int],
) -> SplitArrays:
    x, labels = load_dataset(manifest_path, input_shape)
    split = split_dataset(labels, sizes, seed)
    logger.info("📦 Dataset split", manifest=str(manifest_path), **{k: v for k, v in split.class_counts().items()})
    return split.materialize(x)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    """Cấu hình một lần huấn luyện"""
    epochs: int
    hyperparams: Hyperparams
    seed: int = 0
    fine_tune: bool = False
    threshold: float = 0.5
    last_epochs_window: int = 5
    checkpoint_path: Optional[Path] = None

    @property
    def batch_size(self) -> int:
        return self.hyperparams.batch_size


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    iterations: int


@dataclass
class TrainResult:
    """Kết quả huấn luyện: record theo epoch, trọng số tốt nhất theo validation, thời gian (phút)"""
    records: List[EpochRecord]
    best_epoch: Optional[int]
    best_weights: Weights
    final_weights: Weights
    wall_minutes: float
    iterations_per_epoch: int

    def _window(self, attr: str, window: int) -> Optional[float]:
        if not self.records:
            return None
        return float(np.mean([getattr(r, attr) for r in self.records[-window:]]))

    def trn_acc(self, window: int = 5) -> Optional[float]:
        return self._window("train_acc", window)

    def val_acc(self, window: int = 5) -> Optional[float]:
        return self._window("val_acc", window)


def iterations_per_epoch(train_n: int, batch_size: int) -> int:
    return math.ceil(train_n / batch_size) if train_n else 0


def accuracy(probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    if len(labels) == 0:
        return 0.0
    return float(np.mean((probs >= threshold).astype(np.int8) == np.asarray(labels).astype(np.int8)))


def train(
    spec: ModelSpec,
    data: SplitArrays,
    config: TrainConfig,
    weights: Optional[Weights] = None,
    frozen: Sequence[int] = (),
) -> TrainResult:
    """
    Huấn luyện theo epoch, giữ trọng số có validation accuracy cao nhất

    Each epoch shuffles the training set and runs ceil(n / batch) optimizer
    steps. Train and validation accuracy are measured without dropout after
    the epoch. Validation never updates weights.

    Raises:
        TrainingFault: loss/gradient không hữu hạn (kèm epoch và iteration)
    """
    started = time.perf_counter()
    rng = derive_rng(config.seed)
    weights = weights.copy() if weights is not None else init_weights(spec, rng)
    state = OptimizerState.from_hyperparams(config.hyperparams)
    batch = config.batch_size
    n = len(data.x_train)
    steps = iterations_per_epoch(n, batch)

    best_weights, best_epoch, best_val = weights.copy(), None, -np.inf
    records: List[EpochRecord] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for iteration in range(steps):
            idx = order[iteration * batch:(iteration + 1) * batch]
            masks = make_dropout_masks(spec, len(idx), rng)
            try:
                _, grads = backprop(spec, weights, data.x_train[idx], data.y_train[idx], masks, skip=frozen)
            except TrainingFault as e:
                raise e.with_context(epoch, iteration + 1) from e
            weights = optimizer_step(state, weights, grads, spec, frozen)

        train_probs = predict(spec, weights, data.x_train)
        val_probs = predict(spec, weights, data.x_val)
        record = EpochRecord(
            epoch=epoch,
            train_loss=bce_loss(train_probs, data.y_train) if n else 0.0,
            train_acc=accuracy(train_probs, data.y_train, config.threshold),
            val_loss=bce_loss(val_probs, data.y_val) if len(data.y_val) else 0.0,
            val_acc=accuracy(val_probs, data.y_val, config.threshold),
            iterations=steps,
        )
        if not np.isfinite(record.train_loss):
            raise TrainingFault("non-finite training loss", epoch=epoch, iteration=steps)
        records.append(record)

        if record.val_acc > best_val:
            best_val, best_epoch, best_weights = record.val_acc, epoch, weights.copy()
            if config.checkpoint_path is not None:
                save_checkpoint(config.checkpoint_path, spec, best_weights)

        logger.debug(
            "📈 Epoch finished",
            epoch=epoch,
            train_loss=round(record.train_loss, 4),
            train_acc=round(record.train_acc, 4),
            val_acc=round(record.val_acc, 4),
        )

    return TrainResult(
        records=records,
        best_epoch=best_epoch,
        best_weights=best_weights,
        final_weights=weights,
        wall_minutes=round((time.perf_counter() - started) / 60.0, 3),
        iterations_per_epoch=steps,
    )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    """Confusion matrix với lớp positive là good"""
    tn: int
    fp: int
    fn: int
    tp: int

    def __post_init__(self):
        if min(self.tn, self.fp, self.fn, self.tp) < 0:
            raise DataError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp


def confusion_from_predictions(probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> ConfusionMatrix:
    predicted = np.asarray(probs).reshape(-1) >= threshold
    actual = np.asarray(labels).reshape(-1).astype(bool)
    return ConfusionMatrix(
        tn=int(np.sum(~predicted & ~actual)),
        fp=int(np.sum(predicted & ~actual)),
        fn=int(np.sum(~predicted & actual)),
        tp=int(np.sum(predicted & actual)),
    )


def evaluate(weights: Weights, spec: ModelSpec, x: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> ConfusionMatrix:
    """Đánh giá trên tập test không dropout; p >= threshold là good"""
    return confusion_from_predictions(predict(spec, weights, x), labels, threshold)


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def confusion_metrics(cm: ConfusionMatrix) -> Dict[str, Optional[float]]:
    """
    specificity, sensitivity, fpr, precision, accuracy

    fpr is 1 - specificity. A zero denominator gives None.
    """
    specificity = _ratio(cm.tn, cm.tn + cm.fp)
    return {
        "specificity": specificity,
        "sensitivity": _ratio(cm.tp, cm.tp + cm.fn),
        "fpr": 1.0 - specificity if specificity is not None else None,
        "precision": _ratio(cm.tp, cm.tp + cm.fp),
        "accuracy": _ratio(cm.tn + cm.tp, cm.total),
    }


# ---------------------------------------------------------------------------
# Experiment runner
# ---------------------------------------------------------------------------

@dataclass
class ResponseRecord:
    """Response của một treatment (một replicate)"""
    tc: int
    replicate: int = 1
    epoch: int = 0
    time: Optional[float] = None
    trn_acc: Optional[float] = None
    val_acc: Optional[float] = None
    tst_acc: Optional[float] = None
    tpr: Optional[float] = None
    tnr: Optional[float] = None
    ppr: Optional[float] = None
    fpr: Optional[float] = None
    best_epoch: Optional[int] = None
    fault: str = ""
    imputed: bool = False
    fold: Optional[int] = None
    run: Optional[int] = None

    @property
    def key(self) -> Tuple[int, int, int, int]:
        return (self.fold or 0, self.run or 0, self.replicate, self.tc)


def _record_from_result(
    base: ResponseRecord, result: TrainResult, cm: ConfusionMatrix, window: int
) -> ResponseRecord:
    metrics = confusion_metrics(cm)
    base.epoch = len(result.records)
    base.time = result.wall_minutes
    base.trn_acc = result.trn_acc(window)
    base.val_acc = result.val_acc(window)
    base.tst_acc = metrics["accuracy"]
    base.tpr = metrics["sensitivity"]
    base.tnr = metrics["specificity"]
    base.ppr = metrics["precision"]
    base.fpr = metrics["fpr"]
    base.best_epoch = result.best_epoch
    return base


def run_treatment(
    h: Hyperparams,
    data: SplitArrays,
    epochs: int,
    seed: int,
    record: ResponseRecord,
    profile: str = "paper",
    threshold: float = 0.5,
    window: int = 5,
    checkpoint_path: Optional[Path] = None,
    pretrained: Optional[Weights] = None,
) -> ResponseRecord:
    """
    Huấn luyện và đánh giá một treatment; lỗi được ghi vào record thay vì ném ra
    """
    try:
        spec = build_model(h, profile=profile, input_shape=data.input_shape)
        config = TrainConfig(
            epochs=epochs, hyperparams=h, seed=seed, threshold=threshold,
            last_epochs_window=window, checkpoint_path=checkpoint_path, fine_tune=pretrained is not None,
        )
        if pretrained is not None:
            result = fine_tune(pretrained, spec, data, config)
        else:
            result = train(spec, data, config)
        cm = evaluate(result.best_weights, spec, data.x_test, data.y_test, threshold)
        return _record_from_result(record, result, cm, window)
    except GrainDoeError as e:
        logger.error("❌ Treatment failed", tc=record.tc, replicate=record.replicate, error=str(e))
        record.fault = str(e)
        return record
    except Exception as e:
        logger.exception("💥 Unexpected error in treatment", tc=record.tc, replicate=record.replicate)
        record.fault = f"{type(e).__name__}: {e}"
        return record


class ExperimentRunner:
    """
    Chạy mọi treatment của một ma trận thiết kế theo run order

    Each (treatment, replicate) derives its RNG from the master seed, so the
    table does not depend on execution order or thread count. Finished
    records are appended to a JSON-lines log; ``resume`` skips them.
    """

    def __init__(
        self,
        design: DesignMatrix,
        data: SplitArrays,
        epochs: int,
        replicates: int = 1,
        master_seed: int = 0,
        profile: str = "paper",
        threads: int = 1,
        log_path: Optional[Union[str, Path]] = None,
        resume: bool = False,
        threshold: float = 0.5,
        window: int = 5,
        checkpoint_dir: Optional[Union[str, Path]] = None,
        batch_size: Optional[int] = None,
        progress: Optional[Callable[[ResponseRecord], None]] = None,
    ):
        self.design = design
        self.data = data
        self.epochs = epochs
        self.replicates = replicates
        self.master_seed = master_seed
        self.profile = profile
        self.threads = max(1, threads)
        self.log_path = Path(log_path) if log_path else None
        self.resume = resume
        self.threshold = threshold
        self.window = window
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.batch_size = batch_size
        self.progress = progress
        self._lock = threading.Lock()

    def jobs(self) -> List[Tuple[int, int]]:
        """(tc, replicate) theo thứ tự chạy; tc đánh số từ 1 theo thứ tự chuẩn"""
        return [
            (int(position) + 1, replicate)
            for replicate in range(1, self.replicates + 1)
            for position in self.design.run_order
        ]

    def _load_log(self) -> Dict[Tuple[int, int], ResponseRecord]:
        done: Dict[Tuple[int, int], ResponseRecord] = {}
        if not (self.resume and self.log_path and self.log_path.exists()):
            return done
        names = {f.name for f in fields(ResponseRecord)}
        for line in self.log_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError:
                logger.warning("⚠️ Skipping corrupt resume log line", path=str(self.log_path))
                continue
            record = ResponseRecord(**{k: v for k, v in payload.items() if k in names})
            done[(record.tc, record.replicate)] = record
        return done

    def _append_log(self, record: ResponseRecord):
        if not self.log_path:
            return
        with self._lock:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.log_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(asdict(record)) + "\n")

    def _run_one(self, tc: int, replicate: int) -> ResponseRecord:
        record = ResponseRecord(tc=tc, replicate=replicate)
        try:
            h = decode_row(self.design.rows[tc - 1], self.design.factors, self.design.fixed, row_index=tc)
            if self.batch_size:
                h = h.model_copy(update={"batch_size": self.batch_size})
        except GrainDoeError as e:
            record.fault = str(e)
            return record
        checkpoint = self.checkpoint_dir / f"tc{tc:03d}_r{replicate}.gdck" if self.checkpoint_dir else None
        logger.info("🚀 Treatment started", tc=tc, replicate=replicate)
        record = run_treatment(
            h, self.data, self.epochs, derive_seed(self.master_seed, tc, replicate), record,
            profile=self.profile, threshold=self.threshold, window=self.window, checkpoint_path=checkpoint,
        )
        if not record.fault:
            logger.info("✅ Treatment completed", tc=tc, replicate=replicate, tst_acc=record.tst_acc, minutes=record.time)
        return record

    def run(self) -> List[ResponseRecord]:
        if not self.resume and self.log_path and self.log_path.exists():
            logger.info("🧹 Starting a fresh response log", path=str(self.log_path))
            self.log_path.unlink()
        done = self._load_log()
        pending = [job for job in self.jobs() if job not in done]
        if done:
            logger.info("⏭️ Resuming experiment", completed=len(done), pending=len(pending))

        results = dict(done)

        def finish(record: ResponseRecord):
            self._append_log(record)
            results[(record.tc, record.replicate)] = record
            if self.progress:
                self.progress(record)

        if self.threads == 1:
            for tc, replicate in pending:
                finish(self._run_one(tc, replicate))
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                futures = [pool.submit(self._run_one, tc, replicate) for tc, replicate in pending]
                for future in as_completed(futures):
                    finish(future.result())

        return [results[key] for key in sorted(results, key=lambda k: (k[1], k[0]))]


def run_experiment(
    design: DesignMatrix,
    data: SplitArrays,
    epochs: int,
    replicates: int = 1,
    seed: int = 0,
    **kwargs,
) -> List[ResponseRecord]:
    """Chạy ma trận thiết kế, trả về bảng response sắp theo (replicate, TC)"""
    return ExperimentRunner(design, data, epochs, replicates=replicates, master_seed=seed, **kwargs).run()


def run_design_to_dir(
    design: DesignMatrix,
    manifest_path: Union[str, Path],
    output_dir: Union[str, Path],
    epochs: int,
    replicates: int,
    seed: int,
    sizes: Sequence[int],
    profile: str = "paper",
    threads: int = 1,
    resume: bool = False,
    threshold: float = 0.5,
    window: int = 5,
    batch_size: Optional[int] = None,
    config_text: str = "",
    version: str = "",
    progress: Optional[Callable[[ResponseRecord], None]] = None,
) -> Dict[str, str]:
    """
    Chạy thiết kế trên dataset và ghi responses.csv, resume log cùng run manifest

    Returns:
        Đường dẫn các file đầu ra
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    input_shape = get_profile(profile).input_shape
    data = load_split_arrays(manifest_path, sizes, derive_seed(seed, 0), input_shape)

    records = run_experiment(
        design, data, epochs, replicates=replicates, seed=seed,
        profile=profile, threads=threads, log_path=output_dir / "responses.jsonl", resume=resume,
        threshold=threshold, window=window, checkpoint_dir=output_dir / "checkpoints",
        batch_size=batch_size, progress=progress,
    )
    responses = write_response_csv(records, output_dir / "responses.csv")
    outputs = {"responses": str(responses), "log": str(output_dir / "responses.jsonl")}
    manifest = write_run_manifest(
        output_dir / "run_manifest.json", "run-doe", seed, config_text,
        inputs={"design": design.name, "manifest": str(manifest_path)},
        outputs=outputs, dataset_manifest=manifest_path, version=version,
    )
    outputs["run_manifest"] = str(manifest)
    failed = sum(1 for r in records if r.fault)
    logger.info("🏁 Experiment finished", design=design.name, runs=len(records), failed=failed, output_dir=str(output_dir))
    return outputs


# ---------------------------------------------------------------------------
# Cross-validation and fine-tuning
# ---------------------------------------------------------------------------

def kfold_cv(
    x: np.ndarray,
    labels: np.ndarray,
    k: int,
    runs_per_fold: int,
    hyperparams: Hyperparams,
    epochs: int,
    sizes: Sequence[int],
    master_seed: int = 0,
    profile: str = "paper",
    threshold: float = 0.5,
    window: int = 5,
    pretrained: Optional[Weights] = None,
) -> List[ResponseRecord]:
    """
    k lần chia ngẫu nhiên độc lập, mỗi lần ``runs_per_fold`` lần huấn luyện từ trọng số mới

    With ``pretrained`` every run fine-tunes from those weights instead.
    """
    if k < 2:
        raise DataError(f"k-fold needs k >= 2, got {k}")
    records = []
    for fold in range(1, k + 1):
        split = split_dataset(labels, sizes, seed=derive_seed(master_seed, fold))
        data = split.materialize(x)
        for run in range(1, runs_per_fold + 1):
            logger.info("🔁 K-fold run", fold=fold, run=run)
            record = ResponseRecord(tc=run, fold=fold, run=run)
            records.append(run_treatment(
                hyperparams, data, epochs, derive_seed(master_seed, fold, run), record,
                profile=profile, threshold=threshold, window=window, pretrained=pretrained,
            ))
    return records


def trainable_param_count(spec: ModelSpec, frozen: Sequence[int] = ()) -> int:
    _, per_layer = count_params(spec)
    return sum(count for index, count in per_layer.items() if index not in set(frozen))


def fine_tune(pretrained: Weights, spec: ModelSpec, data: SplitArrays, config: TrainConfig) -> TrainResult:
    """
    Fine-tune: conv1 và conv2 đóng băng, conv3 và các dense layer được huấn luyện

    Raises:
        DataError: trọng số pretrained không khớp shape với spec
    """
    expected, found = spec.param_shapes(), pretrained.shapes()
    if expected != found:
        diff = [
            f"layer {i}: expected {expected.get(i)}, found {found.get(i)}"
            for i in sorted(set(expected) | set(found))
            if expected.get(i) != found.get(i)
        ]
        raise DataError("pretrained weights do not match the model:\n  " + "\n  ".join(diff))
    frozen = freeze_indices(spec)
    logger.info("🧊 Fine-tuning", frozen_layers=frozen, trainable_params=trainable_param_count(spec, frozen))
    return train(spec, data, config, weights=pretrained, frozen=frozen)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def responses_to_frame(records: Sequence[ResponseRecord]) -> pd.DataFrame:
    """Bảng response: TC, epoch, time, trn_acc, val_acc, tst_acc, tpr, tnr, ppr, replicate, fault, imputed"""
    kfold = any(r.fold is not None for r in records)
    rows = []
    for r in records:
        row = {
            "TC": r.tc, "epoch": r.epoch, "time": r.time,
            "trn_acc": r.trn_acc, "val_acc": r.val_acc, "tst_acc": r.tst_acc,
            "tpr": r.tpr, "tnr": r.tnr, "ppr": r.ppr,
            "replicate": r.replicate, "fault": r.fault, "imputed": r.imputed,
        }
        if kfold:
            row = {"fold": r.fold, "run": r.run, **row}
        rows.append(row)
    return pd.DataFrame.from_records(rows, columns=KFOLD_COLUMNS if kfold else RESPONSE_COLUMNS)


def write_response_csv(records: Sequence[ResponseRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    responses_to_frame(records).to_csv(path, index=False, float_format="%.6f")
    logger.info("📝 Responses written", path=str(path), rows=len(records))
    return path


def read_response_csv(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"response CSV not found: {path}")
    frame = pd.read_csv(path, keep_default_na=True)
    missing = [c for c in ("TC", "replicate") if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing response columns {', '.join(missing)}")
    if "fault" in frame.columns:
        frame["fault"] = frame["fault"].fillna("").astype(str)
    return frame


def attach_factors(responses: pd.DataFrame, design: DesignMatrix) -> pd.DataFrame:
    """Nối cột factor (đơn vị mã hóa) vào bảng response theo TC"""
    coded = pd.DataFrame(design.rows, columns=design.factor_names)
    coded.insert(0, "TC", np.arange(1, design.n_rows + 1))
    return responses.merge(coded, on="TC", how="left")


def write_run_manifest(
    path: Union[str, Path],
    command: str,
    master_seed: int,
    config_text: str,
    inputs: Dict[str, str],
    outputs: Dict[str, str],
    dataset_manifest: Optional[Union[str, Path]] = None,
    version: str = "",
) -> Path:
    """Ghi manifest JSON của một lần chạy (seed, hash cấu hình, hash dataset)"""
    manifest = RunManifest(
        command=command,
        master_seed=master_seed,
        config_hash=sha256_text(config_text),
        dataset_manifest_hash=sha256_file(dataset_manifest) if dataset_manifest else None,
        inputs=inputs,
        outputs=outputs,
        tool_version=version,
        created_at=format_datetime(datetime.now()),
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    return path
