"""
Command Line Interface
Điểm vào dòng lệnh: prep, synth, doe-gen, run-doe, anova, train, kfold, reconstruct, serve

Exit codes: 0 success, 1 unexpected error, 2 configuration error,
3 data error, 4 training fault.
"""

import argparse
import sys
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog
from pydantic import ValidationError

from config.settings import load_config_from_file, settings as default_settings
from . import __version__
from .exceptions import ConfigurationError, DataError, GrainDoeError
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.hyperparams import PROFILES, Hyperparams, get_profile, make_hyperparams
from .nn.model import build_model, summary_table
from .services import anova as anova_service
from .services.doe import (
    AlphaMode,
    BUILTIN_DESIGNS,
    CcdSpec,
    OPTIMIZATION_FACTORS,
    SCREENING_CATEGORICAL,
    SCREENING_CONTINUOUS,
    builtin_design,
    generate_ccd,
    generate_dsd,
    load_design,
    randomize_run_order,
    validate_dsd,
    write_design_csv,
)
from .services.ensemble import build_ensemble, classify_tiles, coupon_report, write_coupon_outputs
from .services.imgprep import (
    AugmentParams,
    GridLayout,
    Tile,
    balance_classes,
    list_rasters,
    load_raster,
    prepare_coupon,
    read_manifest,
    read_tile,
    save_png,
    write_manifest,
    write_tiles,
)
from .services.synthgrain import generate_coupon, generate_dataset, ground_truth_frame, write_dataset
from .services.trainer import (
    RESPONSES,
    SplitArrays,
    TrainConfig,
    attach_factors,
    confusion_metrics,
    evaluate,
    fine_tune,
    kfold_cv,
    load_dataset,
    load_split_arrays,
    read_response_csv,
    run_design_to_dir,
    train,
    write_response_csv,
    write_run_manifest,
)
from .utils.helpers import derive_seed, sanitize_filename
from .utils.log_config import configure_logging


logger = structlog.get_logger(__name__)


class RunContext:
    """Cấu hình đã hợp nhất cho một lần gọi CLI"""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        config_path = Path(args.config) if args.config else None
        if config_path and not config_path.exists():
            raise ConfigurationError(f"config file not found: {config_path}")
        try:
            self.settings, hyper_values = load_config_from_file(config_path, base=default_settings)
        except ValidationError as e:
            raise ConfigurationError(f"invalid config {config_path}: {e}") from e
        self.config_text = config_path.read_text(encoding="utf-8") if config_path else ""

        hyper = make_hyperparams(hyper_values)
        if args.batch is not None:
            hyper = make_hyperparams({"batch_size": args.batch}, base=hyper)
        self.hyperparams: Hyperparams = hyper

        training = self.settings.training
        self.seed: int = args.seed if args.seed is not None else self.settings.experiment.master_seed
        self.epochs: int = args.epochs if args.epochs is not None else training.epochs
        self.threads: int = args.threads if args.threads is not None else self.settings.experiment.threads
        self.profile: str = args.profile or training.profile
        get_profile(self.profile)

    @property
    def sizes(self) -> Tuple[int, int, int]:
        training = self.settings.training
        return training.train_size, training.val_size, training.test_size

    def manifest(self, out_dir: Path, command: str, inputs: Dict[str, str], outputs: Dict[str, str],
                 dataset_manifest: Optional[Path] = None) -> Path:
        config_text = self.config_text + "\n" + self.hyperparams.model_dump_json()
        return write_run_manifest(
            out_dir / "run_manifest.json", command, self.seed, config_text,
            inputs=inputs, outputs=outputs, dataset_manifest=dataset_manifest, version=__version__,
        )


# ---------------------------------------------------------------------------
# prep / synth
# ---------------------------------------------------------------------------

def _read_label_file(path: Optional[str]) -> Dict[Tuple[str, int, int], str]:
    if not path:
        return {}
    frame = pd.read_csv(path)
    missing = [c for c in ("coupon", "row", "col", "label") if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing label columns {', '.join(missing)}")
    return {(str(r.coupon), int(r.row), int(r.col)): str(r.label) for r in frame.itertuples()}


def cmd_prep(ctx: RunContext) -> int:
    """Cắt và chuẩn hóa mọi coupon trong thư mục đầu vào"""
    args = ctx.args
    out_dir = Path(args.out_dir)
    rasters = list_rasters(args.input_dir)
    if not rasters:
        raise DataError(f"no rasters found in {args.input_dir}")

    labels = _read_label_file(args.labels)
    frames, grids, failures = [], [], 0
    for path in rasters:
        coupon = sanitize_filename(path.stem)
        try:
            result = prepare_coupon(load_raster(path), coupon, ctx.settings.imgprep)
        except DataError as e:
            failures += 1
            logger.error("❌ Coupon failed", path=str(path), error=str(e))
            continue
        coupon_labels = {(r, c): label for (name, r, c), label in labels.items() if name == coupon}
        frames.append(write_tiles(result.kept, out_dir, coupon, coupon_labels, ctx.settings.imgprep.jpeg_quality))
        layout = result.grid.layout
        grids.append({"coupon": coupon, "rows": layout.rows, "cols": layout.cols,
                      "tile_w": layout.tile_w, "tile_h": layout.tile_h, "discarded": len(result.discarded)})
        logger.info("✂️ Coupon prepared", coupon=coupon, kept=len(result.kept), discarded=len(result.discarded))

    if not frames:
        raise DataError(f"all {failures} rasters failed to prepare")

    manifest = write_manifest(pd.concat(frames, ignore_index=True), out_dir / "manifest.csv")
    grids_path = out_dir / "grids.csv"
    pd.DataFrame.from_records(grids).to_csv(grids_path, index=False)
    ctx.manifest(out_dir, "prep", {"input_dir": str(args.input_dir)},
                 {"manifest": str(manifest), "grids": str(grids_path)})
    return 0


def cmd_synth(ctx: RunContext) -> int:
    """Sinh tập tile hạt tổng hợp hoặc một coupon tổng hợp"""
    args = ctx.args
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: Dict[str, str] = {}

    if args.coupon_layout:
        layout = [line.split(",") for line in args.coupon_layout.split(";")]
        raster, labels = generate_coupon(layout, (args.tile_size, args.tile_size), seed=ctx.seed, margin=args.margin)
        coupon = sanitize_filename(args.coupon)
        png = save_png(out_dir / f"{coupon}.png", raster)
        truth = out_dir / f"{coupon}_labels.csv"
        ground_truth_frame(labels, coupon).to_csv(truth, index=False)
        outputs.update({"coupon": str(png), "labels": str(truth)})
    else:
        dataset = generate_dataset(args.good, args.bad, tile_size=args.tile_size, seed=ctx.seed)
        outputs["manifest"] = str(write_dataset(dataset, out_dir))

    ctx.manifest(out_dir, "synth", {}, outputs)
    return 0


# ---------------------------------------------------------------------------
# doe-gen / run-doe / anova
# ---------------------------------------------------------------------------

def cmd_doe_gen(ctx: RunContext) -> int:
    """Sinh hoặc xuất ma trận thiết kế ra CSV kèm sidecar factor"""
    args = ctx.args
    if args.kind in BUILTIN_DESIGNS:
        design = builtin_design(args.kind)
    elif args.kind == "dsd":
        design = generate_dsd(SCREENING_CONTINUOUS, SCREENING_CATEGORICAL, fixed=ctx.hyperparams)
    elif args.kind == "ccd":
        spec = CcdSpec(k=len(OPTIMIZATION_FACTORS), alpha_mode=AlphaMode(args.alpha_mode),
                       center_points=args.center_points)
        design = generate_ccd(spec, OPTIMIZATION_FACTORS, fixed=ctx.hyperparams)
    else:
        raise ConfigurationError(f"unknown design kind '{args.kind}'")

    if args.randomize:
        design = randomize_run_order(design, ctx.seed)
    design.replicate_count = ctx.settings.training.replicates

    if design.kind.value == "dsd":
        report = validate_dsd(design)
        for problem in report.violations():
            logger.warning("⚠️ Design check", design=design.name, problem=problem)

    out = Path(args.out)
    path = write_design_csv(design, out)
    ctx.manifest(out.parent, "doe-gen", {"kind": args.kind}, {"design": str(path)})
    logger.info("🧮 Design written", path=str(path), rows=design.n_rows, factors=len(design.factors))
    return 0


def cmd_run_doe(ctx: RunContext) -> int:
    """Chạy mọi treatment của ma trận thiết kế và ghi bảng response"""
    args = ctx.args
    design = load_design(args.design)
    replicates = args.replicates or ctx.settings.training.replicates
    training = ctx.settings.training
    run_design_to_dir(
        design, args.manifest, Path(args.out_dir), ctx.epochs, replicates, ctx.seed, ctx.sizes,
        profile=ctx.profile, threads=ctx.threads, resume=args.resume,
        threshold=training.threshold, window=training.last_epochs_window,
        batch_size=args.batch, config_text=ctx.config_text, version=__version__,
    )
    return 0


def _write_anova_outputs(table, data: pd.DataFrame, factors: Sequence[str], response: str,
                         out_dir: Path, outputs: Dict[str, str]):
    csv_path = anova_service.write_anova(table, out_dir / f"anova_{response}.csv", out_dir / f"anova_{response}.txt")
    means = out_dir / f"level_means_{response}.csv"
    anova_service.level_means(data, factors, response).to_csv(means, index=False)
    outputs[f"anova_{response}"] = str(csv_path)
    outputs[f"level_means_{response}"] = str(means)

    pairs = [
        anova_service.interaction_means(data, a, b, response)
        .rename(columns={a: "level_a", b: "level_b"})
        .assign(factor_a=a, factor_b=b)
        for a, b in combinations(factors, 2)
    ]
    if pairs:
        interactions = out_dir / f"interaction_means_{response}.csv"
        columns = ["factor_a", "factor_b", "level_a", "level_b", "mean", "n"]
        pd.concat(pairs, ignore_index=True)[columns].to_csv(interactions, index=False)
        outputs[f"interaction_means_{response}"] = str(interactions)


def cmd_anova(ctx: RunContext) -> int:
    """ANOVA cho từng response; CSV k-fold (fold, run) dùng GLM"""
    args = ctx.args
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = read_response_csv(args.responses)
    responses = args.response or ["tst_acc"]
    unknown = [r for r in responses if r not in data.columns]
    if unknown:
        raise ConfigurationError(f"unknown responses: {', '.join(unknown)}")
    outputs: Dict[str, str] = {}

    if {"fold", "run"} <= set(data.columns) and not args.design:
        factors = ["fold", "run"]
        for response in responses:
            table = anova_service.glm_anova(data, factors, response)
            _write_anova_outputs(table, data, factors, response, out_dir, outputs)
        summaries = anova_service.summarize_runs(data, responses)
        pd.DataFrame.from_records([s.__dict__ for s in summaries.values()]).to_csv(out_dir / "summary.csv", index=False)
        outputs["summary"] = str(out_dir / "summary.csv")
    else:
        if not args.design:
            raise ConfigurationError("anova on a DoE response table needs --design")
        design = load_design(args.design)
        data = anova_service.impute_failed(data, responses) if "fault" in data.columns else data
        data = attach_factors(data, design)
        categorical = [design.factors[i].name for i in design.categorical_indices()]
        continuous = [design.factors[i].name for i in design.continuous_indices()]
        for response in responses:
            table = anova_service.analyze(data, continuous, response, spec=args.terms, categorical=categorical)
            _write_anova_outputs(table, data, design.factor_names, response, out_dir, outputs)
            print(anova_service.format_anova_text(table))

    ctx.manifest(out_dir, "anova", {"responses": str(args.responses)}, outputs)
    return 0


# ---------------------------------------------------------------------------
# train / kfold
# ---------------------------------------------------------------------------

def _to_hwc(x: np.ndarray) -> np.ndarray:
    return (x.transpose(1, 2, 0) * 255.0).round().astype(np.uint8)


def _balanced_training(data: SplitArrays, params: AugmentParams, seed: int) -> SplitArrays:
    """Augment lớp thiểu số của tập train cho đến khi cân bằng"""
    by_label = {
        label: [_to_hwc(x) for x, y in zip(data.x_train, data.y_train) if int(y) == value]
        for label, value in (("good", 1), ("bad", 0))
    }
    balanced = balance_classes(by_label, params, derive_seed(seed, 17))
    xs, ys = [], []
    for label, value in (("good", 1), ("bad", 0)):
        xs += [t.transpose(2, 0, 1).astype(np.float32) / 255.0 for t in balanced[label]]
        ys += [value] * len(balanced[label])
    return SplitArrays(np.stack(xs), np.array(ys, dtype=np.float32),
                       data.x_val, data.y_val, data.x_test, data.y_test)


def cmd_train(ctx: RunContext) -> int:
    """Huấn luyện một cấu hình, ghi checkpoint, lịch sử epoch và metrics trên tập test"""
    args = ctx.args
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = build_model(ctx.hyperparams, profile=ctx.profile)
    print(summary_table(spec))

    data = load_split_arrays(args.manifest, ctx.sizes, derive_seed(ctx.seed, 0), spec.input_shape)
    if args.balance:
        data = _balanced_training(data, AugmentParams.from_config(ctx.settings.augment), ctx.seed)

    checkpoint = out_dir / "model.gdck"
    config = TrainConfig(
        epochs=ctx.epochs, hyperparams=ctx.hyperparams, seed=derive_seed(ctx.seed, 1),
        threshold=ctx.settings.training.threshold, last_epochs_window=ctx.settings.training.last_epochs_window,
        checkpoint_path=checkpoint, fine_tune=bool(args.pretrained),
    )
    if args.pretrained:
        result = fine_tune(load_checkpoint(args.pretrained, spec), spec, data, config)
    else:
        result = train(spec, data, config)
    if not checkpoint.exists():
        save_checkpoint(checkpoint, spec, result.best_weights)

    history = out_dir / "history.csv"
    pd.DataFrame.from_records([r.__dict__ for r in result.records]).to_csv(history, index=False)
    cm = evaluate(result.best_weights, spec, data.x_test, data.y_test, config.threshold)
    metrics = {"tn": cm.tn, "fp": cm.fp, "fn": cm.fn, "tp": cm.tp, "best_epoch": result.best_epoch,
               "minutes": round(result.wall_minutes, 3), **confusion_metrics(cm)}
    metrics_path = out_dir / "metrics.csv"
    pd.DataFrame.from_records([metrics]).to_csv(metrics_path, index=False)
    logger.info("🎯 Test metrics", **{k: v for k, v in metrics.items() if v is not None})

    inputs = {"manifest": str(args.manifest)}
    if args.pretrained:
        inputs["pretrained"] = str(args.pretrained)
    ctx.manifest(out_dir, "train", inputs,
                 {"checkpoint": str(checkpoint), "history": str(history), "metrics": str(metrics_path)},
                 dataset_manifest=Path(args.manifest))
    return 0


def cmd_kfold(ctx: RunContext) -> int:
    """Cross-validation k lần chia ngẫu nhiên, ghi bảng response và GLM ANOVA"""
    args = ctx.args
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    experiment = ctx.settings.experiment
    input_shape = get_profile(ctx.profile).input_shape
    x, labels = load_dataset(args.manifest, input_shape)

    pretrained = None
    if args.pretrained:
        pretrained = load_checkpoint(args.pretrained, build_model(ctx.hyperparams, profile=ctx.profile))

    records = kfold_cv(
        x, labels, args.folds or experiment.folds, args.runs or experiment.runs_per_fold,
        ctx.hyperparams, ctx.epochs, ctx.sizes, master_seed=ctx.seed, profile=ctx.profile,
        threshold=ctx.settings.training.threshold, window=ctx.settings.training.last_epochs_window,
        pretrained=pretrained,
    )
    responses = write_response_csv(records, out_dir / "kfold_responses.csv")
    outputs = {"responses": str(responses)}

    data = read_response_csv(responses)
    if data["tst_acc"].notna().sum() > 1:
        table = anova_service.glm_anova(data.dropna(subset=["tst_acc"]), ["fold", "run"], "tst_acc")
        outputs["anova"] = str(anova_service.write_anova(table, out_dir / "kfold_anova.csv", out_dir / "kfold_anova.txt"))
    summary = anova_service.summarize_runs(data, RESPONSES)["tst_acc"]
    logger.info("📈 K-fold summary", n=summary.n, mean=summary.mean, sd=summary.sd, se=summary.se)

    ctx.manifest(out_dir, "kfold", {"manifest": str(args.manifest)}, outputs, dataset_manifest=Path(args.manifest))
    return 0


# ---------------------------------------------------------------------------
# reconstruct
# ---------------------------------------------------------------------------

def _grid_layouts(root: Path) -> Dict[str, GridLayout]:
    grids_path = root / "grids.csv"
    layouts: Dict[str, GridLayout] = {}
    if grids_path.exists():
        for r in pd.read_csv(grids_path).itertuples():
            layouts[str(r.coupon)] = GridLayout(int(r.rows), int(r.cols), int(r.tile_w), int(r.tile_h))
    return layouts


def cmd_reconstruct(ctx: RunContext) -> int:
    """Phân loại tile, ghép ảnh coupon tinted/untinted và ghi verdict"""
    args = ctx.args
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = build_model(ctx.hyperparams, profile=ctx.profile)
    weights = load_checkpoint(args.weights, spec)

    manifest = read_manifest(args.manifest)
    root = Path(manifest.attrs["root"])
    layouts = _grid_layouts(root)
    reject_threshold = args.reject_threshold if args.reject_threshold is not None else ctx.settings.experiment.reject_threshold
    exponent = ctx.settings.experiment.tint_exponent

    outputs: Dict[str, str] = {}
    verdicts: List[dict] = []
    for coupon, rows in manifest.groupby("coupon", sort=True):
        tiles = [Tile(int(r.row), int(r.col), read_tile(root / r.path), str(coupon)) for r in rows.itertuples()]
        first = tiles[0].pixels
        layout = layouts.get(str(coupon)) or GridLayout(
            int(rows["row"].max()) + 1, int(rows["col"].max()) + 1, first.shape[1], first.shape[0])
        present = {(t.row, t.col) for t in tiles}
        discarded = [(r, c) for r in range(layout.rows) for c in range(layout.cols) if (r, c) not in present]

        # stored tiles are smaller than the cut tiles; reassemble at stored size
        layout = GridLayout(layout.rows, layout.cols, first.shape[1], first.shape[0])
        classifications = classify_tiles(weights, spec, tiles, ctx.settings.training.threshold)
        report = coupon_report(classifications, str(coupon), reject_threshold)
        untinted, tinted = build_ensemble(layout, tiles, classifications, discarded, exponent)
        paths = write_coupon_outputs(out_dir, report, untinted, tinted, classifications)
        outputs.update({f"{coupon}_{k}": str(v) for k, v in paths.items()})
        verdicts.append(report.__dict__)

    verdict_path = out_dir / "verdicts.csv"
    pd.DataFrame.from_records(verdicts).to_csv(verdict_path, index=False)
    outputs["verdicts"] = str(verdict_path)
    ctx.manifest(out_dir, "reconstruct", {"weights": str(args.weights), "manifest": str(args.manifest)}, outputs,
                 dataset_manifest=Path(args.manifest))
    return 0


def cmd_serve(ctx: RunContext) -> int:
    """Chạy FastAPI server"""
    from .main import serve

    serve(host=ctx.args.host, port=ctx.args.port)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Master seed")
    common.add_argument("--epochs", type=int, default=None, help="Số epoch")
    common.add_argument("--batch", type=int, default=None, help="Batch size (ghi đè cấu hình)")
    common.add_argument("--config", default=None, help="File cấu hình KEY=value")
    common.add_argument("--threads", type=int, default=None, help="Số treatment chạy song song")
    common.add_argument("--resume", action="store_true", help="Bỏ qua treatment đã hoàn thành")
    common.add_argument("--profile", choices=sorted(PROFILES), default=None, help="Profile mạng")
    common.add_argument("--log-level", default=None, help="Mức log")

    parser = argparse.ArgumentParser(prog="graindoe", description="DoE-tuned CNN grain classification")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", parents=[common], help="Cắt coupon thành tile đã chuẩn hóa")
    p.add_argument("input_dir")
    p.add_argument("out_dir")
    p.add_argument("--labels", default=None, help="CSV nhãn (coupon,row,col,label)")
    p.set_defaults(handler=cmd_prep)

    p = sub.add_parser("synth", parents=[common], help="Sinh dữ liệu hạt tổng hợp")
    p.add_argument("out_dir")
    p.add_argument("--good", type=int, default=100)
    p.add_argument("--bad", type=int, default=100)
    p.add_argument("--tile-size", type=int, default=140)
    p.add_argument("--coupon-layout", default=None, help="Lưới regime, vd 'good,bad;good,good'")
    p.add_argument("--coupon", default="synthetic")
    p.add_argument("--margin", type=int, default=0)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("doe-gen", parents=[common], help="Sinh ma trận thiết kế")
    p.add_argument("kind", choices=list(BUILTIN_DESIGNS) + ["dsd", "ccd"])
    p.add_argument("out")
    p.add_argument("--alpha-mode", choices=[m.value for m in AlphaMode], default="rotatable")
    p.add_argument("--center-points", type=int, default=5)
    p.add_argument("--randomize", action="store_true", help="Xáo run order theo seed")
    p.set_defaults(handler=cmd_doe_gen)

    p = sub.add_parser("run-doe", parents=[common], help="Chạy ma trận thiết kế")
    p.add_argument("design", help="Tên thiết kế có sẵn hoặc CSV")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.add_argument("--replicates", type=int, default=None)
    p.set_defaults(handler=cmd_run_doe)

    p = sub.add_parser("anova", parents=[common], help="Phân tích ANOVA bảng response")
    p.add_argument("responses")
    p.add_argument("out_dir")
    p.add_argument("--design", default=None)
    p.add_argument("--terms", default="linear", help="linear, quadratic, interactions, full hoặc 'a,b,a*b,a^2'")
    p.add_argument("--response", action="append", default=None)
    p.set_defaults(handler=cmd_anova)

    p = sub.add_parser("train", parents=[common], help="Huấn luyện một cấu hình")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.add_argument("--pretrained", default=None, help="Checkpoint để fine-tune")
    p.add_argument("--balance", action="store_true", help="Augment lớp thiểu số của tập train")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("kfold", parents=[common], help="Cross-validation")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--pretrained", default=None)
    p.set_defaults(handler=cmd_kfold)

    p = sub.add_parser("reconstruct", parents=[common], help="Ghép ảnh coupon và báo cáo verdict")
    p.add_argument("weights")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.add_argument("--reject-threshold", type=float, default=None)
    p.set_defaults(handler=cmd_reconstruct)

    p = sub.add_parser("serve", parents=[common], help="Chạy API server")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(handler=cmd_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or default_settings.log_level)
    try:
        ctx = RunContext(args)
        if args.log_level is None:
            configure_logging(ctx.settings.log_level)
        return args.handler(ctx)
    except GrainDoeError as e:
        logger.error("❌ Command failed", command=args.command, error=str(e), exit_code=e.exit_code)
        return e.exit_code
    except Exception as e:
        logger.error("💥 Unexpected error", command=args.command, error=str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
