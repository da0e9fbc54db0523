"""
Tests for training, evaluation and experiment running
Kiểm tra chia dữ liệu, confusion metrics, fine-tune, chạy DoE và resume
"""

import json

import numpy as np
import pytest

import graindoe.services.trainer as trainer_service
from conftest import constant_weights
from graindoe.exceptions import DataError
from graindoe.nn.hyperparams import VERIFIED_CONFIG
from graindoe.nn.model import build_model, freeze_indices, init_weights
from graindoe.services.doe import DesignKind, DesignMatrix, FactorDef
from graindoe.services.synthgrain import generate_dataset, write_dataset
from graindoe.services.trainer import (
    ConfusionMatrix,
    ExperimentRunner,
    ResponseRecord,
    SplitArrays,
    TrainConfig,
    accuracy,
    attach_factors,
    confusion_from_predictions,
    confusion_metrics,
    evaluate,
    fine_tune,
    iterations_per_epoch,
    kfold_cv,
    load_dataset,
    load_split_arrays,
    read_response_csv,
    responses_to_frame,
    run_design_to_dir,
    run_experiment,
    run_treatment,
    split_dataset,
    train,
    trainable_param_count,
    write_response_csv,
    write_run_manifest,
)
from graindoe.utils.helpers import derive_seed


@pytest.fixture(scope="module")
def split_arrays(synthetic_dataset_dir) -> SplitArrays:
    return load_split_arrays(synthetic_dataset_dir / "manifest.csv", (24, 12, 12), seed=0, input_shape=(3, 64, 64))


def _drop_design(rows=((-1.0,), (1.0,))) -> DesignMatrix:
    factor = FactorDef(name="DropD1", param="drop_d1", levels=(0.1, 0.3, 0.5), interpolate=True)
    return DesignMatrix(
        kind=DesignKind.CUSTOM,
        factors=[factor],
        rows=np.array(rows),
        fixed=VERIFIED_CONFIG.model_copy(update={"batch_size": 16}),
        name="drop",
    )


class TestConfusionMetrics:
    def test_first_verification_run(self):
        m = confusion_metrics(ConfusionMatrix(tn=359, fp=41, fn=28, tp=372))
        assert round(100 * m["specificity"], 2) == 89.75
        assert round(100 * m["sensitivity"], 2) == 93.00
        assert round(100 * m["precision"], 2) == 90.07
        assert round(100 * m["accuracy"], 2) == 91.38
        assert m["fpr"] == pytest.approx(1 - m["specificity"])

    def test_second_verification_run(self):
        m = confusion_metrics(ConfusionMatrix(tn=296, fp=104, fn=9, tp=391))
        assert round(100 * m["accuracy"], 2) == 85.88
        assert round(100 * m["fpr"], 2) == 26.00

    def test_zero_denominators_are_undefined(self):
        m = confusion_metrics(ConfusionMatrix(tn=0, fp=0, fn=3, tp=0))
        assert m["specificity"] is None and m["fpr"] is None and m["precision"] is None
        assert m["sensitivity"] == 0.0

    def test_threshold_tie_counts_as_good(self):
        cm = confusion_from_predictions(np.array([0.5, 0.49, 0.9]), np.array([1, 0, 0]))
        assert (cm.tn, cm.fp, cm.fn, cm.tp) == (1, 1, 0, 1)
        assert accuracy(np.array([0.5]), np.array([1])) == 1.0

    def test_negative_counts(self):
        with pytest.raises(DataError):
            ConfusionMatrix(tn=-1, fp=0, fn=0, tp=0)


class TestBookkeeping:
    @pytest.mark.parametrize("batch, expected", [(80, 63), (160, 32), (240, 21)])
    def test_iterations_per_epoch(self, batch, expected):
        assert iterations_per_epoch(5020, batch) == expected

    def test_trainable_parameters_after_freezing(self):
        spec = build_model(VERIFIED_CONFIG, profile="paper")
        assert trainable_param_count(spec, freeze_indices(spec)) == 280_769

    def test_split_is_stratified_and_disjoint(self):
        labels = np.array([1] * 30 + [0] * 30)
        split = split_dataset(labels, (20, 10, 9), seed=5)

        counts = split.class_counts()
        assert counts == {"train": (10, 10), "validation": (5, 5), "test": (4, 5)}
        joined = np.concatenate([split.train, split.validation, split.test])
        assert len(set(joined.tolist())) == 39

    def test_split_is_seeded(self):
        labels = np.array([1, 0] * 20)
        a, b = split_dataset(labels, (10, 6, 4), 9), split_dataset(labels, (10, 6, 4), 9)
        np.testing.assert_array_equal(a.train, b.train)
        assert not np.array_equal(a.train, split_dataset(labels, (10, 6, 4), 10).train)

    def test_split_needs_enough_samples(self):
        with pytest.raises(DataError, match="'good'"):
            split_dataset(np.array([1] * 4 + [0] * 40), (20, 4, 4), seed=0)


class TestTraining:
    def test_epoch_records(self, split_arrays, tiny_hyperparams):
        spec = build_model(tiny_hyperparams, profile="tiny")
        result = train(spec, split_arrays, TrainConfig(epochs=2, hyperparams=tiny_hyperparams, seed=1))

        assert [r.epoch for r in result.records] == [1, 2]
        assert result.iterations_per_epoch == 2
        assert result.best_epoch in (1, 2)
        assert all(0.0 <= r.val_acc <= 1.0 for r in result.records)

    def test_same_seed_same_responses(self, split_arrays, tiny_hyperparams):
        a = run_treatment(tiny_hyperparams, split_arrays, 1, 42, ResponseRecord(tc=1), profile="tiny")
        b = run_treatment(tiny_hyperparams, split_arrays, 1, 42, ResponseRecord(tc=1), profile="tiny")
        assert (a.trn_acc, a.val_acc, a.tst_acc) == (b.trn_acc, b.val_acc, b.tst_acc)
        assert not a.fault

    def test_fine_tune_keeps_frozen_layers_bit_identical(self, split_arrays, tiny_hyperparams, tiny_spec):
        pretrained = init_weights(tiny_spec, np.random.default_rng(7))
        result = fine_tune(pretrained, tiny_spec, split_arrays, TrainConfig(epochs=1, hyperparams=tiny_hyperparams))

        for index in freeze_indices(tiny_spec):
            for name in ("kernel", "bias"):
                np.testing.assert_array_equal(result.final_weights[index][name], pretrained[index][name])
        dense = tiny_spec.trainable_indices()[-1]
        assert not np.array_equal(result.final_weights[dense]["kernel"], pretrained[dense]["kernel"])

    def test_fine_tune_rejects_mismatched_weights(self, split_arrays, tiny_hyperparams, tiny_spec):
        other = build_model(tiny_hyperparams.model_copy(update={"filter_c1": 5}), profile="tiny")
        with pytest.raises(DataError, match="do not match"):
            fine_tune(init_weights(other, np.random.default_rng(0)), tiny_spec, split_arrays,
                      TrainConfig(epochs=1, hyperparams=tiny_hyperparams))

    def test_non_finite_input_is_recorded_as_fault(self, split_arrays, tiny_hyperparams):
        broken = SplitArrays(
            x_train=np.full_like(split_arrays.x_train, np.nan), y_train=split_arrays.y_train,
            x_val=split_arrays.x_val, y_val=split_arrays.y_val,
            x_test=split_arrays.x_test, y_test=split_arrays.y_test,
        )
        record = run_treatment(tiny_hyperparams, broken, 1, 0, ResponseRecord(tc=3), profile="tiny")
        assert "non-finite" in record.fault
        assert "epoch=1" in record.fault
        assert record.tst_acc is None

    def test_evaluate_with_constant_network(self, split_arrays, tiny_spec):
        cm = evaluate(constant_weights(tiny_spec, 4.0), tiny_spec, split_arrays.x_test, split_arrays.y_test)
        good = int(np.sum(split_arrays.y_test == 1))
        assert (cm.tn, cm.fp, cm.fn, cm.tp) == (0, len(split_arrays.y_test) - good, 0, good)

    def test_kfold_records_fold_and_run(self, synthetic_dataset_dir, tiny_hyperparams):
        x, labels = load_dataset(synthetic_dataset_dir / "manifest.csv", (3, 64, 64))
        records = kfold_cv(x, labels, 2, 1, tiny_hyperparams, 1, (24, 12, 12), master_seed=5, profile="tiny")

        assert [(r.fold, r.run) for r in records] == [(1, 1), (2, 1)]
        assert all(r.tst_acc is not None for r in records)
        with pytest.raises(DataError):
            kfold_cv(x, labels, 1, 1, tiny_hyperparams, 1, (24, 12, 12))


class TestExperimentRunner:
    def test_resume_skips_finished_treatments(self, split_arrays, tmp_path):
        log = tmp_path / "responses.jsonl"
        seen = []
        first = ExperimentRunner(_drop_design(), split_arrays, epochs=1, profile="tiny", log_path=log,
                                 progress=seen.append).run()
        assert [r.tc for r in first] == [1, 2]
        assert len(seen) == 2

        lines = log.read_text(encoding="utf-8").splitlines()
        log.write_text(lines[0] + "\n", encoding="utf-8")
        seen.clear()
        second = ExperimentRunner(_drop_design(), split_arrays, epochs=1, profile="tiny", log_path=log,
                                  resume=True, progress=seen.append).run()

        assert [r.tc for r in seen] == [2]
        assert [r.tc for r in second] == [1, 2]
        assert len(log.read_text(encoding="utf-8").splitlines()) == 2
        assert second[1].tst_acc == first[1].tst_acc

    def test_rerun_without_resume_starts_a_fresh_log(self, split_arrays, tmp_path):
        log = tmp_path / "responses.jsonl"
        for _ in range(2):
            ExperimentRunner(_drop_design(), split_arrays, epochs=1, profile="tiny", log_path=log).run()
        assert len(log.read_text(encoding="utf-8").splitlines()) == 2

    @pytest.mark.parametrize("threads", [1, 2])
    def test_unexpected_error_in_one_treatment_does_not_stop_the_run(
        self, split_arrays, tmp_path, monkeypatch, threads
    ):
        real_train = trainer_service.train
        broken_seed = derive_seed(5, 1, 1)

        def flaky_train(spec, data, config, *args, **kwargs):
            if config.seed == broken_seed:
                raise RuntimeError("simulated crash")
            return real_train(spec, data, config, *args, **kwargs)

        monkeypatch.setattr(trainer_service, "train", flaky_train)
        log = tmp_path / "responses.jsonl"
        records = ExperimentRunner(_drop_design(), split_arrays, epochs=1, master_seed=5, profile="tiny",
                                   threads=threads, log_path=log).run()

        assert [r.tc for r in records] == [1, 2]
        assert "RuntimeError" in records[0].fault and "simulated crash" in records[0].fault
        assert not records[1].fault and records[1].tst_acc is not None
        assert len(log.read_text(encoding="utf-8").splitlines()) == 2

    def test_undecodable_row_becomes_fault(self, split_arrays):
        factor = FactorDef(name="FiltC1", param="filter_c1", factor_type="continuous", levels=(3, 5, 7))
        design = DesignMatrix(kind=DesignKind.CUSTOM, factors=[factor], rows=np.array([[0.5]]),
                              fixed=VERIFIED_CONFIG.model_copy(update={"batch_size": 16}))
        records = ExperimentRunner(design, split_arrays, epochs=1, profile="tiny").run()
        assert records[0].fault and "FiltC1" in records[0].fault

    def test_run_experiment_sorts_by_replicate_then_treatment(self, split_arrays):
        design = _drop_design()
        design.run_order = np.array([1, 0])
        records = run_experiment(design, split_arrays, 1, replicates=2, seed=4, profile="tiny")
        assert [(r.replicate, r.tc) for r in records] == [(1, 1), (1, 2), (2, 1), (2, 2)]

    def test_jobs_follow_run_order_and_replicates(self, split_arrays):
        design = _drop_design(((-1.0,), (0.0,), (1.0,)))
        design.run_order = np.array([2, 0, 1])
        runner = ExperimentRunner(design, split_arrays, epochs=1, replicates=2)
        assert runner.jobs() == [(3, 1), (1, 1), (2, 1), (3, 2), (1, 2), (2, 2)]


class TestResponseFiles:
    def test_columns_and_round_trip(self, tmp_path):
        records = [
            ResponseRecord(tc=1, epoch=35, time=1.5, trn_acc=0.95, val_acc=0.9, tst_acc=0.91, tpr=0.93, tnr=0.89, ppr=0.9),
            ResponseRecord(tc=2, fault="non-finite loss"),
        ]
        frame = responses_to_frame(records)
        assert list(frame.columns) == [
            "TC", "epoch", "time", "trn_acc", "val_acc", "tst_acc", "tpr", "tnr", "ppr", "replicate", "fault", "imputed",
        ]
        loaded = read_response_csv(write_response_csv(records, tmp_path / "r.csv"))
        assert list(loaded["fault"]) == ["", "non-finite loss"]
        assert loaded["tst_acc"][0] == pytest.approx(0.91)

    def test_kfold_frame_has_fold_and_run(self):
        frame = responses_to_frame([ResponseRecord(tc=1, fold=1, run=1)])
        assert list(frame.columns[:2]) == ["fold", "run"]

    def test_attach_factors_by_treatment(self):
        frame = responses_to_frame([ResponseRecord(tc=2, tst_acc=0.8), ResponseRecord(tc=1, tst_acc=0.7)])
        joined = attach_factors(frame, _drop_design())
        assert list(joined["DropD1"]) == [1.0, -1.0]

    def test_run_manifest_hashes(self, tmp_path):
        dataset = tmp_path / "manifest.csv"
        dataset.write_text("path,coupon,row,col,label\n", encoding="utf-8")
        path = write_run_manifest(tmp_path / "run_manifest.json", "train", 7, "SEED=7\n", {}, {}, dataset, "1.0.0")
        payload = json.loads(path.read_text(encoding="utf-8"))
        assert payload["master_seed"] == 7
        assert len(payload["config_hash"]) == 64
        assert len(payload["dataset_manifest_hash"]) == 64


@pytest.mark.slow
def test_design_run_writes_all_outputs(synthetic_dataset_dir, tmp_path):
    outputs = run_design_to_dir(
        _drop_design(), synthetic_dataset_dir / "manifest.csv", tmp_path / "run",
        epochs=2, replicates=1, seed=3, sizes=(24, 12, 12), profile="tiny",
    )
    responses = read_response_csv(outputs["responses"])

    assert len(responses) == 2
    assert responses["fault"].eq("").all()
    assert responses["tst_acc"].between(0, 1).all()
    assert (tmp_path / "run" / "checkpoints").is_dir()
    assert json.loads((tmp_path / "run" / "run_manifest.json").read_text(encoding="utf-8"))["command"] == "run-doe"


@pytest.fixture(scope="module")
def desk_scale_dataset(tmp_path_factory):
    """1000 tile 64 px (500 good, 500 bad) cho tiêu chí độ chính xác đầu-cuối"""
    root = tmp_path_factory.mktemp("desk_scale")
    write_dataset(generate_dataset(n_good=500, n_bad=500, tile_size=64, seed=11), root)
    return root / "manifest.csv"


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_verified_network_reaches_ninety_percent_on_synthetic_grains(desk_scale_dataset, seed):
    data = load_split_arrays(desk_scale_dataset, (600, 200, 200), seed=seed, input_shape=(3, 64, 64))
    record = run_treatment(VERIFIED_CONFIG, data, 60, derive_seed(seed, 1, 1), ResponseRecord(tc=1), profile="tiny")

    assert not record.fault
    assert record.tst_acc >= 0.90
