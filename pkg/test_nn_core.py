"""
Tests for the numpy CNN core
Kiểm tra kiến trúc, gradient, optimizer và checkpoint
"""

import numpy as np
import pytest

from graindoe.exceptions import ConfigurationError, DataError, TrainingFault
from graindoe.nn.checkpoint import load_checkpoint, save_checkpoint
from graindoe.nn.hyperparams import VERIFIED_CONFIG, Hyperparams, make_hyperparams
from graindoe.nn.model import (
    LayerSpec,
    ModelSpec,
    backprop,
    build_model,
    count_params,
    forward,
    freeze_indices,
    init_weights,
    make_dropout_masks,
    predict,
    spec_from_text,
    spec_to_text,
    summary_table,
    total_loss,
)
from graindoe.nn.optim import OptimizerState, max_norm_apply, optimizer_step
from graindoe.nn.tensor_ops import (
    activation_apply,
    bce_loss,
    conv2d_forward,
    conv_output_size,
    dense_forward,
    dropout_mask,
    maxpool2_forward,
)


class TestArchitecture:
    def test_verified_config_parameter_count(self):
        spec = build_model(VERIFIED_CONFIG, profile="paper")
        total, per_layer = count_params(spec)

        assert total == 290_913
        assert sorted(per_layer.values()) == [65, 896, 9_248, 18_496, 262_208]

    def test_verified_config_shape_sequence(self):
        spec = build_model(VERIFIED_CONFIG, profile="paper")
        conv_shapes = [spec.shapes[i] for i, layer in enumerate(spec.layers) if layer.kind == "conv2d"]
        pool_shapes = [spec.shapes[i] for i, layer in enumerate(spec.layers) if layer.kind == "maxpool2"]
        flat = [spec.shapes[i] for i, layer in enumerate(spec.layers) if layer.kind == "flatten"]

        assert conv_shapes == [(32, 70, 70), (32, 35, 35), (64, 17, 17)]
        assert pool_shapes == [(32, 35, 35), (32, 17, 17), (64, 8, 8)]
        assert flat == [(4096,)]
        assert spec.shapes[-1] == (1,)

    def test_summary_table_reports_total(self):
        table = summary_table(build_model(VERIFIED_CONFIG))
        assert "Total params: 290,913" in table
        assert "conv2d_1 (Conv2D)" in table

    def test_tiny_profile_is_smaller(self):
        tiny = build_model(VERIFIED_CONFIG, profile="tiny")
        assert tiny.input_shape == (3, 64, 64)
        assert count_params(tiny)[0] < 290_913

    def test_collapsing_geometry_is_a_configuration_error(self):
        h = VERIFIED_CONFIG.model_copy(update={"padding": "valid", "filter_c1": 7, "filter_c2": 7, "filter_c3": 7})
        with pytest.raises(ConfigurationError):
            build_model(h, input_shape=(3, 16, 16))

    def test_spec_text_round_trip(self):
        spec = build_model(VERIFIED_CONFIG, profile="tiny")
        assert spec_from_text(spec_to_text(spec)) == spec

    def test_freeze_indices_are_first_two_convs(self):
        spec = build_model(VERIFIED_CONFIG)
        frozen = freeze_indices(spec)
        assert [spec.layers[i].kind for i in frozen] == ["conv2d", "conv2d"]
        assert frozen[0] == 0


class TestHyperparams:
    def test_defaults_are_verified_config(self):
        h = Hyperparams()
        assert (h.batch_size, h.kernel_constraint, h.optimizer, h.activation) == (240, 7.5, "adam", "relu")
        assert (h.padding, h.stride_c1, h.filter_c1) == ("same", 2, 3)

    def test_invalid_filter_is_configuration_error(self):
        with pytest.raises(ConfigurationError):
            make_hyperparams({"filter_c1": 4})

    def test_unknown_key_is_configuration_error(self):
        with pytest.raises(ConfigurationError, match="unknown hyperparameter"):
            make_hyperparams({"zoom": 0.2})

    def test_string_values_are_coerced(self):
        h = make_hyperparams({"batch_size": "80", "optimizer": "Nadam", "kernel_constraint": "none"})
        assert h.batch_size == 80
        assert h.optimizer == "nadam"
        assert h.kernel_constraint is None


class TestTensorOps:
    def test_conv_output_sizes(self):
        assert conv_output_size(140, 3, 2, "same") == 70
        assert conv_output_size(35, 3, 1, "same") == 35
        assert conv_output_size(35, 5, 1, "valid") == 31
        assert conv_output_size(2, 3, 1, "valid") == 0

    def test_conv_is_cross_correlation(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        kernel = np.zeros((1, 1, 3, 3))
        kernel[0, 0, 0, 0] = 1.0
        out, _ = conv2d_forward(x, kernel, np.zeros(1), stride=1, padding="valid")
        np.testing.assert_array_equal(out[0, 0], [[0, 1], [4, 5]])

    def test_maxpool_floors_odd_sizes(self):
        x = np.arange(25, dtype=np.float64).reshape(1, 1, 5, 5)
        out, _ = maxpool2_forward(x)
        np.testing.assert_array_equal(out[0, 0], [[6, 8], [16, 18]])

    def test_bce_loss_at_half(self):
        assert bce_loss(np.array([0.5, 0.5]), np.array([1, 0])) == pytest.approx(np.log(2))

    def test_bce_loss_clips_saturated_predictions(self):
        assert np.isfinite(bce_loss(np.array([0.0, 1.0]), np.array([1, 0])))

    def test_activations_at_known_points(self):
        x = np.array([-1.0, 0.0, 1.0, 2.0])
        np.testing.assert_array_equal(activation_apply("relu", x), [0, 0, 1, 2])
        assert activation_apply("sigmoid", np.zeros(1))[0] == 0.5
        assert activation_apply("tanh", np.zeros(1))[0] == 0.0
        assert activation_apply("selu", np.array([1.0]))[0] == pytest.approx(1.0507009873554805)
        with pytest.raises(ConfigurationError):
            activation_apply("swish", x)

    def test_dropout_mask(self):
        np.testing.assert_array_equal(dropout_mask((3, 4), 0.0, np.random.default_rng(0)), np.ones((3, 4)))

        mask = dropout_mask((1_000_000,), 0.5, np.random.default_rng(1))
        assert abs(np.mean(mask > 0) - 0.5) < 0.002
        assert set(np.unique(mask)) == {0.0, 2.0}
        np.testing.assert_array_equal(mask, dropout_mask((1_000_000,), 0.5, np.random.default_rng(1)))
        with pytest.raises(ConfigurationError):
            dropout_mask((2,), 1.0, np.random.default_rng(0))

    def test_dense_rows_are_unit_weights(self):
        out = dense_forward(np.array([[1.0, 2.0]]), np.array([[1.0, 0.0], [0.5, 0.5]]), np.array([0.0, 1.0]))
        np.testing.assert_array_equal(out, [[1.0, 2.5]])
        with pytest.raises(ConfigurationError):
            dense_forward(np.ones((1, 3)), np.ones((2, 2)), np.zeros(2))


def _gradient_net(activation: str) -> ModelSpec:
    layers = (
        LayerSpec(kind="conv2d", filters=3, kernel=3, stride=1, padding="same", activation=activation, l2=1e-2),
        LayerSpec(kind="maxpool2"),
        LayerSpec(kind="dropout", drop_rate=0.3),
        LayerSpec(kind="conv2d", filters=3, kernel=3, stride=2, padding="valid", activation=activation, l1=1e-3),
        LayerSpec(kind="flatten"),
        LayerSpec(kind="dense", units=4, activation=activation, l2=1e-3),
        LayerSpec(kind="dropout", drop_rate=0.2),
        LayerSpec(kind="dense", units=1),
        LayerSpec(kind="activation", activation="sigmoid"),
    )
    return ModelSpec(layers=layers, input_shape=(2, 7, 7))


class TestGradients:
    @pytest.mark.parametrize("activation", ["relu", "tanh", "selu", "sigmoid"])
    def test_backprop_matches_finite_differences(self, activation):
        rng = np.random.default_rng(11)
        spec = _gradient_net(activation)
        weights = init_weights(spec, rng, dtype=np.float64)
        for index in weights:
            weights[index]["bias"][...] = rng.normal(0, 0.1, weights[index]["bias"].shape)
        x = rng.normal(size=(5, 2, 7, 7))
        y = np.array([1, 0, 1, 1, 0], dtype=np.float64)
        masks = make_dropout_masks(spec, 5, rng, dtype=np.float64)

        _, grads = backprop(spec, weights, x, y, masks)

        eps = 1e-6
        worst = 0.0
        for index, name, array in weights.arrays():
            flat = array.reshape(-1)
            for k in range(flat.size):
                original = flat[k]
                flat[k] = original + eps
                plus = total_loss(spec, weights, x, y, masks)
                flat[k] = original - eps
                minus = total_loss(spec, weights, x, y, masks)
                flat[k] = original
                numeric = (plus - minus) / (2 * eps)
                analytic = grads[index][name].reshape(-1)[k]
                denom = max(abs(numeric) + abs(analytic), 1e-5)
                worst = max(worst, abs(numeric - analytic) / denom)
        assert worst < 1e-4

    def test_skipped_layers_get_zero_gradients(self):
        rng = np.random.default_rng(2)
        spec = _gradient_net("tanh")
        weights = init_weights(spec, rng, dtype=np.float64)
        x = rng.normal(size=(3, 2, 7, 7))
        _, grads = backprop(spec, weights, x, np.array([1, 0, 1]), skip=[0, 3])
        assert not np.any(grads[0]["kernel"]) and not np.any(grads[3]["kernel"])
        assert np.any(grads[5]["kernel"])

    def test_non_finite_input_raises_training_fault(self):
        rng = np.random.default_rng(2)
        spec = _gradient_net("relu")
        weights = init_weights(spec, rng, dtype=np.float64)
        x = np.full((2, 2, 7, 7), np.nan)
        with pytest.raises(TrainingFault):
            backprop(spec, weights, x, np.array([1, 0]))

    def test_inference_ignores_dropout(self, tiny_spec):
        weights = init_weights(tiny_spec, np.random.default_rng(0))
        x = np.random.default_rng(1).random((4,) + tiny_spec.input_shape, dtype=np.float32)
        np.testing.assert_array_equal(predict(tiny_spec, weights, x), forward(tiny_spec, weights, x)[0])

    def test_wrong_input_shape_is_configuration_error(self, tiny_spec):
        weights = init_weights(tiny_spec, np.random.default_rng(0))
        with pytest.raises(ConfigurationError):
            forward(tiny_spec, weights, np.zeros((1, 3, 32, 32), dtype=np.float32))


class TestOptimizer:
    def test_max_norm_caps_rows_and_is_idempotent(self):
        rows = np.array([[3.0, 4.0], [0.3, 0.4]], dtype=np.float32)
        once = max_norm_apply(rows, 1.0)
        assert np.linalg.norm(once[0]) == pytest.approx(1.0, rel=1e-6)
        np.testing.assert_array_equal(once[1], rows[1])
        np.testing.assert_array_equal(max_norm_apply(once, 1.0), once)

    # nadam looks one momentum step ahead: b1 (1-b1) / (1-b1^2) + 1
    @pytest.mark.parametrize("kind, factor", [("adam", 1.0), ("adamax", 1.0), ("nadam", 1.0 + 0.09 / 0.19)])
    def test_first_step_moves_against_gradient(self, kind, factor, tiny_spec):
        weights = init_weights(tiny_spec, np.random.default_rng(0), dtype=np.float64)
        grads = weights.zeros_like()
        index = tiny_spec.trainable_indices()[0]
        grads[index]["bias"][...] = 0.5
        state = OptimizerState(kind=kind, learning_rate=1e-3)

        updated = optimizer_step(state, weights, grads)

        delta = updated[index]["bias"] - weights[index]["bias"]
        np.testing.assert_allclose(delta, -1e-3 * factor, rtol=1e-3)
        np.testing.assert_array_equal(updated[index]["kernel"], weights[index]["kernel"])
        assert state.t == 1

    def test_frozen_layers_are_bit_identical(self, tiny_spec):
        rng = np.random.default_rng(0)
        weights = init_weights(tiny_spec, rng)
        grads = init_weights(tiny_spec, rng)
        frozen = freeze_indices(tiny_spec)
        updated = optimizer_step(OptimizerState(kind="adam"), weights, grads, tiny_spec, frozen)
        for index in frozen:
            np.testing.assert_array_equal(updated[index]["kernel"], weights[index]["kernel"])
        moved = [i for i in tiny_spec.trainable_indices() if i not in frozen]
        assert not np.array_equal(updated[moved[0]]["kernel"], weights[moved[0]]["kernel"])

    def test_unknown_optimizer(self):
        with pytest.raises(ConfigurationError):
            OptimizerState(kind="sgd")


class TestCheckpoint:
    def test_round_trip(self, tmp_path, tiny_spec):
        weights = init_weights(tiny_spec, np.random.default_rng(5))
        path = save_checkpoint(tmp_path / "w.gdck", tiny_spec, weights)
        assert load_checkpoint(path, tiny_spec).equals(weights)

    def test_incompatible_spec_lists_shape_differences(self, tmp_path, tiny_spec):
        weights = init_weights(tiny_spec, np.random.default_rng(5))
        path = save_checkpoint(tmp_path / "w.gdck", tiny_spec, weights)
        other = build_model(VERIFIED_CONFIG.model_copy(update={"filter_c2": 5}), profile="tiny")
        with pytest.raises(DataError, match="layer"):
            load_checkpoint(path, other)

    def test_corrupt_file(self, tmp_path, tiny_spec):
        path = tmp_path / "bad.gdck"
        path.write_bytes(b"not a checkpoint at all, just text padding" * 2)
        with pytest.raises(DataError):
            load_checkpoint(path, tiny_spec)

    def test_missing_file(self, tmp_path, tiny_spec):
        with pytest.raises(DataError, match="not found"):
            load_checkpoint(tmp_path / "missing.gdck", tiny_spec)
