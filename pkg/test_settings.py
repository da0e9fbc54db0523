"""
Tests for configuration loading
Kiểm tra đọc file cấu hình KEY=value theo section
"""

import pytest
from pydantic import ValidationError

from config.settings import Settings, load_config_from_file, save_config_to_file
from graindoe.exceptions import ConfigurationError
from graindoe.nn.hyperparams import make_hyperparams


class TestConfigFile:
    def test_no_file_returns_base(self):
        base = Settings()
        loaded, remaining = load_config_from_file(None, base=base)
        assert loaded is base and remaining == {}

    def test_sections_and_hyperparameters(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text(
            "LOG_LEVEL=DEBUG\n"
            "TRAIN_EPOCHS=3\n"
            "AUGMENT_VERTICAL_FLIP=false\n"
            "EXPERIMENT_REJECT_THRESHOLD=0.1\n"
            "FILTER_C1=5\n"
            "optimizer=adamax\n",
            encoding="utf-8",
        )
        loaded, remaining = load_config_from_file(path, base=Settings())

        assert loaded.log_level == "DEBUG"
        assert loaded.training.epochs == 3
        assert loaded.training.train_size == 5020
        assert loaded.augment.vertical_flip is False
        assert loaded.experiment.reject_threshold == pytest.approx(0.1)
        assert remaining == {"filter_c1": "5", "optimizer": "adamax"}

        hyper = make_hyperparams(remaining)
        assert hyper.filter_c1 == 5 and hyper.optimizer == "adamax"

    def test_invalid_value_raises(self, tmp_path):
        path = tmp_path / "bad.env"
        path.write_text("IMGPREP_TILE_WIDTH=wide\n", encoding="utf-8")
        with pytest.raises(ValidationError):
            load_config_from_file(path, base=Settings())

    def test_unknown_hyperparameter(self):
        with pytest.raises(ConfigurationError, match="filter_c9"):
            make_hyperparams({"filter_c9": "3"})

    def test_save_and_reload(self, tmp_path):
        original, _ = load_config_from_file(None, base=Settings())
        path = tmp_path / "saved" / "config.env"
        save_config_to_file(path, original.model_copy(
            update={"training": original.training.model_copy(update={"epochs": 12})}
        ))

        loaded, remaining = load_config_from_file(path, base=Settings())
        assert loaded.training.epochs == 12
        assert loaded.imgprep.tile_width == original.imgprep.tile_width
        assert remaining == {}
