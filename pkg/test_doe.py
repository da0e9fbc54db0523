"""
Tests for design-of-experiments generation and coding
Kiểm tra DSD, CCD, giải mã hàng và CSV + sidecar
"""

import numpy as np
import pandas as pd
import pytest

from graindoe.exceptions import ConfigurationError, DataError, DecodeError, UnsupportedDesignError
from graindoe.services.doe import (
    AlphaMode,
    CcdSpec,
    DesignKind,
    FactorDef,
    OPTIMIZATION_FACTORS,
    OPTIMIZER_BLOCK,
    builtin_design,
    conference_matrix,
    decode_row,
    encode_row,
    generate_ccd,
    generate_dsd,
    load_design,
    randomize_run_order,
    read_design_csv,
    sidecar_path,
    validate_dsd,
    write_design_csv,
)


def _factors(m: int):
    return [
        FactorDef(name=f"F{i + 1}", param="", levels=(-1.0, 0.0, 1.0), interpolate=True)
        for i in range(m)
    ]


class TestConferenceMatrix:
    @pytest.mark.parametrize("order", [6, 8, 10, 12, 14])
    def test_defining_property(self, order):
        c = conference_matrix(order)
        assert np.array_equal(c @ c.T, (order - 1) * np.eye(order))
        assert not np.any(np.diag(c))

    def test_order_22_is_unsupported(self):
        with pytest.raises(UnsupportedDesignError):
            conference_matrix(22)

    def test_odd_order_is_unsupported(self):
        with pytest.raises(UnsupportedDesignError):
            conference_matrix(7)


class TestDsd:
    @pytest.mark.parametrize("m", [6, 8, 10])
    def test_structure_and_orthogonality(self, m):
        design = generate_dsd(_factors(m))
        report = validate_dsd(design)

        assert design.n_rows == 2 * m + 1
        assert report.fold_over_ok
        assert report.orthogonal
        assert report.strict_ok
        assert report.center_rows == [2 * m + 1]

    def test_categorical_factors_get_two_center_rows(self):
        categorical = [
            FactorDef(name="Padd", param="padding", factor_type="categorical",
                      levels=("V", "S"), coded=(-1.0, 1.0), values=("valid", "same")),
        ]
        design = generate_dsd(_factors(5), categorical)

        assert design.n_rows == 2 * 6 + 2
        assert set(design.column("Padd")) == {-1.0, 1.0}
        assert validate_dsd(design).fold_over_ok

    def test_needs_four_continuous_factors(self):
        with pytest.raises(ConfigurationError):
            generate_dsd(_factors(3))

    def test_22_factors_is_unsupported(self):
        with pytest.raises(UnsupportedDesignError):
            generate_dsd(_factors(22))

    def test_validate_flags_missing_center_and_broken_pair(self):
        rows = generate_dsd(_factors(6)).rows[:-1].copy()
        rows[1, 1] = rows[0, 1]
        report = validate_dsd(rows)

        assert not report.center_rows
        assert 1 in report.unpaired_rows and 2 in report.unpaired_rows
        assert not report.structural_ok
        assert any("no center row" in v for v in report.violations())


class TestCcd:
    def test_optimization_design_rows_and_stars(self):
        design = builtin_design("optimization")
        raw = pd.DataFrame(design.raw_rows(), columns=design.factor_names)

        assert design.n_rows == 26
        assert list(raw["Optimizer"]).count("Adam") == 13
        kern = sorted(set(round(v, 5) for v in raw["KernConst"]))
        drop = sorted(set(round(v, 5) for v in raw["DropD1"]))
        assert kern == [2.17157, 3, 5, 7, 7.82843]
        assert drop == [0.01716, 0.1, 0.3, 0.5, 0.58284]

    def test_cube_in_standard_order(self):
        design = generate_ccd(CcdSpec(k=2, center_points=1), OPTIMIZATION_FACTORS)
        np.testing.assert_array_equal(design.rows[:4], [[-1, -1], [1, -1], [-1, 1], [1, 1]])
        assert design.n_rows == 4 + 4 + 1

    def test_rotatable_alpha_for_three_factors(self):
        assert CcdSpec(k=3).resolved_alpha() == pytest.approx(1.68179, abs=1e-5)

    def test_face_centered(self):
        design = generate_ccd(CcdSpec(k=2, alpha_mode=AlphaMode.FACE, center_points=0), OPTIMIZATION_FACTORS)
        assert np.max(np.abs(design.rows)) == 1.0

    def test_inscribed_contracts_cube(self):
        design = generate_ccd(CcdSpec(k=2, alpha_mode=AlphaMode.INSCRIBED, center_points=0), OPTIMIZATION_FACTORS)
        assert np.max(np.abs(design.rows)) == pytest.approx(1.0)
        assert np.abs(design.rows[0, 0]) == pytest.approx(1 / np.sqrt(2))

    def test_k_mismatch(self):
        with pytest.raises(ConfigurationError):
            generate_ccd(CcdSpec(k=3), OPTIMIZATION_FACTORS)

    def test_block_factor_repeats_block(self):
        design = generate_ccd(CcdSpec(k=2, center_points=5, block_factor=OPTIMIZER_BLOCK), OPTIMIZATION_FACTORS)
        half = design.n_rows // 2
        np.testing.assert_array_equal(design.rows[:half, :2], design.rows[half:, :2])


class TestScreeningDesign:
    def test_shape_and_fold_over(self):
        design = builtin_design("screening")
        report = validate_dsd(design)

        assert design.n_rows == 34
        assert len(design.factors) == 16
        assert report.row_count_ok
        assert report.fold_over_ok
        assert report.center_rows == [33, 34]

    def test_treatment_13_decodes(self):
        design = builtin_design("screening")
        h = decode_row(design.rows[12], design.factors, design.fixed, row_index=13)

        assert h.batch_size == 240
        assert h.kernel_constraint == 3
        assert h.optimizer == "nadam"
        assert (h.drop_c1, h.drop_c2, h.drop_c3, h.drop_d1) == (0, 0.2, 0.2, 0.3)
        assert (h.maxpool_c1, h.maxpool_c2, h.maxpool_c3) == (False, False, False)
        assert (h.filter_c1, h.filter_c2, h.filter_c3) == (7, 3, 7)
        assert h.padding == "same"
        assert h.stride_c1 == 2
        assert h.activation == "tanh"

    def test_encode_inverts_decode(self):
        design = builtin_design("screening")
        h = decode_row(design.rows[4], design.factors, design.fixed)
        np.testing.assert_allclose(encode_row(h, design.factors), design.rows[4])

    def test_non_level_code_on_discrete_factor(self):
        design = builtin_design("screening")
        row = design.rows[0].copy()
        row[design.factor_names.index("FiltC1")] = 0.5
        with pytest.raises(DecodeError):
            decode_row(row, design.factors, row_index=1)

    def test_regularization_levels_are_log_scaled(self):
        design = builtin_design("regularization")
        assert design.n_rows == 13
        assert set(np.unique(design.rows)) == {-1.0, 0.0, 1.0}
        h = decode_row(design.rows[12], design.factors, design.fixed)
        assert h.l2_c1 == pytest.approx(1e-5)


class TestDesignCsv:
    def test_write_then_read_with_sidecar(self, tmp_path):
        design = randomize_run_order(builtin_design("optimization"), seed=7)
        path = write_design_csv(design, tmp_path / "opt.csv")

        assert sidecar_path(path).exists()
        loaded = read_design_csv(path)
        assert loaded.kind == DesignKind.CCD
        assert loaded.factor_names == design.factor_names
        np.testing.assert_allclose(loaded.rows, design.rows, atol=1e-9)
        np.testing.assert_array_equal(loaded.run_order, design.run_order)
        assert loaded.fixed == design.fixed

    def test_randomized_order_is_seeded(self):
        design = builtin_design("screening")
        a = randomize_run_order(design, 3).run_order
        b = randomize_run_order(design, 3).run_order
        np.testing.assert_array_equal(a, b)
        assert sorted(a) == list(range(34))

    def test_malformed_cell_names_row_and_column(self, tmp_path):
        path = write_design_csv(builtin_design("screening"), tmp_path / "screen.csv")
        frame = pd.read_csv(path, dtype=str)
        frame.loc[2, "Batch"] = "lots"
        frame.to_csv(path, index=False)

        with pytest.raises(DataError, match=r"row 3, column 'Batch'"):
            read_design_csv(path)

    def test_missing_sidecar(self, tmp_path):
        path = write_design_csv(builtin_design("regularization"), tmp_path / "reg.csv", sidecar=False)
        with pytest.raises(DataError, match="sidecar"):
            read_design_csv(path)


class TestLoadDesign:
    def test_builtin_name(self):
        assert load_design("optimization").n_rows == 26

    def test_csv_path(self, tmp_path):
        path = write_design_csv(builtin_design("regularization"), tmp_path / "reg.csv")
        assert load_design(path).name == "regularization"

    def test_unknown_reference(self):
        with pytest.raises(ConfigurationError):
            load_design("table7")
