"""Ablation grid: config parsing, orchestration, determinism, report files."""

from dataclasses import replace

import numpy as np
import pytest

from cropseg.evaluation import EvalSummary
from cropseg.experiment import (CellResult, ConfigError, ExperimentConfig,
                                ExperimentReport, _cell_row, _median_rows,
                                build_experiment_config, default_crops,
                                emit_report, read_config_file, run_ablation,
                                validate_config)
from cropseg.losses import LossSpec
from cropseg.report import (REPORT_COLUMNS, curve_svg, format_metric,
                            parse_report_csv, write_curve_csv, write_report_csv)
from cropseg.synthdata import CropSpec, GenParams

MICRO = {
    "rows": "32", "cols": "32", "radius_min": "2.0", "radius_max": "3.2",
    "band_lo": "0.30", "band_hi": "0.70", "vessels_min": "0", "vessels_max": "2",
    "patients": "5", "scans": "6",
    "split_train": "0.6", "split_val": "0.2", "split_test": "0.2",
    "crops": "32:0,16:8", "epochs": "3", "batch_size": "2",
}


class TestConfigParsing:
    def test_empty_overrides_give_defaults(self):
        cfg = build_experiment_config({})
        assert cfg.patients == 24 and cfg.scans == 32
        assert cfg.crops == (CropSpec(64, 0), CropSpec(40, 12), CropSpec(24, 20))
        assert tuple(l.kind for l in cfg.losses) == ("bce", "tversky")
        assert cfg.seeds == (0,) and cfg.epochs == 40
        assert not cfg.full_arch and not cfg.postprocess

    def test_default_crops_match_shipped_defaults(self):
        assert default_crops(GenParams()) == ExperimentConfig().crops

    def test_smaller_canvas_recomputes_default_crops(self):
        cfg = build_experiment_config({"rows": "32", "radius_min": "2.0",
                                       "radius_max": "3.2"})
        assert cfg.crops == (CropSpec(32, 0), CropSpec(24, 4), CropSpec(16, 8))

    def test_explicit_crops_and_centered_shorthand(self):
        cfg = build_experiment_config(dict(MICRO, crops="32:0,16"))
        # Bare size centers on the band: band center 16, kept 16 -> offset 8.
        assert cfg.crops == (CropSpec(32, 0), CropSpec(16, 8))

    def test_unknown_key_is_named(self):
        with pytest.raises(ConfigError, match="epochz"):
            build_experiment_config({"epochz": "4"})

    def test_bad_value_names_its_key(self):
        with pytest.raises(ConfigError, match="epochs"):
            build_experiment_config({"epochs": "many"})

    def test_booleans_accept_words_and_digits(self):
        assert build_experiment_config({"postprocess": "yes"}).postprocess
        assert not build_experiment_config({"postprocess": "0"}).postprocess
        with pytest.raises(ConfigError, match="boolean"):
            build_experiment_config({"full_arch": "maybe"})

    def test_beta_reaches_the_tversky_loss(self):
        cfg = build_experiment_config({"beta": "0.7", "losses": "tversky"})
        assert cfg.losses == (LossSpec("tversky", beta=0.7, epsilon=1e-6),)

    def test_seed_list(self):
        assert build_experiment_config({"seeds": "3,1,4"}).seeds == (3, 1, 4)

    def test_crop_must_fit_pooling(self):
        with pytest.raises(ConfigError, match="20@0"):
            build_experiment_config({"crops": "20:0"})

    def test_crop_must_fit_canvas(self):
        with pytest.raises(ConfigError, match="exceeds"):
            build_experiment_config({"crops": "40:32"})

    def test_generator_errors_surface_as_config_errors(self):
        with pytest.raises(ConfigError, match="band"):
            build_experiment_config({"band_lo": "0.9", "band_hi": "0.2"})


class TestReadConfigFile:
    def test_comments_and_blanks_ignored(self, tmp_path):
        p = tmp_path / "exp.cfg"
        p.write_text("# a comment\n\nepochs = 7  # trailing\nseeds=1,2\n")
        assert read_config_file(p) == {"epochs": "7", "seeds": "1,2"}

    def test_malformed_line_reports_position(self, tmp_path):
        p = tmp_path / "exp.cfg"
        p.write_text("epochs = 7\njust words\n")
        with pytest.raises(ConfigError, match=":2"):
            read_config_file(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            read_config_file(tmp_path / "nope.cfg")


class TestValidate:
    def _base(self, **kw):
        return replace(build_experiment_config(dict(MICRO)), **kw)

    def test_patient_and_scan_floors(self):
        with pytest.raises(ConfigError, match="3 patients"):
            validate_config(self._base(patients=2))
        with pytest.raises(ConfigError, match="cover"):
            validate_config(self._base(scans=4))

    def test_split_must_sum_to_one(self):
        with pytest.raises(ConfigError, match="sum to 1"):
            validate_config(self._base(split=(0.5, 0.2, 0.2)))

    def test_duplicate_seeds_rejected(self):
        with pytest.raises(ConfigError, match="unique"):
            validate_config(self._base(seeds=(1, 1)))

    def test_workers_floor(self):
        with pytest.raises(ConfigError, match="workers"):
            validate_config(self._base(workers=0))


@pytest.fixture(scope="module")
def micro_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ablation")
    cfg = build_experiment_config(dict(MICRO))
    report = run_ablation(cfg, out)
    return cfg, report, out


class TestRunAblation:
    def test_grid_shape_and_row_order(self, micro_run):
        cfg, report, _ = micro_run
        assert len(report.cells) == 4
        # Loss-major, then crop, then seed.
        assert [(c.loss.kind, c.crop.kept) for c in report.cells] == \
            [("bce", 32), ("bce", 16), ("tversky", 32), ("tversky", 16)]
        assert all(not c.failed for c in report.cells)
        assert [(r[0], r[1]) for r in report.rows] == \
            [(32, "bce"), (16, "bce"), (32, "tversky"), (16, "tversky")]

    def test_metrics_are_rounded_copies_of_summaries(self, micro_run):
        _, report, _ = micro_run
        for cell, row in zip(report.cells, report.rows):
            assert row[7] == pytest.approx(cell.summary.dice, abs=5e-5)
            assert 0.0 <= row[7] <= 1.0

    def test_single_seed_medians_equal_the_rows(self, micro_run):
        _, report, _ = micro_run
        assert len(report.median_rows) == 4
        for row in report.rows:
            med = next(m for m in report.median_rows if m[:2] == row[:2])
            for a, b in zip(row[2:], med[2:]):
                assert a == b or (np.isnan(a) and np.isnan(b))

    def test_accessors(self, micro_run):
        _, report, _ = micro_run
        row = report.row_for("bce", 16, 0)
        assert set(row) == set(REPORT_COLUMNS)
        assert report.median_for("bce", 16)["Dice"] == row["Dice"]
        with pytest.raises(KeyError):
            report.row_for("bce", 48, 0)

    def test_report_csv_header_and_round_trip(self, micro_run):
        _, report, out = micro_run
        text = (out / "report.csv").read_text()
        assert text.splitlines()[0] == "ir,loss,sensitivity,specificity,precision,AUC,aPr,Dice,eDist"
        parsed = parse_report_csv(out / "report.csv")
        assert len(parsed) == 4
        for rec, row in zip(parsed, report.rows):
            assert rec["ir"] == row[0] and rec["loss"] == row[1]
            for name, val in zip(REPORT_COLUMNS[2:], row[2:]):
                if np.isnan(val):
                    assert np.isnan(rec[name])
                else:
                    assert abs(rec[name] - val) <= 1e-6 * max(1.0, abs(val))

    def test_median_csv_written(self, micro_run):
        _, _, out = micro_run
        assert len(parse_report_csv(out / "report_medians.csv")) == 4

    def test_cell_artifacts(self, micro_run):
        _, report, out = micro_run
        for cell in report.cells:
            cdir = out / "cells" / cell.tag
            for f in ("pr_curve.csv", "pr_curve.svg", "roc_curve.csv", "roc_curve.svg"):
                assert (cdir / f).is_file(), f"{cell.tag}/{f}"
            overlays = sorted(cdir.glob("overlay_*.ppm"))
            assert len(overlays) == len(cell.overlays) > 0

    def test_metadata_lists_settings_and_truncation(self, micro_run):
        cfg, report, out = micro_run
        meta = (out / "run_metadata.txt").read_text()
        assert "epochs: 3" in meta
        assert "crops: 32@0, 16@8" in meta
        assert "seeds: 0" in meta
        assert "failed_cells: none" in meta
        assert "postprocess_largest_component: off" in meta
        for cell in report.cells:
            assert f"truncated[{cell.tag}]:" in meta

    def test_rerun_reproduces_rows_and_bytes(self, micro_run, tmp_path):
        cfg, report, out = micro_run
        again = run_ablation(cfg)
        assert again.rows == report.rows
        assert again.median_rows == report.median_rows
        emit_report(again, tmp_path)
        assert (tmp_path / "report.csv").read_bytes() == (out / "report.csv").read_bytes()
        assert (tmp_path / "run_metadata.txt").read_bytes() == \
            (out / "run_metadata.txt").read_bytes()

    def test_worker_pool_matches_serial(self, micro_run):
        cfg, report, _ = micro_run
        pooled = run_ablation(replace(cfg, workers=2))
        assert pooled.rows == report.rows

    def test_unwritable_output_fails_before_training(self, micro_run, tmp_path):
        cfg, _, _ = micro_run
        target = tmp_path / "report.d"
        target.write_text("a file, not a directory")
        with pytest.raises(OSError):
            run_ablation(cfg, target)


class TestDegenerateBand:
    def test_crop_outside_band_completes_with_nan_metrics(self, tmp_path):
        cfg = build_experiment_config(dict(
            MICRO, crops="8:0", losses="bce", epochs="2",
            patients="4", scans="5",
            split_train="0.5", split_val="0.25", split_test="0.25"))
        report = run_ablation(cfg, tmp_path)
        (cell,) = report.cells
        assert not cell.failed
        # Every sample loses its whole disc to the crop.
        assert sum(cell.truncated) == 5
        (row,) = report.rows
        rec = dict(zip(REPORT_COLUMNS, row))
        for name in ("sensitivity", "AUC", "aPr", "eDist"):
            assert np.isnan(rec[name]), name
        text = (tmp_path / "report.csv").read_text()
        assert ",nan," in text
        meta = (tmp_path / "run_metadata.txt").read_text()
        assert f"truncated[{cell.tag}]:" in meta


class TestFailedCells:
    def test_failed_cell_emits_nan_row_and_metadata_line(self, tmp_path):
        cfg = build_experiment_config(dict(MICRO, crops="32:0", losses="bce",
                                           seeds="0,1"))
        crop, loss = cfg.crops[0], cfg.losses[0]
        good = CellResult(
            seed=0, crop=crop, loss=loss, best_epoch=1,
            summary=EvalSummary(sensitivity=0.9, specificity=0.99, precision=0.8,
                                auc=0.95, apr=0.85, dice=0.84, edist=1.25,
                                cutoff=0.4))
        bad = CellResult(seed=1, crop=crop, loss=loss, failed=True,
                         error="non-finite loss at epoch 2, batch 1")
        cells = [good, bad]
        rows = [_cell_row(c) for c in cells]
        assert rows[1][2:] == (float("nan"),) * 7 or all(np.isnan(v) for v in rows[1][2:])
        medians = _median_rows(cfg, cells, rows)
        # Medians skip the failed cell, so they equal the good row.
        assert medians[0][2:] == rows[0][2:]
        report = ExperimentReport(config=cfg, cells=cells, rows=rows,
                                  median_rows=medians)
        emit_report(report, tmp_path)
        lines = (tmp_path / "report.csv").read_text().splitlines()
        assert lines[2].startswith("32,bce,nan,nan,")
        meta = (tmp_path / "run_metadata.txt").read_text()
        assert "failed[ir032-bce-s1]: non-finite loss at epoch 2, batch 1" in meta

    def test_all_failed_group_medians_are_nan(self):
        cfg = build_experiment_config(dict(MICRO, crops="32:0", losses="bce"))
        bad = CellResult(seed=0, crop=cfg.crops[0], loss=cfg.losses[0],
                         failed=True, error="boom")
        medians = _median_rows(cfg, [bad], [_cell_row(bad)])
        assert all(np.isnan(v) for v in medians[0][2:])


class TestReportFiles:
    def test_format_metric(self):
        assert format_metric(0.123456) == "0.1235"
        assert format_metric(float("nan")) == "nan"
        assert format_metric(float("inf")) == "nan"

    def test_parse_rejects_bad_header_and_rows(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("wrong,header\n")
        with pytest.raises(ValueError, match="header"):
            parse_report_csv(p)
        write_report_csv(p, [(64, "bce", 1, 1, 1, 1, 1, 1, 0)])
        p.write_text(p.read_text() + "64,bce,0.5\n")
        with pytest.raises(ValueError, match="malformed"):
            parse_report_csv(p)

    def test_curve_csv_alignment_checked(self, tmp_path):
        with pytest.raises(ValueError, match="align"):
            write_curve_csv(tmp_path / "c.csv", ("a", "b"), ([1.0, 2.0], [1.0]))

    def test_curve_svg_is_deterministic_and_self_contained(self):
        xs = np.array([0.0, 0.5, 1.0])
        ys = np.array([0.2, 0.8, 1.0])
        a = curve_svg([("run", xs, ys)], "t", "x", "y")
        b = curve_svg([("run", xs, ys)], "t", "x", "y")
        assert a == b
        assert a.startswith("<svg") and a.endswith("</svg>")
        assert a.count("<polyline") == 1
