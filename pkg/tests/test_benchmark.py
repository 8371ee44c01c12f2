import json

import pandas as pd
import pytest
import torch

from onecast_lib.benchmark import (
    future_trend_reconstruction,
    plot_forecast_svg,
    residual_rate,
    run_evaluation,
    write_report_csv,
    write_report_json,
)
from onecast_lib.errors import ConfigError, DatasetError


def test_rows_per_horizon(stage2_ckpt, toy_windows):
    report = run_evaluation(stage2_ckpt, toy_windows.test, "toy", horizons=[8, 16], show_progress=False)
    assert [(r.horizon, r.method) for r in report.rows] == [
        (8, "onecast"), (8, "seasonal_only"), (8, "repeat_last"),
        (16, "onecast"), (16, "seasonal_only"), (16, "repeat_last"),
    ]
    onecast = report.rows[0]
    assert onecast.windows == len(toy_windows.test)
    assert 0.0 <= onecast.token_accuracy <= 1.0
    assert 0.0 <= onecast.rcr <= 1.0
    assert len(onecast.amad_per_channel) == 2
    assert report.stages == ["joint", "diffusion"]


def test_stage1_checkpoint_scores_baselines_only(stage1_ckpt, toy_windows):
    report = run_evaluation(stage1_ckpt, toy_windows.test, "toy", horizons=[16], show_progress=False)
    assert [r.method for r in report.rows] == ["seasonal_only", "repeat_last"]
    assert report.inference_steps is None


def test_oracle_rows_are_exact(stage2_ckpt, toy_windows):
    report = run_evaluation(stage2_ckpt, toy_windows.test, "toy", horizons=[16], oracle=True, show_progress=False)
    row = report.rows[0]
    assert (row.mse, row.mae, row.amad) == (0.0, 0.0, 0.0)
    assert row.reconstruction_rate is None


def test_evaluation_errors(stage2_ckpt, toy_windows):
    with pytest.raises(ConfigError):
        run_evaluation(stage2_ckpt, toy_windows.test, "toy", horizons=[32], show_progress=False)
    with pytest.raises(DatasetError):
        run_evaluation(stage2_ckpt, toy_windows.test.subset(torch.arange(0)), "toy", show_progress=False)


def test_reconstruction_and_residual_rate(stage1_ckpt, toy_windows):
    errors = future_trend_reconstruction(stage1_ckpt.model, toy_windows.test, "toy")
    assert errors.shape == toy_windows.test.future.shape
    assert bool((errors >= 0).all())
    assert 0.0 <= residual_rate(stage1_ckpt.model, toy_windows.test.history) <= 1.0


def test_report_writers(stage1_ckpt, toy_windows, tmp_path):
    report = run_evaluation(stage1_ckpt, toy_windows.test, "toy", horizons=[8], show_progress=False)
    json_path = write_report_json(report, tmp_path / "r" / "eval.json")
    csv_path = write_report_csv(report, tmp_path / "r" / "eval.csv")
    assert json.loads(json_path.read_text())["domain_id"] == "toy"
    table = pd.read_csv(csv_path)
    assert len(table) == 2
    assert "amad_per_channel" not in table.columns


def test_plot_is_svg(toy_windows, tmp_path):
    history, future = toy_windows.test.history[0], toy_windows.test.future[0]
    path = plot_forecast_svg(history, future, future + 0.1, tmp_path / "plot.svg", title="toy")
    assert "<svg" in path.read_text()
