import json

import pandas as pd
import pytest
import torch

from onecast_lib import cli
from onecast_lib.checkpoint import save_checkpoint
from onecast_lib.cli import main
from onecast_lib.dataset import domain_windows


@pytest.fixture
def stage2_file(stage2_ckpt, tmp_path):
    return save_checkpoint(stage2_ckpt, tmp_path / "stage2.ockpt")


def test_budget_prints_every_method(capsys):
    assert main(["budget", "--length", "96", "--channels", "11"]) == 0
    lines = capsys.readouterr().out.split("\n")
    assert lines[:4] == ["patching 66", "per_value 1056", "text 3168", "onecast 443"]


def test_budget_single_method(capsys):
    assert main(["budget", "--method", "onecast", "--channels", "2000"]) == 0
    assert capsys.readouterr().out.strip() == "onecast 443"


def test_decompose_then_verify(toy_csv, tmp_path, capsys):
    out = tmp_path / "dec"
    assert main(["decompose", "--input", str(toy_csv), "--output-dir", str(out), "--window", "5"]) == 0
    for name in ("trend.csv", "season.csv", "stats.csv", "rcr.txt"):
        assert (out / name).exists()
    assert list(pd.read_csv(out / "stats.csv").columns) == ["mu", "sigma"]
    rcr = float((out / "rcr.txt").read_text().split()[1])
    assert 0.0 <= rcr <= 1.0
    assert main(["verify", "--input", str(toy_csv), "--decomposed", str(out)]) == 0
    assert "ok" in capsys.readouterr().out


def test_verify_detects_tampering(toy_csv, tmp_path):
    out = tmp_path / "dec"
    main(["decompose", "--input", str(toy_csv), "--output-dir", str(out)])
    season = pd.read_csv(out / "season.csv")
    season.iloc[10, 0] += 1e-6
    season.to_csv(out / "season.csv", index=False, float_format="%.17g")
    assert main(["verify", "--input", str(toy_csv), "--decomposed", str(out)]) == 4


def test_decompose_constant_series(tmp_path, capsys):
    data = tmp_path / "flat.csv"
    data.write_text("x\n" + "5\n" * 50)
    assert main(["decompose", "--input", str(data), "--output-dir", str(tmp_path / "dec")]) == 0
    assert capsys.readouterr().out.strip() == "rcr 0"
    trend = pd.read_csv(tmp_path / "dec" / "trend.csv")
    assert (trend["ch0"] == 0.0).all()


def test_bad_config_exits_before_writing(tmp_path):
    config = tmp_path / "run.toml"
    config.write_text("[train]\nhistory_length = 20\n")
    out = tmp_path / "out"
    code = main(["train", "--config", str(config), "--input", "unused.csv", "--output-dir", str(out)])
    assert code == 2
    assert not out.exists()


def test_missing_dataset_exits_with_data_code(tmp_path):
    assert main(["decompose", "--input", str(tmp_path / "nope.csv"), "--output-dir", str(tmp_path)]) == 3


def test_forecast_writes_csv_and_trace(stage2_file, toy_csv, tmp_path):
    out = tmp_path / "pred.csv"
    trace = tmp_path / "trace.jsonl"
    code = main(["forecast", "--checkpoint", str(stage2_file), "--input", str(toy_csv), "--output", str(out),
                 "--steps", "2", "--trace", str(trace)])
    assert code == 0
    frame = pd.read_csv(out)
    assert frame.shape == (16, 2)
    record = json.loads(trace.read_text().splitlines()[0])
    assert len(record["rounds"]) == 2


def test_forecast_horizon_mismatch(stage2_file, toy_csv, tmp_path):
    out = tmp_path / "pred.csv"
    code = main(["forecast", "--checkpoint", str(stage2_file), "--input", str(toy_csv), "--output", str(out),
                 "--horizon", "24"])
    assert code == 2
    assert not out.exists()


def test_eval_oracle_scores_zero(stage2_file, tmp_path):
    out = tmp_path / "eval"
    code = main(["eval", "--checkpoint", str(stage2_file), "--horizons", "8", "16", "--oracle",
                 "--output-dir", str(out)])
    assert code == 0
    table = pd.read_csv(out / "eval.csv")
    onecast = table[table["method"] == "onecast"]
    assert list(onecast["horizon"]) == [8, 16]
    assert (onecast["mse"] == 0).all() and (onecast["mae"] == 0).all() and (onecast["amad"] == 0).all()
    assert set(table["method"]) == {"onecast", "seasonal_only", "repeat_last"}
    report = json.loads((out / "eval_toy.json").read_text())
    assert report["stages"] == ["joint", "diffusion"]


def test_eval_rejects_long_horizon(stage2_file, tmp_path):
    code = main(["eval", "--checkpoint", str(stage2_file), "--horizons", "24", "--output-dir", str(tmp_path / "e")])
    assert code == 2


def test_selfcheck_fault_injection_fails(capsys):
    assert main(["selfcheck", "--inject-fault", "token_budget"]) == 4
    assert "fault injected" in capsys.readouterr().out


def test_eval_plot_uses_the_trained_stride(stage2_file, stage2_ckpt, tmp_path, monkeypatch):
    plotted = {}

    def capture(history, truth, prediction, path, title=""):
        plotted["truth"] = truth

    monkeypatch.setattr(cli, "plot_forecast_svg", capture)
    assert main(["eval", "--checkpoint", str(stage2_file), "--horizons", "16", "--output-dir", str(tmp_path / "e"),
                 "--plot", str(tmp_path / "e" / "plot.svg")]) == 0
    spec = stage2_ckpt.config.datasets[0]
    expected = domain_windows(spec, 16, 16, stage2_ckpt.config.train.stride).test.future[-1]
    assert torch.equal(plotted["truth"], expected)


def test_output_dir_from_environment(toy_csv, tmp_path, monkeypatch):
    monkeypatch.setenv("ONECAST_OUTPUT_DIR", str(tmp_path / "from_env"))
    assert main(["decompose", "--input", str(toy_csv)]) == 0
    assert (tmp_path / "from_env" / "trend.csv").exists()


def test_train_twice_writes_identical_checkpoints(toy_csv, tmp_path, monkeypatch):
    monkeypatch.delenv("ONECAST_OUTPUT_DIR", raising=False)
    config = tmp_path / "run.toml"
    config.write_text(
        f'[[datasets]]\npath = "{toy_csv.as_posix()}"\ndomain_id = "toy"\n\n'
        "[model]\nmoving_average_window = 5\nbasis_periods = [24.0, 12.0]\nseasonal_hidden = 4\n"
        "codebook_size = 6\ncode_dim = 3\npatch_length = 8\nwave_length = 4\nconv_width = 3\nconv_blocks = 1\n"
        "transformer_hidden = 8\ntransformer_layers = 1\ntransformer_heads = 2\ntransformer_ff = 8\n\n"
        "[train]\nepochs = 1\nhistory_length = 16\nhorizon = 16\nstride = 4\nbatch_size = 4\nseed = 3\n"
    )
    out = tmp_path / "run"
    args = ["--quiet", "train", "--config", str(config), "--output-dir", str(out)]
    assert main(args) == 0
    first = {name: (out / name).read_bytes() for name in ("stage1.ockpt", "stage2.ockpt")}
    assert main(args) == 0
    for name, data in first.items():
        assert (out / name).read_bytes() == data
