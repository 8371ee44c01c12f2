"""
Basic example of using the OneCast library.

Generates the sinusoid + ramp corpus, trains both stages at a small scale,
forecasts the last test window and prints its error next to the
repeat-last-value baseline.
"""

import logging
import sys
import os

# Add the repository root to Python path
REPO_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.append(REPO_ROOT)

from onecast_lib import RunConfig, SeriesWindow, forecast, train_stage1, train_stage2
from onecast_lib.config import DatasetSpec, ModelConfig, TrainConfig
from onecast_lib.data_generation import SinusoidRampSpec, generate_sinusoid_ramp, series_values
from onecast_lib.dataset import domain_windows
from onecast_lib.evaluator import mse_mae
from onecast_lib.pipeline import repeat_last_baseline

logging.basicConfig(level=logging.INFO)


def main():
    series = series_values(generate_sinusoid_ramp(SinusoidRampSpec(length=2000, seed=0)))
    cfg = RunConfig(
        datasets=[DatasetSpec(path="in-memory", domain_id="synthetic")],
        model=ModelConfig(codebook_size=32, code_dim=16, conv_width=16, transformer_hidden=32),
        train=TrainConfig(epochs=3, history_length=96, horizon=96, stride=4),
    )
    windows = domain_windows(cfg.datasets[0], cfg.train.history_length, cfg.train.horizon, cfg.train.stride, series)

    stage1 = train_stage1([windows], cfg)
    stage2 = train_stage2([windows], stage1, cfg)

    history, truth = windows.test.history[-1], windows.test.future[-1]
    prediction = forecast(SeriesWindow(history, "synthetic"), stage2)
    baseline = repeat_last_baseline(history, cfg.train.horizon)
    print(f"OneCast MSE:     {mse_mae(truth, prediction)[0]:.4f}")
    print(f"Repeat-last MSE: {mse_mae(truth, baseline)[0]:.4f}")


if __name__ == "__main__":
    main()
