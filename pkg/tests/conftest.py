import pytest
import torch

from onecast_lib.config import DatasetSpec, RunConfig, TrainConfig
from onecast_lib.data_generation import SinusoidRampSpec, generate_sinusoid_ramp, series_values
from onecast_lib.dataset import domain_windows
from onecast_lib.pipeline import train_stage1, train_stage2
from onecast_lib.selfcheck import tiny_model, tiny_model_config


@pytest.fixture
def model():
    return tiny_model(seed=0)


@pytest.fixture(scope="session")
def toy_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "toy.csv"
    generate_sinusoid_ramp(SinusoidRampSpec(length=400, seed=0), csv_path=str(path))
    return path


@pytest.fixture(scope="session")
def toy_series():
    return series_values(generate_sinusoid_ramp(SinusoidRampSpec(length=400, seed=0)))


@pytest.fixture(scope="session")
def run_cfg(toy_csv, tmp_path_factory):
    return RunConfig(
        datasets=[DatasetSpec(path=str(toy_csv), domain_id="toy")],
        model=tiny_model_config(),
        train=TrainConfig(epochs=2, history_length=16, horizon=16, stride=4, batch_size=4, seed=7),
        output_dir=str(tmp_path_factory.mktemp("runs")),
    )


@pytest.fixture(scope="session")
def toy_windows(run_cfg, toy_series):
    return domain_windows(run_cfg.datasets[0], 16, 16, stride=4, series=toy_series)


@pytest.fixture(scope="session")
def stage1_ckpt(toy_windows, run_cfg):
    return train_stage1([toy_windows], run_cfg, show_progress=False)


@pytest.fixture(scope="session")
def stage2_ckpt(toy_windows, stage1_ckpt, run_cfg):
    return train_stage2([toy_windows], stage1_ckpt, run_cfg, show_progress=False)


@pytest.fixture
def pair_batch():
    g = torch.Generator().manual_seed(0)
    return torch.randn(3, 16, 2, generator=g), torch.randn(3, 16, 2, generator=g)
