import pytest
import torch

from onecast_lib.data_generation import (
    LevelShiftSpec,
    SinusoidRampSpec,
    generate_level_shift,
    generate_pure_sinusoid,
    generate_sinusoid_ramp,
    series_values,
    token_copy_pairs,
)
from onecast_lib.dataset import load_csv
from onecast_lib.errors import PreconditionError
from onecast_lib.generate_csvs import write_corpora


def test_sinusoid_ramp_is_seeded():
    a = series_values(generate_sinusoid_ramp(SinusoidRampSpec(length=200, seed=3)))
    b = series_values(generate_sinusoid_ramp(SinusoidRampSpec(length=200, seed=3)))
    c = series_values(generate_sinusoid_ramp(SinusoidRampSpec(length=200, seed=4)))
    assert a.shape == (200, 2)
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_noise_free_ramp_follows_slope():
    values = series_values(generate_sinusoid_ramp(SinusoidRampSpec(length=48, noise=0.0, amplitude=0.0)))
    steps = values[1:] - values[:-1]
    assert torch.allclose(steps[:, 0], torch.full((47,), 1e-3))
    assert torch.allclose(steps[:, 1], torch.full((47,), 2e-3))


def test_pure_sinusoid_repeats_each_period():
    values = series_values(generate_pure_sinusoid(length=96, period=24))
    assert torch.allclose(values[:24], values[24:48], atol=1e-12)


def test_level_shift_jumps_by_drift_without_noise():
    values = series_values(generate_level_shift(LevelShiftSpec(length=960, shift_scale=0.0, noise=0.0)))
    assert torch.allclose(values[96] - values[0], torch.full((2,), 0.5))
    assert torch.allclose(values[960 - 1] - values[960 - 1 - 96], torch.full((2,), 0.5))


def test_generated_csv_loads_back(tmp_path):
    path = tmp_path / "ramp.csv"
    df = generate_sinusoid_ramp(SinusoidRampSpec(length=50), csv_path=str(path))
    assert list(df.columns) == ["date", "ch0", "ch1"]
    assert torch.equal(load_csv(path), series_values(df))


def test_token_copy_pairs():
    history, future = token_copy_pairs(5, 6, 4, 10, seed=1)
    assert history.shape == (5, 6)
    assert torch.equal(future, history[:, :4])
    assert int(history.max()) < 10
    with pytest.raises(PreconditionError):
        token_copy_pairs(5, 2, 4, 10)


def test_write_corpora(tmp_path):
    written = write_corpora(tmp_path / "synthetic", seeds=range(2), length=100)
    assert [p.name for p in written["sinusoid_ramp"]] == ["sinusoid_ramp_seed0.csv", "sinusoid_ramp_seed1.csv"]
    assert len(written["level_shift"]) == 2
    assert (tmp_path / "synthetic" / "run.toml").exists()
