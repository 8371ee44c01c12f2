import struct

import pytest
import torch

from onecast_lib.checkpoint import MAGIC, from_bytes, load_checkpoint, read_header, save_checkpoint, to_bytes
from onecast_lib.decomposition import SeriesWindow
from onecast_lib.errors import CheckpointError
from onecast_lib.pipeline import forecast


def test_round_trip_is_bit_exact(stage2_ckpt, tmp_path):
    path = save_checkpoint(stage2_ckpt, tmp_path / "model.ockpt")
    data = path.read_bytes()
    loaded = load_checkpoint(path)
    assert to_bytes(loaded) == data
    for name, tensor in stage2_ckpt.model.state_dict().items():
        assert torch.equal(tensor, loaded.model.state_dict()[name]), name


def test_loaded_checkpoint_forecasts_identically(stage2_ckpt, toy_windows):
    loaded = from_bytes(to_bytes(stage2_ckpt))
    window = SeriesWindow(toy_windows.test.history[1], "toy")
    assert torch.equal(forecast(window, stage2_ckpt), forecast(window, loaded))


def test_header_contents(stage1_ckpt, stage2_ckpt):
    header = read_header(to_bytes(stage1_ckpt))
    assert header["stages"] == ["joint"]
    assert header["domains"] == {"toy": 2}
    assert header["config"]["train"]["horizon"] == 16
    assert len(header["basis"]["frequencies"]) == 2
    assert read_header(to_bytes(stage2_ckpt))["stages"] == ["joint", "diffusion"]


def test_stage1_checkpoint_loads_without_predictor(stage1_ckpt):
    loaded = from_bytes(to_bytes(stage1_ckpt))
    assert loaded.model.predictor is None
    assert loaded.metadata == stage1_ckpt.metadata


def test_bad_magic(stage1_ckpt):
    data = to_bytes(stage1_ckpt)
    with pytest.raises(CheckpointError):
        from_bytes(b"NOTCKP" + data[len(MAGIC):])


def test_unsupported_version(stage1_ckpt):
    data = bytearray(to_bytes(stage1_ckpt))
    struct.pack_into("<I", data, len(MAGIC), 99)
    with pytest.raises(CheckpointError, match="schema 99"):
        from_bytes(bytes(data))


@pytest.mark.parametrize("cut", [3, 12, 200, -5])
def test_truncated_file(stage1_ckpt, cut):
    data = to_bytes(stage1_ckpt)
    with pytest.raises(CheckpointError):
        from_bytes(data[:cut])


def test_trailing_bytes(stage1_ckpt):
    with pytest.raises(CheckpointError):
        from_bytes(to_bytes(stage1_ckpt) + b"\x00")


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.ockpt")
