import pytest
import torch

from onecast_lib.config import DatasetSpec
from onecast_lib.dataset import domain_windows, load_csv, make_windows, sliding_pairs, write_csv
from onecast_lib.errors import DatasetError, ParseError


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_plain_numeric_csv(tmp_path):
    path = write(tmp_path, "1,2\n3,4\n5,6\n7,8\n")
    values = load_csv(path)
    assert values.dtype == torch.float64
    assert values.tolist() == [[1, 2], [3, 4], [5, 6], [7, 8]]


def test_header_and_timestamp_column_are_dropped(tmp_path):
    path = write(tmp_path, "date,a,b\n2020-01-01 00:00:00,1,2\n2020-01-01 01:00:00,3,4\n")
    assert load_csv(path).tolist() == [[1, 2], [3, 4]]


def test_blank_lines_are_ignored(tmp_path):
    path = write(tmp_path, "a\n1\n\n2\n")
    assert load_csv(DatasetSpec(path=str(path), domain_id="x")).tolist() == [[1], [2]]


def test_ragged_row_reports_line(tmp_path):
    path = write(tmp_path, "1,2\n3,4\n5\n")
    with pytest.raises(ParseError, match=r"data.csv:3"):
        load_csv(path)


def test_non_numeric_cell_reports_line_and_column(tmp_path):
    path = write(tmp_path, "a,b\n1,2\n3,oops\n")
    with pytest.raises(ParseError, match=r"data.csv:3.*'oops'.*column 2"):
        load_csv(path)


def test_empty_and_missing_files(tmp_path):
    with pytest.raises(DatasetError):
        load_csv(write(tmp_path, ""))
    with pytest.raises(DatasetError):
        load_csv(write(tmp_path, "a,b\n", name="header_only.csv"))
    with pytest.raises(DatasetError):
        load_csv(tmp_path / "missing.csv")


def test_write_csv_keeps_full_precision(tmp_path):
    values = torch.tensor([[0.1234567890123456, -1e-300], [1.0 / 3.0, 2.0 ** 0.5]])
    path = write_csv(values, tmp_path / "out.csv")
    assert path.read_text().splitlines()[0] == "ch0,ch1"
    assert torch.equal(load_csv(path), values)


def test_sliding_pairs_counts_and_contents():
    series = torch.arange(10.0).reshape(10, 1)
    pairs = sliding_pairs(series, 4, 2)
    assert len(pairs) == 5
    assert pairs.history[0, :, 0].tolist() == [0, 1, 2, 3]
    assert pairs.future[0, :, 0].tolist() == [4, 5]
    assert pairs.starts.tolist() == [0, 1, 2, 3, 4]


def test_stride_equal_to_window_gives_disjoint_pairs():
    series = torch.arange(12.0).reshape(12, 1)
    pairs = sliding_pairs(series, 4, 2, stride=6)
    assert len(pairs) == 2
    assert pairs.history[1, 0, 0] == 6.0


def test_too_short_series():
    assert len(sliding_pairs(torch.zeros(5, 2), 4, 2)) == 0
    with pytest.raises(DatasetError):
        make_windows(torch.zeros(5, 2), 4, 2)


def test_splits_never_cross_boundaries():
    series = torch.arange(100.0).reshape(100, 1)
    splits = make_windows(series, 8, 4, fractions=(0.7, 0.1, 0.2))
    assert len(splits["train"]) == 70 - 12 + 1
    assert len(splits["val"]) == 0
    assert len(splits["test"]) == 20 - 12 + 1
    assert float(splits["train"].future[-1].max()) == 69.0
    assert float(splits["test"].history[0].min()) == 80.0
    assert splits["test"].starts[0] == 80


def test_no_fractions_puts_everything_in_train():
    splits = make_windows(torch.zeros(10, 1), 4, 2)
    assert len(splits["train"]) == 5
    assert len(splits["val"]) == len(splits["test"]) == 0


def test_domain_windows(toy_windows):
    assert toy_windows.channels == 2
    assert toy_windows.steps_per_day == 24
    assert len(toy_windows.split("train")) > len(toy_windows.split("test")) > 0
    with pytest.raises(DatasetError):
        toy_windows.split("holdout")


def test_domain_windows_needs_training_pairs():
    spec = DatasetSpec(path="unused", domain_id="x", train_fraction=0.1, val_fraction=0.1, test_fraction=0.8)
    with pytest.raises(DatasetError):
        domain_windows(spec, 16, 16, series=torch.zeros(100, 1))
