import pytest
import torch

from onecast_lib.errors import ConfigError, DimensionError, PreconditionError, UndefinedRateError
from onecast_lib.evaluator import (
    EvalReport,
    HorizonReport,
    amad,
    amad_per_channel,
    mse_mae,
    reconstruction_rate,
    token_accuracy,
    token_budget,
)
from onecast_lib.selfcheck import TOKEN_BUDGET_TABLE


def test_mse_mae_example():
    y = torch.tensor([[1.0], [2.0], [3.0]])
    y_hat = torch.tensor([[1.0], [3.0], [1.0]])
    mse, mae = mse_mae(y, y_hat)
    assert mse == pytest.approx(5.0 / 3.0)
    assert mae == pytest.approx(1.0)
    assert mse_mae(y, y) == (0.0, 0.0)


def test_mse_mae_scaling():
    g = torch.Generator().manual_seed(0)
    y, y_hat = torch.randn(4, 8, 2, generator=g), torch.randn(4, 8, 2, generator=g)
    mse, mae = mse_mae(y, y_hat)
    mse2, mae2 = mse_mae(3.0 * y, 3.0 * y_hat)
    assert mse2 == pytest.approx(9.0 * mse)
    assert mae2 == pytest.approx(3.0 * mae)


def test_mse_mae_errors():
    with pytest.raises(DimensionError):
        mse_mae(torch.zeros(2, 1), torch.zeros(3, 1))
    with pytest.raises(PreconditionError):
        mse_mae(torch.zeros(0, 1), torch.zeros(0, 1))


def test_amad_measures_level_not_shape():
    truth = torch.tensor([[0.0], [2.0]])
    flipped = torch.tensor([[2.0], [0.0]])
    shifted = truth + 0.5
    assert amad([truth], [flipped]) == 0.0
    assert amad([truth, truth], [shifted, flipped]) == pytest.approx(0.25)
    with pytest.raises(PreconditionError):
        amad([], [])
    with pytest.raises(DimensionError):
        amad([truth], [])


def test_amad_per_channel():
    truth = torch.zeros(2, 4, 2)
    pred = torch.zeros(2, 4, 2)
    pred[:, :, 1] = 1.0
    pred[0, :, 0] = -2.0
    assert amad_per_channel(truth, pred) == pytest.approx([1.0, 1.0])


def test_token_accuracy():
    assert token_accuracy(torch.tensor([1, 2, 3, 4]), torch.tensor([1, 0, 3, 0])) == 0.5
    with pytest.raises(PreconditionError):
        token_accuracy(torch.tensor([]), torch.tensor([]))


def test_reconstruction_rate():
    assert reconstruction_rate(0.010, 0.173) == pytest.approx(0.0578, abs=1e-4)
    with pytest.raises(UndefinedRateError):
        reconstruction_rate(0.01, 0.0)
    with pytest.raises(PreconditionError):
        reconstruction_rate(-0.01, 0.1)


@pytest.mark.parametrize("name", sorted(TOKEN_BUDGET_TABLE))
def test_token_budget_table(name):
    channels, *expected = TOKEN_BUDGET_TABLE[name]
    got = [token_budget(m, 96, 16, channels, digits=3, vocab_tokens=437) for m in ("patching", "per_value", "text", "onecast")]
    assert got == expected


def test_onecast_budget_ignores_channels():
    counts = {token_budget("onecast", 96, 16, c, vocab_tokens=437) for c in (1, 7, 2000)}
    assert counts == {443}
    assert token_budget("patching", 100, 16, 1) == 7
    with pytest.raises(ConfigError):
        token_budget("bytes", 96)


def test_report_table_flattens_rows():
    report = EvalReport(
        domain_id="toy",
        rows=[HorizonReport(horizon=24, method="repeat_last", windows=3, mse=1.0, mae=0.5, amad=0.1,
                            amad_per_channel=[0.1, 0.2])],
    )
    (row,) = report.table()
    assert row["domain_id"] == "toy"
    assert row["horizon"] == 24
    assert "amad_per_channel" not in row
