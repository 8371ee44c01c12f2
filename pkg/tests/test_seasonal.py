import math

import pytest
import torch

from onecast_lib.errors import ConfigError, ShapeError
from onecast_lib.seasonal import (
    SeasonalPredictor,
    SeasonalWeights,
    build_basis,
    check_basis_independence,
    default_periods,
    evaluate_basis,
    fit_weights_least_squares,
    predict_weights,
)


def test_build_basis_sorts_and_deduplicates():
    basis = build_basis([12, 24, 24.0, 8])
    assert basis.size == 3
    assert basis.periods == pytest.approx((24.0, 12.0, 8.0))
    assert list(basis.frequencies) == sorted(basis.frequencies)


@pytest.mark.parametrize("periods", [[], [1.0], [24, 0.5]])
def test_build_basis_rejects_bad_periods(periods):
    with pytest.raises(ConfigError):
        build_basis(periods)


def test_default_periods_hourly():
    assert default_periods(24) == [24, 12, 8, 6, 4, 3, 168, 84, 56, 42, 28, 21]


def test_default_periods_daily_drops_short_harmonics():
    assert default_periods(1) == pytest.approx([7.0, 3.5, 7 / 3])


def test_default_basis_is_independent():
    assert check_basis_independence(build_basis(default_periods(24))) > 0


def test_nyquist_period_is_degenerate():
    with pytest.raises(ConfigError):
        check_basis_independence(build_basis([24, 2]))


def test_least_squares_recovers_pure_sinusoid():
    basis = build_basis([24, 12])
    t = torch.arange(96, dtype=torch.float64).unsqueeze(-1)
    weights = fit_weights_least_squares(basis, torch.sin(2 * math.pi * t / 24))
    # frequencies ascend, so the 24-step period comes first
    assert float(weights.sin_weights[0, 0]) == pytest.approx(1.0, abs=1e-9)
    assert torch.allclose(weights.cos_weights, torch.zeros(2, 1), atol=1e-9)
    assert float(weights.sin_weights[1, 0]) == pytest.approx(0.0, abs=1e-9)


def test_future_indices_continue_history():
    basis = build_basis([24, 7])
    weights = SeasonalWeights(torch.randn(2, 3), torch.randn(2, 3))
    whole = evaluate_basis(basis, weights, 0, 40)
    assert torch.allclose(evaluate_basis(basis, weights, 30, 10), whole[30:], atol=1e-12)


def test_evaluate_basis_checks_weight_rows():
    basis = build_basis([24, 12])
    with pytest.raises(ShapeError):
        evaluate_basis(basis, SeasonalWeights(torch.randn(3, 1), torch.randn(3, 1)), 0, 10)


def test_predictor_zero_head_forecasts_zero():
    predictor = SeasonalPredictor(build_basis([24, 12]), history_length=48)
    out = predictor(torch.randn(5, 48, 3), horizon=24)
    assert out.shape == (5, 24, 3)
    assert torch.equal(out, torch.zeros(5, 24, 3))


def test_predictor_weight_shapes_and_length_check():
    predictor = SeasonalPredictor(build_basis([24, 12, 8]), history_length=48, zero_init_head=False)
    weights = predict_weights(torch.randn(2, 48, 4), predictor)
    assert weights.sin_weights.shape == (2, 3, 4)
    assert weights.cos_weights.shape == (2, 3, 4)
    with pytest.raises(ShapeError):
        predictor.predict_weights(torch.randn(2, 40, 4))


def test_predictor_is_shared_across_channels():
    predictor = SeasonalPredictor(build_basis([24, 12]), history_length=24, zero_init_head=False)
    x = torch.randn(1, 24, 1)
    pair = predictor(torch.cat([x, x], dim=-1), horizon=12)
    assert torch.allclose(pair[..., 0], pair[..., 1])


def test_least_squares_fits_each_window_of_a_batch():
    basis = build_basis([24, 12])
    t = torch.arange(96, dtype=torch.float64)
    windows = torch.stack([
        torch.stack([torch.sin(2 * math.pi * t / 24), 2 * torch.cos(2 * math.pi * t / 12)], dim=-1),
        torch.stack([torch.cos(2 * math.pi * t / 24), torch.zeros(96)], dim=-1),
    ])
    weights = fit_weights_least_squares(basis, windows)
    assert weights.sin_weights.shape == (2, 2, 2)
    assert weights.cos_weights.shape == (2, 2, 2)
    expected_sin = torch.tensor([[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]])
    expected_cos = torch.tensor([[[0.0, 0.0], [0.0, 2.0]], [[1.0, 0.0], [0.0, 0.0]]])
    assert torch.allclose(weights.sin_weights, expected_sin, atol=1e-9)
    assert torch.allclose(weights.cos_weights, expected_cos, atol=1e-9)
    assert torch.allclose(evaluate_basis(basis, weights, 0, 96), windows, atol=1e-9)


def test_evaluate_basis_is_linear_in_weights():
    basis = build_basis([24, 12, 7])
    g = torch.Generator().manual_seed(5)
    w1 = SeasonalWeights(torch.randn(3, 2, generator=g), torch.randn(3, 2, generator=g))
    w2 = SeasonalWeights(torch.randn(3, 2, generator=g), torch.randn(3, 2, generator=g))
    a, b = 0.7, -2.5
    mixed = SeasonalWeights(a * w1.sin_weights + b * w2.sin_weights, a * w1.cos_weights + b * w2.cos_weights)
    expected = a * evaluate_basis(basis, w1, 10, 50) + b * evaluate_basis(basis, w2, 10, 50)
    assert torch.allclose(evaluate_basis(basis, mixed, 10, 50), expected, atol=1e-12)


def test_channel_permutation_permutes_weights_and_forecast():
    predictor = SeasonalPredictor(build_basis([24, 12]), history_length=24, zero_init_head=False)
    x = torch.randn(2, 24, 3)
    perm = torch.tensor([2, 0, 1])
    weights = predictor.predict_weights(x)
    permuted = predictor.predict_weights(x[..., perm])
    assert torch.allclose(permuted.sin_weights, weights.sin_weights[..., perm], atol=1e-12)
    assert torch.allclose(permuted.cos_weights, weights.cos_weights[..., perm], atol=1e-12)
    assert torch.allclose(predictor(x[..., perm], 12), predictor(x, 12)[..., perm], atol=1e-12)


def test_trained_predictor_recovers_a_pure_sinusoid():
    torch.manual_seed(0)
    basis = build_basis([24, 12])
    predictor = SeasonalPredictor(basis, history_length=96)
    t = torch.arange(192, dtype=torch.float64)
    # one window per phase; the future continues on absolute steps 96..191
    series = torch.stack([torch.sin(2 * math.pi * (t + s) / 24) for s in range(24)]).unsqueeze(-1)
    history, future = series[:, :96], series[:, 96:]
    optimizer = torch.optim.Adam(predictor.parameters(), lr=3e-3)
    for _ in range(2000):
        optimizer.zero_grad()
        loss = torch.nn.functional.mse_loss(predictor(history, 96), future)
        loss.backward()
        optimizer.step()
    with torch.no_grad():
        weights = predictor.predict_weights(history[:1])
    assert float(weights.sin_weights[0, 0, 0]) == pytest.approx(1.0, abs=0.05)
    assert float(weights.cos_weights[0, 0, 0]) == pytest.approx(0.0, abs=0.05)
