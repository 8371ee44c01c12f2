"""
Seasonal forecasting over a fixed bank of periodic basis functions.

A seasonal series is modelled per channel as
    X_S(t) = sum_j [ v_s[j] * sin(w_j t) + v_c[j] * cos(w_j t) ]
with frequencies w_j fixed and the weights predicted by a small MLP from the
history's seasonal part. Time indices are absolute within a window pair: the
history covers t in [0, L_h), the future t in [L_h, L_h + L_f).
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

HARMONIC_DIVISORS = (1, 2, 3, 4, 6, 8)


@dataclass(frozen=True)
class SeasonalBasis:
    frequencies: Tuple[float, ...]  # radians per step, strictly increasing
    sample_rate_hint: int = 24  # steps per day

    @property
    def size(self) -> int:
        return len(self.frequencies)

    @property
    def periods(self) -> Tuple[float, ...]:
        return tuple(2.0 * math.pi / w for w in self.frequencies)


@dataclass(frozen=True)
class SeasonalWeights:
    sin_weights: torch.Tensor  # [..., N_s, C]
    cos_weights: torch.Tensor  # [..., N_s, C]


def build_basis(periods_in_steps: Iterable[float], sample_rate_hint: int = 24) -> SeasonalBasis:
    periods = [float(p) for p in periods_in_steps]
    if not periods:
        raise ConfigError("seasonal basis needs at least one period")
    bad = [p for p in periods if not p > 1.0]
    if bad:
        raise ConfigError(f"seasonal basis periods must be > 1 step, got {bad}")
    frequencies = sorted({2.0 * math.pi / p for p in periods})
    return SeasonalBasis(frequencies=tuple(frequencies), sample_rate_hint=sample_rate_hint)


def default_periods(steps_per_day: int, natural_periods: Sequence[float] = ()) -> List[float]:
    """
    Harmonics {P, P/2, P/3, P/4, P/6, P/8} of each natural period.

    Natural periods default to one day and one week at the given sampling rate.
    Harmonics at or below 2 steps are dropped: sin(pi t) vanishes on integer t.
    """
    naturals = list(natural_periods) or [float(steps_per_day), float(7 * steps_per_day)]
    periods = [p / d for p in naturals for d in HARMONIC_DIVISORS if p / d > 2.0]
    if not periods:
        raise ConfigError(f"no usable harmonics for natural periods {naturals}")
    return periods


def basis_matrices(basis: SeasonalBasis, t_start: int, length: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """sin and cos design matrices [length, N_s] at absolute steps t_start .. t_start + length - 1."""
    if length < 1:
        raise ShapeError(f"basis evaluation length must be >= 1, got {length}")
    t = torch.arange(t_start, t_start + length, dtype=torch.float64).unsqueeze(1)
    w = torch.tensor(basis.frequencies, dtype=torch.float64).unsqueeze(0)
    return torch.sin(t * w), torch.cos(t * w)


def evaluate_basis(basis: SeasonalBasis, weights: SeasonalWeights, t_start: int, length: int) -> torch.Tensor:
    """Weighted sinusoid sum, [..., length, C]."""
    sin_m, cos_m = basis_matrices(basis, t_start, length)
    if weights.sin_weights.shape[-2] != basis.size or weights.cos_weights.shape[-2] != basis.size:
        raise ShapeError(
            f"weights {tuple(weights.sin_weights.shape)} / {tuple(weights.cos_weights.shape)} "
            f"do not match a basis of {basis.size} frequencies"
        )
    return sin_m @ weights.sin_weights + cos_m @ weights.cos_weights


def fit_weights_least_squares(basis: SeasonalBasis, series: torch.Tensor, t_start: int = 0) -> SeasonalWeights:
    """Least-squares weights for series [..., L, C] over the basis (normal-equations solve)."""
    sin_m, cos_m = basis_matrices(basis, t_start, series.shape[-2])
    design = torch.cat([sin_m, cos_m], dim=1)
    gram = design.T @ design
    coef = torch.linalg.solve(gram, design.T @ series)
    return SeasonalWeights(sin_weights=coef[..., : basis.size, :], cos_weights=coef[..., basis.size :, :])


def check_basis_independence(basis: SeasonalBasis, length: int = None, tol: float = 1e-8) -> float:
    """
    Smallest eigenvalue of the basis Gram matrix sampled over a full common period.

    Raises ConfigError when the sin/cos columns are linearly dependent.
    """
    if length is None:
        rounded = [round(p) for p in basis.periods]
        if all(abs(p - r) < 1e-9 for p, r in zip(basis.periods, rounded)):
            length = math.lcm(*rounded)
        else:
            length = 4 * math.ceil(max(basis.periods))
    sin_m, cos_m = basis_matrices(basis, 0, length)
    design = torch.cat([sin_m, cos_m], dim=1)
    min_eig = float(torch.linalg.eigvalsh(design.T @ design).min())
    if min_eig <= tol:
        raise ConfigError(f"seasonal basis is degenerate over {length} steps (min Gram eigenvalue {min_eig:.3e})")
    logger.debug("Basis of %d frequencies independent over %d steps (min eigenvalue %.3e)", basis.size, length, min_eig)
    return min_eig


class SeasonalPredictor(nn.Module):
    """
    2-layer MLP shared across channels: one channel's history season (L_h values)
    -> 2 * N_s weights, sin block first.
    """

    def __init__(self, basis: SeasonalBasis, history_length: int, hidden: int = 64, zero_init_head: bool = True):
        super().__init__()
        self.basis = basis
        self.history_length = history_length
        self.net = nn.Sequential(
            nn.Linear(history_length, hidden),
            nn.GELU(),
            nn.Linear(hidden, 2 * basis.size),
        )
        if zero_init_head:
            nn.init.zeros_(self.net[-1].weight)
            nn.init.zeros_(self.net[-1].bias)

    def predict_weights(self, history_season: torch.Tensor) -> SeasonalWeights:
        if history_season.shape[-2] != self.history_length:
            raise ShapeError(
                f"history season has length {history_season.shape[-2]}, predictor expects {self.history_length}"
            )
        # [..., C, L_h] -> [..., C, 2 N_s] -> [..., 2 N_s, C]
        out = self.net(history_season.transpose(-2, -1)).transpose(-2, -1)
        return SeasonalWeights(sin_weights=out[..., : self.basis.size, :], cos_weights=out[..., self.basis.size:, :])

    def forward(self, history_season: torch.Tensor, horizon: int) -> torch.Tensor:
        weights = self.predict_weights(history_season)
        return evaluate_basis(self.basis, weights, self.history_length, horizon)


def predict_weights(history_season: torch.Tensor, predictor: SeasonalPredictor) -> SeasonalWeights:
    return predictor.predict_weights(history_season)
