"""
Instance normalization, moving-average trend/season split and the residual
component rate (RCR) diagnostic.

All functions take tensors laid out [..., L, C] (time on the second-to-last axis,
channels last) and are pure.
"""

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import torch

from .errors import ConfigError, DatasetError, DimensionError, PreconditionError

DEFAULT_EPSILON = 1e-5
DEFAULT_MA_WINDOW = 25


@dataclass(frozen=True)
class SeriesWindow:
    values: torch.Tensor  # [L, C]
    domain_id: str = "default"

    def __post_init__(self):
        if self.values.dim() != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise DimensionError(f"SeriesWindow needs a [L, C] tensor with L, C >= 1, got {tuple(self.values.shape)}")
        if not torch.isfinite(self.values).all():
            raise DatasetError(f"SeriesWindow for domain {self.domain_id!r} contains non-finite values")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channel_count(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class NormStats:
    mu: torch.Tensor  # [..., C]
    sigma: torch.Tensor  # standard deviation, [..., C]
    epsilon: float = DEFAULT_EPSILON

    @property
    def scale(self) -> torch.Tensor:
        return torch.sqrt(self.sigma ** 2 + self.epsilon)


@dataclass(frozen=True)
class DecomposedWindow:
    trend: torch.Tensor
    season: torch.Tensor
    stats: Optional[NormStats] = None


def normalize(x: torch.Tensor, epsilon: float = DEFAULT_EPSILON) -> Tuple[torch.Tensor, NormStats]:
    """Per-window, per-channel standardization of x [..., L, C]."""
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    if x.shape[-2] < 2:
        raise PreconditionError(f"window too short for instance normalization: L={x.shape[-2]} (need >= 2)")
    mu = x.mean(dim=-2)
    sigma = x.var(dim=-2, correction=0).sqrt()
    stats = NormStats(mu=mu, sigma=sigma, epsilon=epsilon)
    return (x - mu.unsqueeze(-2)) / stats.scale.unsqueeze(-2), stats


def instance_normalize(
    w: Union[SeriesWindow, torch.Tensor], epsilon: float = DEFAULT_EPSILON
) -> Tuple[torch.Tensor, NormStats]:
    values = w.values if isinstance(w, SeriesWindow) else w
    return normalize(values, epsilon)


def denormalize(x: torch.Tensor, stats: NormStats) -> torch.Tensor:
    """Exact inverse of instance_normalize: x * sqrt(sigma^2 + eps) + mu."""
    if x.shape[-1] != stats.mu.shape[-1]:
        raise DimensionError(f"denormalize: {tuple(x.shape)} does not match stats over {tuple(stats.mu.shape)}")
    return x * stats.scale.unsqueeze(-2) + stats.mu.unsqueeze(-2)


def moving_average(x: torch.Tensor, window_n: int) -> torch.Tensor:
    """Trailing mean of the n values ending at each t, front-padded by replicating x[0]."""
    if window_n < 1:
        raise ConfigError(f"moving average window must be >= 1, got {window_n}")
    if window_n == 1:
        return x.clone()
    front = x[..., :1, :].expand(*x.shape[:-2], window_n - 1, x.shape[-1])
    padded = torch.cat([front, x], dim=-2)
    # [..., L, C, n] windows along time
    return padded.unfold(-2, window_n, 1).mean(dim=-1)


def moving_average_decompose(
    x_norm: torch.Tensor, window_n: int = DEFAULT_MA_WINDOW, stats: Optional[NormStats] = None
) -> DecomposedWindow:
    trend = moving_average(x_norm, window_n)
    return DecomposedWindow(trend=trend, season=x_norm - trend, stats=stats)


def decompose_window(
    w: Union[SeriesWindow, torch.Tensor], window_n: int = DEFAULT_MA_WINDOW, epsilon: float = DEFAULT_EPSILON
) -> DecomposedWindow:
    x_norm, stats = instance_normalize(w, epsilon)
    return moving_average_decompose(x_norm, window_n, stats)


def residual_component_rate(trend: torch.Tensor, season: torch.Tensor, residual: torch.Tensor) -> float:
    """Mean over points of |r| / (|t| + |s| + |r|); points with a zero denominator count as 0."""
    if not trend.shape == season.shape == residual.shape:
        raise DimensionError(
            f"residual_component_rate: shapes {tuple(trend.shape)}, {tuple(season.shape)}, {tuple(residual.shape)}"
        )
    if residual.numel() == 0:
        return 0.0
    denom = trend.abs() + season.abs() + residual.abs()
    ratio = torch.where(denom > 0, residual.abs() / torch.where(denom > 0, denom, torch.ones_like(denom)), torch.zeros_like(denom))
    return float(ratio.mean())
