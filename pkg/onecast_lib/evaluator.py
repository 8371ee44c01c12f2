# evaluator.py

"""
Forecast metrics: MSE/MAE, AMAD (level fit), token accuracy, the
reconstruction-to-prediction rate and the token budget of competing
tokenization schemes. Every function here is pure.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import torch
from pydantic import BaseModel, Field

from .errors import ConfigError, DimensionError, PreconditionError, UndefinedRateError

logger = logging.getLogger(__name__)

BUDGET_METHODS = ("patching", "per_value", "text", "onecast")


# ------------------------------------------------------------------------
# Report models
# ------------------------------------------------------------------------
class HorizonReport(BaseModel):
    horizon: int = Field(..., description="Forecast length L_f scored in this row")
    method: str = Field("onecast", description="onecast, seasonal_only or repeat_last")
    windows: int = Field(..., ge=0)
    mse: float = Field(..., ge=0)
    mae: float = Field(..., ge=0)
    amad: float = Field(..., ge=0)
    amad_per_channel: List[float] = Field(default_factory=list)
    token_accuracy: Optional[float] = Field(None, ge=0, le=1)
    reconstruction_mse: Optional[float] = Field(None, ge=0)
    reconstruction_rate: Optional[float] = Field(None, ge=0)
    rcr: Optional[float] = Field(None, ge=0, le=1)


class EvalReport(BaseModel):
    domain_id: str
    checkpoint: str = ""
    stages: List[str] = Field(default_factory=list)
    inference_steps: Optional[int] = None
    rows: List[HorizonReport] = Field(default_factory=list)

    def table(self) -> List[Dict]:
        return [{"domain_id": self.domain_id, **row.model_dump(exclude={"amad_per_channel"})} for row in self.rows]


# ------------------------------------------------------------------------
# Metrics
# ------------------------------------------------------------------------
def _same_shape(y: torch.Tensor, y_hat: torch.Tensor) -> None:
    if y.shape != y_hat.shape:
        raise DimensionError(f"metric inputs differ in shape: {tuple(y.shape)} vs {tuple(y_hat.shape)}")


def mse_mae(y: torch.Tensor, y_hat: torch.Tensor) -> Tuple[float, float]:
    _same_shape(y, y_hat)
    if y.numel() == 0:
        raise PreconditionError("mse_mae needs at least one value")
    diff = y - y_hat
    return float((diff ** 2).mean()), float(diff.abs().mean())


def amad(samples_true: Sequence[torch.Tensor], samples_pred: Sequence[torch.Tensor]) -> float:
    """Mean over samples of |mean(truth) - mean(prediction)|, each window mean pooled over channels."""
    if len(samples_true) == 0:
        raise PreconditionError("amad needs at least one sample")
    if len(samples_true) != len(samples_pred):
        raise DimensionError(f"amad got {len(samples_true)} truths and {len(samples_pred)} predictions")
    gaps = []
    for y, y_hat in zip(samples_true, samples_pred):
        _same_shape(y, y_hat)
        gaps.append(abs(float(y.mean()) - float(y_hat.mean())))
    return sum(gaps) / len(gaps)


def amad_per_channel(samples_true: torch.Tensor, samples_pred: torch.Tensor) -> List[float]:
    """AMAD for each channel of stacked windows [N, L, C]."""
    _same_shape(samples_true, samples_pred)
    if samples_true.shape[0] == 0:
        raise PreconditionError("amad needs at least one sample")
    gaps = (samples_true.mean(dim=-2) - samples_pred.mean(dim=-2)).abs()
    return gaps.mean(dim=0).tolist()


def token_accuracy(predicted: torch.Tensor, target: torch.Tensor) -> float:
    _same_shape(predicted, target)
    if target.numel() == 0:
        raise PreconditionError("token accuracy needs at least one token")
    return float((predicted == target).to(torch.float64).mean())


def reconstruction_rate(reconst_mse: float, final_mse: float) -> float:
    """Share of the final forecast error already present in the trend reconstruction."""
    if final_mse == 0:
        raise UndefinedRateError("reconstruction rate is undefined when the final MSE is 0")
    if reconst_mse < 0 or final_mse < 0:
        raise PreconditionError(f"MSE values must be >= 0, got {reconst_mse}, {final_mse}")
    return reconst_mse / final_mse


def token_budget(method: str, length: int, patch_length: int = 16, channels: int = 1, digits: int = 3,
                 vocab_tokens: int = 0) -> int:
    """
    Tokens needed to encode one window of `length` steps and `channels` channels.

    patching: ceil(L/P) * C, per_value: L * C, text: k * L * C,
    onecast: ceil(L/P) + M, independent of C.
    """
    if method not in BUDGET_METHODS:
        raise ConfigError(f"unknown tokenization method {method!r}; expected one of {BUDGET_METHODS}")
    patches = math.ceil(length / patch_length)
    if method == "patching":
        return patches * channels
    if method == "per_value":
        return length * channels
    if method == "text":
        return digits * length * channels
    return patches + vocab_tokens
