# data_generation.py
"""
Seeded synthetic corpora for the acceptance experiments.

 - sinusoid_ramp: daily sinusoid + linear ramp + Gaussian noise
 - pure_sinusoid: noise-free single-period sinusoid (weight recovery)
 - level_shift: seasonal series whose level jumps and drifts (distribution shift)
 - token_copy_pairs: token-id pairs whose future copies the history

Series generators return a DataFrame with an hourly ISO-8601 `date` column
followed by one column per channel, and write it to csv_path when given.
"""

import logging
from typing import Optional, Tuple

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, Field

from .errors import PreconditionError

logger = logging.getLogger(__name__)

START_DATE = "2020-01-01"


class SinusoidRampSpec(BaseModel):
    length: int = Field(4000, ge=1, description="Number of time steps")
    channels: int = Field(2, ge=1)
    period: float = Field(24.0, gt=1, description="Sinusoid period in steps")
    amplitude: float = Field(1.0, ge=0)
    slope: float = Field(1e-3, description="Ramp increase per step for channel 0; channel c uses (c + 1) * slope")
    noise: float = Field(0.1, ge=0, description="Gaussian noise standard deviation")
    seed: int = 0


class LevelShiftSpec(BaseModel):
    length: int = Field(4000, ge=1)
    channels: int = Field(2, ge=1)
    period: float = Field(24.0, gt=1)
    segment: int = Field(96, ge=1, description="Steps between level jumps")
    shift_scale: float = Field(1.5, ge=0, description="Std of each level jump")
    drift: float = Field(0.5, description="Mean of each level jump; > 0 makes future levels exceed history levels")
    noise: float = Field(0.1, ge=0)
    seed: int = 0


def _frame(values: np.ndarray, csv_path: Optional[str]) -> pd.DataFrame:
    df = pd.DataFrame(values, columns=[f"ch{c}" for c in range(values.shape[1])])
    df.insert(0, "date", pd.date_range(START_DATE, periods=values.shape[0], freq="h").strftime("%Y-%m-%dT%H:%M:%S"))
    if csv_path:
        df.to_csv(csv_path, index=False, float_format="%.17g")
        logger.info("Wrote %d x %d synthetic series to %s", values.shape[0], values.shape[1], csv_path)
    return df


def series_values(df: pd.DataFrame) -> torch.Tensor:
    """Channel columns of a generated frame as a float64 tensor [T, C]."""
    return torch.from_numpy(df.drop(columns=["date"]).to_numpy(dtype="float64").copy())


# -------- SINUSOID + RAMP --------
def generate_sinusoid_ramp(spec: Optional[SinusoidRampSpec] = None, csv_path: Optional[str] = None) -> pd.DataFrame:
    spec = spec or SinusoidRampSpec()
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.length, dtype=np.float64)[:, None]
    phases = rng.uniform(0, 2 * np.pi, size=spec.channels)[None, :]
    slopes = spec.slope * np.arange(1, spec.channels + 1, dtype=np.float64)[None, :]
    values = spec.amplitude * np.sin(2 * np.pi * t / spec.period + phases) + slopes * t
    values = values + rng.normal(0.0, spec.noise, size=values.shape)
    return _frame(values, csv_path)


# -------- PURE SINUSOID --------
def generate_pure_sinusoid(length: int = 480, period: float = 24.0, amplitude: float = 1.0,
                           csv_path: Optional[str] = None) -> pd.DataFrame:
    t = np.arange(length, dtype=np.float64)[:, None]
    return _frame(amplitude * np.sin(2 * np.pi * t / period), csv_path)


# -------- LEVEL SHIFTS --------
def generate_level_shift(spec: Optional[LevelShiftSpec] = None, csv_path: Optional[str] = None) -> pd.DataFrame:
    spec = spec or LevelShiftSpec()
    rng = np.random.default_rng(spec.seed)
    n_segments = -(-spec.length // spec.segment)
    jumps = rng.normal(spec.drift, spec.shift_scale, size=(n_segments, spec.channels))
    levels = np.repeat(np.cumsum(jumps, axis=0), spec.segment, axis=0)[: spec.length]
    t = np.arange(spec.length, dtype=np.float64)[:, None]
    phases = rng.uniform(0, 2 * np.pi, size=spec.channels)[None, :]
    values = levels + np.sin(2 * np.pi * t / spec.period + phases) + rng.normal(0.0, spec.noise, size=levels.shape)
    return _frame(values, csv_path)


# -------- TOKEN COPY --------
def token_copy_pairs(
    count: int, history_tokens: int, future_tokens: int, vocab_size: int, seed: int = 0
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Random history ids; the future at offset j repeats the history token at offset j."""
    if future_tokens > history_tokens:
        raise PreconditionError(f"future ({future_tokens}) cannot copy from a shorter history ({history_tokens})")
    generator = torch.Generator().manual_seed(seed)
    history = torch.randint(0, vocab_size, (count, history_tokens), generator=generator)
    return history, history[:, :future_tokens].clone()
