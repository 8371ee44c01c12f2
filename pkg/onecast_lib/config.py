"""
Configuration models for datasets, model hyperparameters and training runs.

Defaults follow the desk-scale settings documented in DESIGN.md; every field can
be overridden from a TOML run file or a CLI flag.
"""

import hashlib
import logging
import os
import tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "ONECAST_OUTPUT_DIR"
LOG_LEVEL_ENV = "ONECAST_LOG_LEVEL"

SchedulerKind = Literal["cosine", "linear", "power", "sigmoid"]
Stage = Literal["joint", "diffusion", "both"]

# Sampling periods understood by DatasetSpec, in steps per day.
STEPS_PER_DAY = {
    "5min": 288,
    "10min": 144,
    "15min": 96,
    "30min": 48,
    "1h": 24,
    "1d": 1,
}


class DatasetSpec(BaseModel):
    path: str = Field(..., description="CSV file with one column per channel")
    domain_id: str = Field(..., description="Domain tag; selects the per-domain adapters")
    sampling_period: str = Field("1h", description="One of STEPS_PER_DAY's keys")
    natural_periods: List[float] = Field(
        default_factory=list,
        description="Natural periods in steps; empty means day and week derived from sampling_period",
    )
    train_fraction: float = Field(0.7, gt=0)
    val_fraction: float = Field(0.1, gt=0)
    test_fraction: float = Field(0.2, gt=0)

    @field_validator("sampling_period")
    @classmethod
    def _known_period(cls, value: str) -> str:
        if value not in STEPS_PER_DAY:
            raise ValueError(f"unknown sampling period {value!r}; expected one of {sorted(STEPS_PER_DAY)}")
        return value

    @model_validator(mode="after")
    def _fractions_fit(self) -> "DatasetSpec":
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if total > 1.0 + 1e-12:
            raise ValueError(f"split fractions sum to {total}, must be <= 1")
        return self

    @property
    def steps_per_day(self) -> int:
        return STEPS_PER_DAY[self.sampling_period]


class ModelConfig(BaseModel):
    # decomposition
    moving_average_window: int = Field(25, ge=1)
    epsilon: float = Field(1e-5, gt=0)
    # seasonal
    basis_periods: List[float] = Field(
        default_factory=list,
        description="Explicit basis periods in steps; empty derives harmonics of day/week",
    )
    seasonal_hidden: int = Field(64, ge=1)
    # tokenizer
    codebook_size: int = Field(128, ge=2, description="K")
    code_dim: int = Field(64, ge=1, description="D")
    beta: float = Field(0.25, gt=0)
    patch_length: int = Field(16, ge=1, description="P")
    wave_length: int = Field(8, ge=1, description="W")
    conv_width: int = Field(64, ge=1)
    conv_blocks: int = Field(3, ge=1)
    conv_kernel: int = Field(3, ge=1)
    dual_decoder: bool = True
    abandon_threshold: float = Field(0.0, ge=0, lt=1, description="Token frequency below which the predictor never emits a token")
    # token predictor
    transformer_hidden: int = Field(128, ge=1)
    transformer_layers: int = Field(2, ge=1)
    transformer_heads: int = Field(4, ge=1)
    transformer_ff: Optional[int] = Field(None, description="Feed-forward width; None means 4 x hidden")
    scheduler: SchedulerKind = "cosine"
    inference_steps: int = Field(4, ge=1)

    @model_validator(mode="after")
    def _consistent(self) -> "ModelConfig":
        if self.patch_length % self.wave_length != 0:
            raise ValueError(f"patch length {self.patch_length} is not a multiple of wave length {self.wave_length}")
        if self.transformer_hidden % self.transformer_heads != 0:
            raise ValueError(
                f"transformer hidden {self.transformer_hidden} not divisible by {self.transformer_heads} heads"
            )
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be odd so blocks preserve length")
        return self

    @property
    def feed_forward(self) -> int:
        return self.transformer_ff or 4 * self.transformer_hidden


class TrainConfig(BaseModel):
    lr: float = Field(5e-4, gt=0)
    weight_decay: float = Field(1e-5, ge=0)
    lr_decay_factor: float = Field(0.99, gt=0, le=1)
    lr_decay_every_steps: int = Field(300, ge=1)
    epochs: int = Field(25, ge=1)
    stage2_epochs: Optional[int] = Field(None, description="Stage-II epochs; None reuses epochs")
    gamma: float = Field(1.0, ge=0)
    seed: int = 0
    history_length: int = Field(96, ge=2)
    horizon: int = Field(96, ge=1)
    stride: int = Field(1, ge=1)
    batch_size: int = Field(32, ge=1)
    stage: Stage = "both"
    workers: int = Field(1, ge=1, description="Threads for window preprocessing")

    @property
    def diffusion_epochs(self) -> int:
        return self.stage2_epochs or self.epochs


class RunConfig(BaseModel):
    datasets: List[DatasetSpec] = Field(default_factory=list)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    output_dir: str = "runs/onecast"

    @model_validator(mode="after")
    def _windows_tokenize(self) -> "RunConfig":
        for name, length in (("history_length", self.train.history_length), ("horizon", self.train.horizon)):
            if length % self.model.patch_length != 0:
                raise ValueError(f"{name} {length} is not divisible by patch length {self.model.patch_length}")
        domains = [d.domain_id for d in self.datasets]
        if len(set(domains)) != len(domains):
            raise ValueError(f"duplicate domain ids in {domains}")
        return self


def derive_seed(seed: int, name: str) -> int:
    """Deterministic sub-seed for one named component."""
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        elif value is not None:
            merged[key] = value
    return merged


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Build a validated RunConfig from an optional TOML file plus overrides.

    Overrides win over the file; ONECAST_OUTPUT_DIR (from the environment or a
    .env file) wins over both for the output directory.
    """
    load_dotenv()
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
        logger.debug("Loaded config file %s", path)
    raw = _merge(raw, overrides or {})
    env_dir = os.getenv(OUTPUT_DIR_ENV)
    if env_dir:
        raw["output_dir"] = env_dir
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def output_path(cfg: RunConfig, *parts: str) -> Path:
    out = Path(cfg.output_dir).joinpath(*parts)
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def resolve_output_dir(requested: Optional[str], default: str) -> Path:
    """Output directory for commands without a run file; ONECAST_OUTPUT_DIR wins as in load_run_config."""
    load_dotenv()
    return Path(os.getenv(OUTPUT_DIR_ENV) or requested or default)
