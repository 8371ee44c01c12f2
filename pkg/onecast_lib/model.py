"""
The assembled OneCast network: seasonal predictor, trend tokenizer and (after
Stage II starts) the diffusion token predictor, plus the loss graph of the
joint stage and the end-to-end forecast path.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .decomposition import denormalize, moving_average_decompose, normalize
from .diffusion import DenoiseTrace, TokenPredictor, denoise_batch
from .errors import CheckpointError, ConfigError
from .seasonal import SeasonalBasis, SeasonalPredictor, build_basis, check_basis_independence, default_periods
from .tokenizer import TrendTokenizer, expected_token_count, trend_tokenizer_loss

logger = logging.getLogger(__name__)

FORECAST_COMPONENTS = ("full", "seasonal")


@dataclass
class JointLosses:
    l1: torch.Tensor
    l2: torch.Tensor
    l3: torch.Tensor
    codebook: torch.Tensor
    trend: torch.Tensor
    joint: torch.Tensor
    tokens_h: torch.Tensor
    tokens_f: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {name: float(getattr(self, name)) for name in ("l1", "l2", "l3", "codebook", "trend", "joint")}


def basis_for(cfg: ModelConfig, steps_per_day: List[int]) -> SeasonalBasis:
    """Explicit periods from the config, else day/week harmonics for every sampling rate in use."""
    hint = steps_per_day[0] if steps_per_day else 24
    if cfg.basis_periods:
        periods = cfg.basis_periods
    else:
        periods = [p for spd in (steps_per_day or [24]) for p in default_periods(spd)]
    return build_basis(periods, sample_rate_hint=hint)


class OneCastModel(nn.Module):
    def __init__(self, cfg: ModelConfig, basis: SeasonalBasis, history_length: int, horizon: int):
        super().__init__()
        for name, length in (("history", history_length), ("horizon", horizon)):
            if length % cfg.patch_length != 0:
                raise ConfigError(f"{name} length {length} is not divisible by patch length {cfg.patch_length}")
        check_basis_independence(basis)
        self.cfg = cfg
        self.basis = basis
        self.history_length = history_length
        self.horizon = horizon
        self.seasonal = SeasonalPredictor(basis, history_length, cfg.seasonal_hidden)
        self.tokenizer = TrendTokenizer(
            codebook_size=cfg.codebook_size,
            code_dim=cfg.code_dim,
            beta=cfg.beta,
            patch_length=cfg.patch_length,
            wave_length=cfg.wave_length,
            width=cfg.conv_width,
            blocks=cfg.conv_blocks,
            kernel=cfg.conv_kernel,
            dual_decoder=cfg.dual_decoder,
        )
        self.predictor: Optional[TokenPredictor] = None

    @property
    def history_tokens(self) -> int:
        return expected_token_count(self.history_length, self.cfg.patch_length, self.cfg.wave_length)

    @property
    def future_tokens(self) -> int:
        return expected_token_count(self.horizon, self.cfg.patch_length, self.cfg.wave_length)

    @property
    def domains(self) -> Dict[str, int]:
        return dict(self.tokenizer.domains)

    def register_domain(self, domain_id: str, channels: int) -> None:
        self.tokenizer.register_domain(domain_id, channels)

    def stage1_modules(self) -> List[nn.Module]:
        return [self.seasonal, self.tokenizer]

    def build_predictor(self) -> TokenPredictor:
        """Fresh predictor whose embeddings are the current transformed codebook."""
        with torch.no_grad():
            embeddings = self.tokenizer.codebook.transformed()
        self.predictor = TokenPredictor(
            embeddings,
            max_length=self.history_tokens + self.future_tokens,
            hidden=self.cfg.transformer_hidden,
            layers=self.cfg.transformer_layers,
            heads=self.cfg.transformer_heads,
            feed_forward=self.cfg.feed_forward,
        )
        return self.predictor

    def decompose(self, x: torch.Tensor):
        x_norm, stats = normalize(x, self.cfg.epsilon)
        return moving_average_decompose(x_norm, self.cfg.moving_average_window, stats)

    def joint_losses(self, history: torch.Tensor, future: torch.Tensor, domain_id: str, gamma: float = 1.0) -> JointLosses:
        """
        Stage-I loss graph for a batch of window pairs [B, L, C].

        L1 trains history reconstruction, L2 trains the future decoder only (its
        input is detached from the codebook), L3 scores the composed forecast.
        Without a future decoder, L3 never reaches the history decoder.
        """
        dec_h = self.decompose(history)
        dec_f = self.decompose(future)
        stats_h, stats_f = dec_h.stats, dec_f.stats

        season_hat = self.seasonal(dec_h.season, self.horizon)
        q_h = self.tokenizer.tokenize(dec_h.trend, domain_id)
        q_f = self.tokenizer.tokenize(dec_f.trend, domain_id)

        trend_h_hat = self.tokenizer.decode_history(q_h.z_st, domain_id)
        l1 = F.mse_loss(denormalize(trend_h_hat, stats_h), denormalize(dec_h.trend, stats_h))

        trend_f_hat = self.tokenizer.decode_future(q_f.z_q.detach(), domain_id)
        if self.cfg.dual_decoder:
            l2 = F.mse_loss(denormalize(trend_f_hat, stats_h), denormalize(dec_f.trend, stats_f))
        else:
            # the lone decoder learns from history reconstruction only; L3 then trains the seasonal branch
            l2 = torch.zeros((), dtype=l1.dtype)
            trend_f_hat = trend_f_hat.detach()

        codebook = q_h.codebook_loss + q_f.codebook_loss
        trend = trend_tokenizer_loss(l1, l2, codebook)
        l3 = F.mse_loss(denormalize(trend_f_hat + season_hat, stats_h), future)
        joint = l3 + gamma * trend if gamma > 0 else l3
        return JointLosses(l1, l2, l3, codebook, trend, joint, q_h.tokens, q_f.tokens)

    @torch.no_grad()
    def tokenize_pair(self, history: torch.Tensor, future: torch.Tensor, domain_id: str):
        dec_h = self.decompose(history)
        dec_f = self.decompose(future)
        return (
            self.tokenizer.tokenize(dec_h.trend, domain_id).tokens,
            self.tokenizer.tokenize(dec_f.trend, domain_id).tokens,
        )

    @torch.no_grad()
    def forecast_batch(
        self,
        history: torch.Tensor,
        domain_id: str,
        steps: Optional[int] = None,
        components: str = "full",
        traces: Optional[List[DenoiseTrace]] = None,
    ) -> torch.Tensor:
        """Forecast [B, L_f, C] from histories [B, L_h, C] in the original units."""
        if components not in FORECAST_COMPONENTS:
            raise ConfigError(f"unknown forecast components {components!r}")
        if history.shape[-2] != self.history_length:
            raise ConfigError(f"history length {history.shape[-2]} does not match trained length {self.history_length}")
        dec = self.decompose(history)
        season = self.seasonal(dec.season, self.horizon)
        if components == "seasonal":
            return denormalize(season, dec.stats)
        if self.predictor is None:
            raise CheckpointError("forecast needs a trained token predictor (Stage II parameters are missing)")
        tokens_h = self.tokenizer.tokenize(dec.trend, domain_id).tokens
        tokens_f, round_traces = denoise_batch(
            tokens_h, self.future_tokens, steps or self.cfg.inference_steps, self.predictor
        )
        if traces is not None:
            traces.extend(round_traces)
        trend = self.tokenizer.decode_future(self.tokenizer.codebook.lookup(tokens_f), domain_id)
        return denormalize(trend + season, dec.stats)
