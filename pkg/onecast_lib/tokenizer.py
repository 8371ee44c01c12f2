"""
Semantic trend tokenizer: conv encoder, transformed-codebook vector quantization
with straight-through gradients, and the dual (history / future) decoders.

Tensors are laid out [B, L, C] for series and [B, n, D] for token features.
One token stream covers all channels of a window; per-domain linear adapters
map each domain's C channels to the shared conv width and back.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import torch
import torch.nn as nn

from .decomposition import NormStats, denormalize
from .errors import ConfigError, PatchingError, ShapeError, VocabularyError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TokenSequence:
    ids: torch.Tensor  # int64, [n] or [B, n]; MASK is encoded as vocab_size
    vocab_size: int
    patch_length: int = 16
    wave_length: int = 8

    @property
    def mask_id(self) -> int:
        return self.vocab_size

    @property
    def length(self) -> int:
        return self.ids.shape[-1]

    def has_mask(self) -> bool:
        return bool((self.ids == self.mask_id).any())

    def validate(self) -> "TokenSequence":
        if self.ids.numel() and (int(self.ids.min()) < 0 or int(self.ids.max()) > self.mask_id):
            raise VocabularyError(f"token ids outside [0, {self.vocab_size}) and not MASK")
        return self


def expected_token_count(length: int, patch_length: int, wave_length: int) -> int:
    """ceil(L / P) * (P / W); equals L / W when P divides L."""
    return -(-length // patch_length) * (patch_length // wave_length)


@dataclass
class QuantizeResult:
    tokens: torch.Tensor  # [..., n] int64
    z_e: torch.Tensor  # encoder output
    z_q: torch.Tensor  # exact rows of the transformed codebook
    z_st: torch.Tensor  # straight-through value: forward equals z_q, gradient flows to z_e
    codebook_loss: torch.Tensor


class Codebook(nn.Module):
    """K learnable D-dim vectors E matched through the transform E @ M."""

    def __init__(self, size: int, dim: int, beta: float = 0.25):
        super().__init__()
        if size < 2 or dim < 1 or beta <= 0:
            raise ConfigError(f"codebook needs K >= 2, D >= 1, beta > 0 (got {size}, {dim}, {beta})")
        self.size = size
        self.dim = dim
        self.beta = beta
        self.E = nn.Parameter(torch.empty(size, dim).uniform_(-1.0 / size, 1.0 / size))
        self.M = nn.Parameter(torch.eye(dim) + 0.01 * torch.randn(dim, dim))

    def transformed(self) -> torch.Tensor:
        return self.E @ self.M

    def lookup(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.size):
            raise VocabularyError(f"token ids outside [0, {self.size})")
        return self.transformed()[ids]


def nearest_codes(z: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
    """argmin_k ||z_i - codes_k||^2 per row; ties resolve to the smallest k."""
    dist = ((z.unsqueeze(-2) - codes) ** 2).sum(dim=-1)
    return dist.argmin(dim=-1)


def quantize(z_e: torch.Tensor, codebook: Codebook) -> QuantizeResult:
    """
    Replace each row of z_e [..., n, D] with its nearest transformed code.

    codebook_loss = ||sg[z] - e||^2 + beta * ||z - sg[e]||^2, summed over
    positions and averaged over leading batch dims.
    """
    if z_e.shape[-1] != codebook.dim:
        raise ShapeError(f"features of width {z_e.shape[-1]} cannot match codes of width {codebook.dim}")
    codes = codebook.transformed()
    with torch.no_grad():
        tokens = nearest_codes(z_e, codes)
    z_q = codes[tokens]
    per_window = ((z_e.detach() - z_q) ** 2).sum(dim=(-2, -1)) + codebook.beta * (
        (z_e - z_q.detach()) ** 2
    ).sum(dim=(-2, -1))
    z_st = z_e + (z_q - z_e).detach()
    return QuantizeResult(tokens=tokens, z_e=z_e, z_q=z_q, z_st=z_st, codebook_loss=per_window.mean())


class ConvStack(nn.Module):
    """Residual conv blocks that preserve length: x + gelu(conv(x))."""

    def __init__(self, width: int, blocks: int = 3, kernel: int = 3):
        super().__init__()
        self.blocks = nn.ModuleList(
            nn.Conv1d(width, width, kernel_size=kernel, padding=kernel // 2) for _ in range(blocks)
        )
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.blocks:
            x = x + self.act(conv(x))
        return x


class TrendEncoder(nn.Module):
    def __init__(self, width: int, code_dim: int, patch_length: int, wave_length: int, blocks: int, kernel: int):
        super().__init__()
        self.width = width
        self.patch_length = patch_length
        self.wave_length = wave_length
        self.adapters = nn.ModuleDict()
        self.stack = ConvStack(width, blocks, kernel)
        self.extract = nn.Conv1d(width, code_dim, kernel_size=wave_length, stride=wave_length)

    def add_domain(self, domain_id: str, channels: int) -> None:
        self.adapters[domain_id] = nn.Linear(channels, self.width)

    def forward(self, trend: torch.Tensor, domain_id: str) -> torch.Tensor:
        if trend.dim() == 2:
            return self.forward(trend.unsqueeze(0), domain_id).squeeze(0)
        if trend.dim() != 3:
            raise ShapeError(f"trend must be [L, C] or [B, L, C], got {tuple(trend.shape)}")
        batch, length, _ = trend.shape
        if length % self.patch_length != 0:
            raise PatchingError(f"window length L={length} is not divisible by patch length P={self.patch_length}")
        h = self.adapters[domain_id](trend)
        patches = length // self.patch_length
        h = h.reshape(batch * patches, self.patch_length, self.width).transpose(1, 2)
        z = self.extract(self.stack(h))  # [B * patches, D, P / W]
        return z.transpose(1, 2).reshape(batch, patches * z.shape[-1], z.shape[1])


class TrendDecoder(nn.Module):
    """Mirror of the encoder: transposed conv back to patches, conv stack, channel adapter."""

    def __init__(self, width: int, code_dim: int, patch_length: int, wave_length: int, blocks: int, kernel: int):
        super().__init__()
        self.width = width
        self.patch_length = patch_length
        self.tokens_per_patch = patch_length // wave_length
        self.expand = nn.ConvTranspose1d(code_dim, width, kernel_size=wave_length, stride=wave_length)
        self.stack = ConvStack(width, blocks, kernel)
        self.adapters = nn.ModuleDict()

    def add_domain(self, domain_id: str, channels: int) -> None:
        self.adapters[domain_id] = nn.Linear(self.width, channels)

    def forward(self, z: torch.Tensor, domain_id: str) -> torch.Tensor:
        batch, n, dim = z.shape
        if n % self.tokens_per_patch != 0:
            raise ShapeError(f"{n} tokens do not fill whole patches of {self.tokens_per_patch} tokens")
        patches = n // self.tokens_per_patch
        h = z.reshape(batch * patches, self.tokens_per_patch, dim).transpose(1, 2)
        h = self.stack(self.expand(h))  # [B * patches, width, P]
        h = h.transpose(1, 2).reshape(batch, patches * self.patch_length, self.width)
        return self.adapters[domain_id](h)


class TrendTokenizer(nn.Module):
    def __init__(
        self,
        codebook_size: int = 128,
        code_dim: int = 64,
        beta: float = 0.25,
        patch_length: int = 16,
        wave_length: int = 8,
        width: int = 64,
        blocks: int = 3,
        kernel: int = 3,
        dual_decoder: bool = True,
    ):
        super().__init__()
        if patch_length % wave_length != 0:
            raise ConfigError(f"patch length {patch_length} is not a multiple of wave length {wave_length}")
        self.patch_length = patch_length
        self.wave_length = wave_length
        self.dual_decoder = dual_decoder
        self.domains = {}
        self.encoder = TrendEncoder(width, code_dim, patch_length, wave_length, blocks, kernel)
        self.codebook = Codebook(codebook_size, code_dim, beta)
        self.decoder_h = TrendDecoder(width, code_dim, patch_length, wave_length, blocks, kernel)
        self.decoder_f = (
            TrendDecoder(width, code_dim, patch_length, wave_length, blocks, kernel) if dual_decoder else None
        )

    @property
    def vocab_size(self) -> int:
        return self.codebook.size

    def register_domain(self, domain_id: str, channels: int) -> None:
        if domain_id in self.domains:
            if self.domains[domain_id] != channels:
                raise ConfigError(
                    f"domain {domain_id!r} registered with {self.domains[domain_id]} channels, got {channels}"
                )
            return
        if not domain_id or "." in domain_id:
            raise ConfigError(f"domain id {domain_id!r} must be non-empty and contain no '.'")
        self.domains[domain_id] = channels
        self.encoder.add_domain(domain_id, channels)
        self.decoder_h.add_domain(domain_id, channels)
        if self.decoder_f is not None:
            self.decoder_f.add_domain(domain_id, channels)
        logger.debug("Registered domain %s with %d channels", domain_id, channels)

    def _check_domain(self, domain_id: str, channels: Optional[int] = None) -> None:
        if domain_id not in self.domains:
            raise ConfigError(f"unknown domain {domain_id!r}; known domains: {sorted(self.domains)}")
        if channels is not None and channels != self.domains[domain_id]:
            raise ShapeError(f"domain {domain_id!r} has {self.domains[domain_id]} channels, got {channels}")

    @property
    def future_decoder(self) -> TrendDecoder:
        return self.decoder_f if self.decoder_f is not None else self.decoder_h

    def encode(self, trend: torch.Tensor, domain_id: str) -> torch.Tensor:
        self._check_domain(domain_id, trend.shape[-1])
        return self.encoder(trend, domain_id)

    def tokenize(self, trend: torch.Tensor, domain_id: str) -> QuantizeResult:
        return quantize(self.encode(trend, domain_id), self.codebook)

    def as_sequence(self, ids: torch.Tensor) -> TokenSequence:
        return TokenSequence(ids=ids, vocab_size=self.vocab_size, patch_length=self.patch_length, wave_length=self.wave_length)

    def _features(self, tokens: Union[TokenSequence, torch.Tensor], length: Optional[int]) -> torch.Tensor:
        ids = tokens.ids if isinstance(tokens, TokenSequence) else tokens
        if length is not None and ids.shape[-1] != expected_token_count(length, self.patch_length, self.wave_length):
            raise ShapeError(
                f"{ids.shape[-1]} tokens cannot decode a window of length {length} "
                f"(P={self.patch_length}, W={self.wave_length})"
            )
        z = self.codebook.lookup(ids)
        return z if z.dim() == 3 else z.unsqueeze(0)

    def decode_history(self, z: torch.Tensor, domain_id: str) -> torch.Tensor:
        """History decoder on features [B, n, D]; normalized-space output [B, L, C]."""
        self._check_domain(domain_id)
        return self.decoder_h(z, domain_id)

    def decode_future(self, z: torch.Tensor, domain_id: str) -> torch.Tensor:
        """Future decoder on features [B, n, D]; output in history-normalized units."""
        self._check_domain(domain_id)
        return self.future_decoder(z, domain_id)


def decode_history(
    tokens: Union[TokenSequence, torch.Tensor], tokenizer: TrendTokenizer, domain_id: str, length: Optional[int] = None
) -> torch.Tensor:
    """Reconstruct a normalized history trend from token ids; the caller denormalizes for L1."""
    z = tokenizer._features(tokens, length)
    out = tokenizer.decode_history(z, domain_id)
    return out if _batched(tokens) else out.squeeze(0)


def decode_future(
    tokens: Union[TokenSequence, torch.Tensor],
    tokenizer: TrendTokenizer,
    domain_id: str,
    stats_h: NormStats,
    length: Optional[int] = None,
) -> torch.Tensor:
    """Decode future token ids and denormalize with the HISTORY statistics."""
    z = tokenizer._features(tokens, length)
    out = tokenizer.decode_future(z, domain_id)
    if not _batched(tokens):
        out = out.squeeze(0)
    return denormalize(out, stats_h)


def _batched(tokens: Union[TokenSequence, torch.Tensor]) -> bool:
    ids = tokens.ids if isinstance(tokens, TokenSequence) else tokens
    return ids.dim() == 2


def trend_tokenizer_loss(l1: torch.Tensor, l2: torch.Tensor, codebook_loss: torch.Tensor) -> torch.Tensor:
    return l1 + l2 + codebook_loss


def token_frequencies(ids: torch.Tensor, vocab_size: int) -> torch.Tensor:
    counts = torch.bincount(ids.reshape(-1), minlength=vocab_size).to(torch.float64)
    return counts / counts.sum().clamp_min(1.0)


def abandon_rare_tokens(frequencies: torch.Tensor, threshold: float) -> torch.Tensor:
    """Boolean keep-mask over the vocabulary: tokens used at least `threshold` of the time."""
    keep = frequencies >= threshold
    if not keep.any():
        keep[int(frequencies.argmax())] = True
    logger.info("Token abandonment at %.4f keeps %d of %d tokens", threshold, int(keep.sum()), keep.numel())
    return keep


def codebook_utilization(ids: torch.Tensor) -> int:
    return int(torch.unique(ids).numel())
