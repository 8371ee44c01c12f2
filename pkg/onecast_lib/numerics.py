"""
Layer set shared by the seasonal MLP, the conv tokenizer and the token predictor.

Everything runs in float64. Backward rules come from torch autograd; this module
owns the shape contracts, the error types and the finite-difference verifier
that checks the analytic gradients.
"""

import logging
import math
from typing import Callable, Iterable, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DegenerateBatchError, DimensionError, DomainError, NumericError

logger = logging.getLogger(__name__)

DTYPE = torch.float64
torch.set_default_dtype(DTYPE)


def _shape(t: torch.Tensor) -> tuple:
    return tuple(t.shape)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """y = x W + b with W stored as [d_in, d_out]; leading dims of x are batch dims."""
    if weight.dim() != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {_shape(x)} does not conform to weight {_shape(weight)}")
    if bias is not None and _shape(bias) != (weight.shape[1],):
        raise DimensionError(f"linear: bias {_shape(bias)} does not conform to weight {_shape(weight)}")
    y = x @ weight
    return y + bias if bias is not None else y


def conv1d(
    x: torch.Tensor,
    kernels: torch.Tensor,
    bias: Optional[torch.Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> torch.Tensor:
    """
    Cross-correlation of x [C_in, L] (or [B, C_in, L]) with kernels [C_out, C_in, k].

    L_out = floor((L + 2*padding - k) / stride) + 1
    """
    batched = x.dim() == 3
    if x.dim() not in (2, 3) or kernels.dim() != 3 or x.shape[-2] != kernels.shape[1]:
        raise DimensionError(f"conv1d: input {_shape(x)} does not conform to kernels {_shape(kernels)}")
    k = kernels.shape[-1]
    padded = x.shape[-1] + 2 * padding
    if k > padded:
        raise DimensionError(f"conv1d: kernel size {k} exceeds padded length {padded}")
    y = F.conv1d(x if batched else x.unsqueeze(0), kernels, bias, stride=stride, padding=padding)
    return y if batched else y.squeeze(0)


def softmax_cross_entropy(logits: torch.Tensor, targets: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """
    Weighted mean of -log softmax(logits)[target] over rows.

    loss = -(1 / sum w) * sum_i w_i * log softmax(logits_i)[target_i]
    """
    if logits.dim() != 2 or targets.shape != logits.shape[:1] or weights.shape != logits.shape[:1]:
        raise DimensionError(
            f"softmax_cross_entropy: logits {_shape(logits)}, targets {_shape(targets)}, weights {_shape(weights)}"
        )
    weights = weights.to(logits.dtype)
    total = weights.sum()
    if float(total) == 0.0:
        raise DegenerateBatchError("softmax_cross_entropy: every row weight is zero")
    if targets.numel() and (int(targets.min()) < 0 or int(targets.max()) >= logits.shape[1]):
        raise DimensionError(f"softmax_cross_entropy: target ids outside [0, {logits.shape[1]})")
    per_row = F.cross_entropy(logits, targets, reduction="none")
    # zero-weight rows are multiplied out, so their logits never reach the loss or its gradient
    return (per_row * weights).sum() / total


def sinusoidal_positions(length: int, dim: int) -> torch.Tensor:
    """Parameter-free absolute position table [length, dim]."""
    position = torch.arange(length, dtype=DTYPE).unsqueeze(1)
    div_term = torch.exp(torch.arange(0, dim, 2, dtype=DTYPE) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=DTYPE)
    table[:, 0::2] = torch.sin(position * div_term)
    table[:, 1::2] = torch.cos(position * div_term[: dim // 2])
    return table


class AttentionBlock(nn.Module):
    """
    Pre-norm transformer block: full (bidirectional) multi-head self-attention
    followed by a GELU MLP, each wrapped in a residual connection.
    """

    def __init__(self, hidden: int, heads: int = 4, feed_forward: Optional[int] = None):
        super().__init__()
        if hidden % heads != 0:
            raise DimensionError(f"hidden {hidden} not divisible by {heads} heads")
        self.hidden = hidden
        self.heads = heads
        self.head_dim = hidden // heads
        self.norm_attn = nn.LayerNorm(hidden)
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.proj = nn.Linear(hidden, hidden)
        self.norm_mlp = nn.LayerNorm(hidden)
        self.mlp = nn.Sequential(
            nn.Linear(hidden, feed_forward or 4 * hidden),
            nn.GELU(),
            nn.Linear(feed_forward or 4 * hidden, hidden),
        )

    def attention_weights(self, x: torch.Tensor) -> torch.Tensor:
        """Softmax attention matrix [..., heads, n, n] for input x [..., n, hidden]."""
        q, k, _ = self._split_heads(self.norm_attn(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        return scores.softmax(dim=-1)

    def _split_heads(self, x: torch.Tensor):
        *lead, n, _ = x.shape
        qkv = self.qkv(x).reshape(*lead, n, 3, self.heads, self.head_dim)
        q, k, v = qkv.unbind(dim=-3)
        return q.transpose(-3, -2), k.transpose(-3, -2), v.transpose(-3, -2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() < 2 or x.shape[-1] != self.hidden:
            raise DimensionError(f"attention_block: input {_shape(x)} does not match hidden {self.hidden}")
        if x.shape[-2] < 1:
            raise DimensionError("attention_block: empty sequence")
        *lead, n, _ = x.shape
        q, k, v = self._split_heads(self.norm_attn(x))
        weights = (q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)).softmax(dim=-1)
        attended = (weights @ v).transpose(-3, -2).reshape(*lead, n, self.hidden)
        x = x + self.proj(attended)
        return x + self.mlp(self.norm_mlp(x))


def attention_block(x: torch.Tensor, block: AttentionBlock) -> torch.Tensor:
    return block(x)


def finite_difference_check(
    f: Callable[[], torch.Tensor],
    params: Iterable[torch.Tensor],
    h: float = 1e-5,
) -> float:
    """
    Compare autograd gradients of the scalar f() against central differences.

    For each parameter tensor the error is
    max|analytic - numeric| / (max|analytic| + 1e-8); the maximum over tensors
    is returned.
    """
    if not 0.0 < h <= 1e-2:
        raise DomainError(f"finite difference step {h} outside (0, 1e-2]")
    params = [p for p in params]
    for p in params:
        p.grad = None
    value = f()
    if not torch.isfinite(value).all():
        raise NumericError(f"finite_difference_check: f is not finite ({float(value)!r})")
    analytic = torch.autograd.grad(value, params, allow_unused=True)

    worst = 0.0
    with torch.no_grad():
        for p, grad in zip(params, analytic):
            grad = torch.zeros_like(p) if grad is None else grad
            numeric = torch.zeros_like(p)
            flat = p.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + h
                plus = f()
                flat[i] = original - h
                minus = f()
                flat[i] = original
                if not (torch.isfinite(plus) and torch.isfinite(minus)):
                    raise NumericError(f"finite_difference_check: f is not finite near element {i}")
                numeric.view(-1)[i] = (plus - minus) / (2.0 * h)
            err = (grad - numeric).abs().max().item() / (grad.abs().max().item() + 1e-8)
            worst = max(worst, err)
    logger.debug("finite_difference_check: max relative error %.3e over %d tensors", worst, len(params))
    return worst


def count_parameters(modules: Sequence[nn.Module]) -> int:
    return sum(p.numel() for m in modules for p in m.parameters())
