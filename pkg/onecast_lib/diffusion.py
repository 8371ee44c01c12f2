"""
Masked discrete-diffusion token predictor.

Training corrupts future tokens into an absorbing MASK state at a rate drawn
from a mask scheduler and supervises only the masked positions. Inference
starts from an all-MASK future and, over T rounds, fills the masked positions
the model is most confident about.

Scheduler direction: cosine, linear and power decrease in t while sigmoid
increases from 0 to 1. The formulas are kept as published; callers sample
t ~ U[0, 1) so every kind still covers the full masking range.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn

from .errors import ConfigError, DegenerateBatchError, DomainError, PreconditionError, ShapeError, VocabularyError
from .numerics import AttentionBlock, sinusoidal_positions, softmax_cross_entropy
from .tokenizer import TokenSequence

logger = logging.getLogger(__name__)

SCHEDULER_KINDS = ("cosine", "linear", "power", "sigmoid")


def _logistic(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


@dataclass(frozen=True)
class MaskScheduler:
    kind: str = "cosine"

    def __post_init__(self):
        if self.kind not in SCHEDULER_KINDS:
            raise ConfigError(f"unknown mask scheduler {self.kind!r}; expected one of {SCHEDULER_KINDS}")

    def __call__(self, t: float) -> float:
        return mask_probability(self, t)


def mask_probability(s: Union[MaskScheduler, str], t: float) -> float:
    kind = s.kind if isinstance(s, MaskScheduler) else MaskScheduler(s).kind
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"mask scheduler time {t} outside [0, 1]")
    if kind == "cosine":
        p = math.cos(t * math.pi / 2.0)
    elif kind == "linear":
        p = 1.0 - t
    elif kind == "power":
        p = 1.0 - t * t
    else:
        p = (_logistic(t) - _logistic(0.0)) / (_logistic(1.0) - _logistic(0.0))
    return min(1.0, max(0.0, p))


def mask_ids(
    ids: torch.Tensor, p_mask: Union[float, torch.Tensor], mask_id: int, generator: Optional[torch.Generator] = None
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Independently replace each position with mask_id when r < p, r ~ U[0, 1).

    p_mask is a scalar or one probability per leading row. Returns the corrupted
    ids and the boolean mask indicator.
    """
    p = torch.as_tensor(p_mask, dtype=torch.float64)
    if bool(((p < 0) | (p > 1)).any()):
        raise DomainError(f"mask probability outside [0, 1]: {p_mask}")
    if bool((ids == mask_id).any()):
        raise PreconditionError("tokens to corrupt already contain MASK")
    if p.dim() == 1:
        p = p.unsqueeze(-1)
    r = torch.rand(ids.shape, generator=generator, dtype=torch.float64)
    masked = r < p
    return torch.where(masked, torch.full_like(ids, mask_id), ids), masked


def corrupt(future: TokenSequence, p_mask: float, generator: Optional[torch.Generator] = None) -> TokenSequence:
    corrupted, _ = mask_ids(future.ids, p_mask, future.mask_id, generator)
    return TokenSequence(corrupted, future.vocab_size, future.patch_length, future.wave_length)


def absorbing_transition_matrix(beta: float, num_symbols: int) -> torch.Tensor:
    """One-step matrix over num_symbols tokens plus a final absorbing MASK state."""
    if not 0.0 <= beta <= 1.0:
        raise DomainError(f"absorbing rate {beta} outside [0, 1]")
    q = torch.eye(num_symbols + 1, dtype=torch.float64) * (1.0 - beta)
    q[:, -1] = beta
    q[-1, -1] = 1.0
    return q


def cumulative_transition(betas: Sequence[float], num_symbols: int) -> torch.Tensor:
    """Q_1 Q_2 ... Q_t as an explicit matrix product."""
    q_bar = torch.eye(num_symbols + 1, dtype=torch.float64)
    for beta in betas:
        q_bar = q_bar @ absorbing_transition_matrix(beta, num_symbols)
    return q_bar


def absorbing_marginal(beta_schedule: Sequence[float], step: int) -> float:
    """Probability that a non-mask token is still itself after `step` steps: prod (1 - beta_i)."""
    if step < 0 or step > len(beta_schedule):
        raise DomainError(f"step {step} outside schedule of length {len(beta_schedule)}")
    survival = 1.0
    for beta in beta_schedule[:step]:
        if not 0.0 <= beta <= 1.0:
            raise DomainError(f"absorbing rate {beta} outside [0, 1]")
        survival *= 1.0 - beta
    return survival


class TokenPredictor(nn.Module):
    """
    Full-attention transformer over Concat(history tokens, future tokens).

    Token embeddings are the frozen transformed codebook rows; MASK positions
    take the learnable mask embedding, initialized at the mean of the token
    embeddings.
    """

    def __init__(
        self,
        token_embeddings: torch.Tensor,
        max_length: int,
        hidden: int = 128,
        layers: int = 2,
        heads: int = 4,
        feed_forward: Optional[int] = None,
    ):
        super().__init__()
        vocab_size, dim = token_embeddings.shape
        self.vocab_size = vocab_size
        self.max_length = max_length
        self.register_buffer("token_embeddings", token_embeddings.detach().clone())
        self.mask_embedding = nn.Parameter(token_embeddings.detach().mean(dim=0).clone())
        self.register_buffer("vocab_keep", torch.ones(vocab_size, dtype=torch.bool))
        self.register_buffer("positions", sinusoidal_positions(max_length, hidden), persistent=False)
        self.input_proj = nn.Linear(dim, hidden)
        self.blocks = nn.ModuleList(AttentionBlock(hidden, heads, feed_forward) for _ in range(layers))
        self.norm = nn.LayerNorm(hidden)
        self.head = nn.Linear(hidden, vocab_size)

    @property
    def mask_id(self) -> int:
        return self.vocab_size

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) > self.mask_id):
            raise VocabularyError(f"token ids outside [0, {self.vocab_size}) and not MASK ({self.mask_id})")
        table = torch.cat([self.token_embeddings, self.mask_embedding.unsqueeze(0)], dim=0)
        return table[ids]

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        length = ids.shape[-1]
        if length > self.max_length:
            raise ShapeError(f"sequence of {length} tokens exceeds predictor length {self.max_length}")
        h = self.input_proj(self.embed(ids)) + self.positions[:length]
        for block in self.blocks:
            h = block(h)
        return self.head(self.norm(h))


def predictor_forward(tokens: Union[TokenSequence, torch.Tensor], predictor: TokenPredictor) -> torch.Tensor:
    ids = tokens.ids if isinstance(tokens, TokenSequence) else tokens
    return predictor(ids)


def diffusion_loss(logits: torch.Tensor, targets: torch.Tensor, mask_indicator: torch.Tensor) -> torch.Tensor:
    """Cross-entropy averaged over masked positions only."""
    if not bool(mask_indicator.any()):
        raise DegenerateBatchError("diffusion loss needs at least one masked position")
    return softmax_cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), mask_indicator.reshape(-1).to(logits.dtype)
    )


@dataclass
class RoundRecord:
    round_index: int
    positions: List[int]
    token_ids: List[int]
    confidences: List[float]


@dataclass
class DenoiseTrace:
    rounds: List[RoundRecord] = field(default_factory=list)

    def restored_positions(self) -> List[int]:
        return [p for r in self.rounds for p in r.positions]

    def to_dict(self) -> dict:
        return {"rounds": [asdict(r) for r in self.rounds]}


def rounds_schedule(future_len: int, steps: int) -> List[int]:
    """Tokens restored per round: future_len // steps each, the remainder folded into the last round."""
    if steps < 1 or future_len < 1:
        raise ConfigError(f"need steps >= 1 and future length >= 1 (got {steps}, {future_len})")
    if steps > future_len:
        raise ConfigError(f"{steps} inference rounds exceed {future_len} future tokens")
    per_round = future_len // steps
    return [per_round] * (steps - 1) + [future_len - per_round * (steps - 1)]


@torch.no_grad()
def denoise_batch(
    history_ids: torch.Tensor, future_len: int, steps: int, predictor: TokenPredictor
) -> Tuple[torch.Tensor, List[DenoiseTrace]]:
    """
    Confidence-ranked iterative unmasking for a batch of histories [B, n_h].

    Confidence is the max softmax probability; ties go to the lower position,
    then the lower token id. Restored positions are never revised.
    """
    schedule = rounds_schedule(future_len, steps)
    batch, n_hist = history_ids.shape
    mask_id = predictor.mask_id
    future = torch.full((batch, future_len), mask_id, dtype=torch.long)
    traces = [DenoiseTrace() for _ in range(batch)]
    for round_index, count in enumerate(schedule):
        logits = predictor(torch.cat([history_ids, future], dim=1))[:, n_hist:, :]
        logits = logits.masked_fill(~predictor.vocab_keep, float("-inf"))
        probs = logits.softmax(dim=-1)
        best = probs.argmax(dim=-1)
        confidence = probs.gather(-1, best.unsqueeze(-1)).squeeze(-1)
        for b in range(batch):
            masked = (future[b] == mask_id).nonzero().squeeze(1)
            order = torch.sort(confidence[b, masked], descending=True, stable=True).indices[:count]
            chosen = masked[order]
            future[b, chosen] = best[b, chosen]
            traces[b].rounds.append(
                RoundRecord(
                    round_index=round_index,
                    positions=chosen.tolist(),
                    token_ids=best[b, chosen].tolist(),
                    confidences=confidence[b, chosen].tolist(),
                )
            )
    return future, traces


def denoise_infer(
    history: TokenSequence, future_len: int, steps: int, predictor: TokenPredictor
) -> Tuple[TokenSequence, Union[DenoiseTrace, List[DenoiseTrace]]]:
    batched = history.ids.dim() == 2
    ids = history.ids if batched else history.ids.unsqueeze(0)
    future, traces = denoise_batch(ids, future_len, steps, predictor)
    out = TokenSequence(future if batched else future.squeeze(0), history.vocab_size, history.patch_length, history.wave_length)
    return out, (traces if batched else traces[0])


def write_trace_jsonl(traces: Sequence[DenoiseTrace], path: Union[str, Path], start_index: int = 0) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for i, trace in enumerate(traces, start=start_index):
            fh.write(json.dumps({"window": i, **trace.to_dict()}) + "\n")
    logger.debug("Appended %d denoise traces to %s", len(traces), path)
