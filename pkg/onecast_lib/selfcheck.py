# selfcheck.py

"""
Numeric self-check battery behind `onecast selfcheck`: gradient checks,
quantizer brute-force oracle, scheduler ranges, absorbing-marginal oracle,
token-budget table and the denoiser round contract.
"""

import logging
import time
from typing import Callable, Dict, List, Optional, Tuple

import pandas as pd
import torch

from .config import ModelConfig
from .diffusion import (
    SCHEDULER_KINDS,
    TokenPredictor,
    absorbing_marginal,
    cumulative_transition,
    denoise_batch,
    diffusion_loss,
    mask_probability,
)
from .evaluator import token_budget
from .model import OneCastModel
from .numerics import AttentionBlock, conv1d, finite_difference_check, linear, softmax_cross_entropy
from .seasonal import build_basis
from .tokenizer import nearest_codes

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-4

# (channels, patching, per_value, text, onecast) at L=96, P=16, k=3, M=437
TOKEN_BUDGET_TABLE = {
    "CzeLan": (11, 66, 1056, 3168, 443),
    "FRED-MD": (107, 642, 10272, 30816, 443),
    "Traffic": (862, 5172, 82752, 248256, 443),
    "Wike2000": (2000, 12000, 192000, 576000, 443),
}

CheckResult = Tuple[bool, str]


def tiny_model_config(**overrides) -> ModelConfig:
    values = dict(
        moving_average_window=5,
        basis_periods=[24.0, 12.0],
        seasonal_hidden=4,
        codebook_size=6,
        code_dim=3,
        patch_length=8,
        wave_length=4,
        conv_width=3,
        conv_blocks=1,
        transformer_hidden=8,
        transformer_layers=1,
        transformer_heads=2,
        transformer_ff=8,
    )
    values.update(overrides)
    return ModelConfig(**values)


def tiny_model(seed: int = 0, history_length: int = 16, horizon: int = 16, channels: int = 2, **overrides) -> OneCastModel:
    torch.manual_seed(seed)
    cfg = tiny_model_config(**overrides)
    model = OneCastModel(cfg, build_basis(cfg.basis_periods), history_length, horizon)
    model.register_domain("toy", channels)
    return model


def check_layer_gradients(seeds: int = 5) -> CheckResult:
    worst = 0.0
    for seed in range(seeds):
        g = torch.Generator().manual_seed(seed)
        x = torch.randn(3, 4, generator=g, requires_grad=True)
        w = torch.randn(4, 2, generator=g, requires_grad=True)
        b = torch.randn(2, generator=g, requires_grad=True)
        worst = max(worst, finite_difference_check(lambda: linear(x, w, b).sin().sum(), [x, w, b]))

        xc = torch.randn(2, 7, generator=g, requires_grad=True)
        k = torch.randn(3, 2, 3, generator=g, requires_grad=True)
        worst = max(worst, finite_difference_check(lambda: conv1d(xc, k, stride=2, padding=1).pow(2).sum(), [xc, k]))

        logits = torch.randn(5, 4, generator=g, requires_grad=True)
        targets = torch.randint(0, 4, (5,), generator=g)
        weights = torch.tensor([1.0, 0.0, 1.0, 1.0, 0.0])
        worst = max(worst, finite_difference_check(lambda: softmax_cross_entropy(logits, targets, weights), [logits]))

        torch.manual_seed(seed)
        block = AttentionBlock(4, heads=2, feed_forward=6)
        xa = torch.randn(2, 3, 4, generator=g, requires_grad=True)
        worst = max(worst, finite_difference_check(lambda: block(xa).tanh().sum(), [xa, *block.parameters()]))
    return worst < GRADIENT_TOLERANCE, f"max relative error {worst:.2e}"


def check_joint_gradients(seeds: int = 3) -> CheckResult:
    """L_joint wrt every parameter downstream of quantization."""
    worst = 0.0
    for seed in range(seeds):
        model = tiny_model(seed)
        torch.nn.init.normal_(model.seasonal.net[-1].weight, std=0.1)
        g = torch.Generator().manual_seed(seed)
        history = torch.randn(2, 16, 2, generator=g)
        future = torch.randn(2, 16, 2, generator=g)
        downstream = [*model.seasonal.parameters(), *model.tokenizer.decoder_h.parameters(),
                      *model.tokenizer.decoder_f.parameters()]
        worst = max(worst, finite_difference_check(
            lambda: model.joint_losses(history, future, "toy", gamma=1.0).joint, downstream))
    return worst < GRADIENT_TOLERANCE, f"max relative error {worst:.2e}"


def check_codebook_gradients(seeds: int = 3) -> CheckResult:
    """
    The stop-gradient codebook loss must give E and M the gradient of the
    squared code distance, and the encoder beta times that gradient.
    """
    worst_fd, worst_match = 0.0, 0.0
    for seed in range(seeds):
        model = tiny_model(seed)
        g = torch.Generator().manual_seed(seed)
        trend = model.decompose(torch.randn(2, 16, 2, generator=g)).trend
        codebook = model.tokenizer.codebook
        encoder = list(model.tokenizer.encoder.parameters())
        upstream = [codebook.E, codebook.M, *encoder]

        def distance() -> torch.Tensor:
            z = model.tokenizer.encode(trend, "toy")
            codes = codebook.transformed()
            tokens = nearest_codes(z.detach(), codes.detach())
            return ((z - codes[tokens]) ** 2).sum(dim=(-2, -1)).mean()

        worst_fd = max(worst_fd, finite_difference_check(distance, upstream))
        from_loss = torch.autograd.grad(model.tokenizer.tokenize(trend, "toy").codebook_loss, upstream)
        from_distance = torch.autograd.grad(distance(), upstream)
        scales = [1.0, 1.0] + [codebook.beta] * len(encoder)
        for a, b, s in zip(from_loss, from_distance, scales):
            worst_match = max(worst_match, float((a - s * b).abs().max()))
    ok = worst_fd < GRADIENT_TOLERANCE and worst_match < 1e-12
    return ok, f"distance gradient error {worst_fd:.2e}, loss/distance mismatch {worst_match:.2e}"


def check_diffusion_gradients(seeds: int = 3) -> CheckResult:
    worst = 0.0
    for seed in range(seeds):
        torch.manual_seed(seed)
        predictor = TokenPredictor(torch.randn(5, 3), max_length=8, hidden=4, layers=1, heads=2, feed_forward=6)
        g = torch.Generator().manual_seed(seed)
        ids = torch.randint(0, 5, (2, 8), generator=g)
        masked = torch.zeros(2, 8, dtype=torch.bool)
        masked[:, 4:] = True
        corrupted = torch.where(masked, torch.full_like(ids, predictor.mask_id), ids)
        worst = max(worst, finite_difference_check(
            lambda: diffusion_loss(predictor(corrupted), ids, masked), list(predictor.parameters())))
    return worst < GRADIENT_TOLERANCE, f"max relative error {worst:.2e}"


def check_quantizer_oracle(instances: int = 1000) -> CheckResult:
    g = torch.Generator().manual_seed(0)
    mismatches = 0
    for i in range(instances):
        n = int(torch.randint(1, 17, (1,), generator=g))
        k = int(torch.randint(1, 17, (1,), generator=g))
        d = int(torch.randint(1, 5, (1,), generator=g))
        codes = torch.randn(k, d, generator=g)
        z = torch.randn(n, d, generator=g)
        if i % 4 == 0 and k > 1:
            # duplicated code: the tie must go to the lower index
            codes[k - 1] = codes[0]
            z[0] = codes[0] + 1e-3
        fast = nearest_codes(z, codes)
        for row in range(n):
            dists = [float(((z[row] - codes[c]) ** 2).sum()) for c in range(k)]
            expected = min(range(k), key=lambda c: (dists[c], c))
            mismatches += int(fast[row]) != expected
    return mismatches == 0, f"{mismatches} mismatches over {instances} instances"


def check_scheduler_ranges() -> CheckResult:
    bad = []
    for kind in SCHEDULER_KINDS:
        for t in torch.linspace(0, 1, 101).tolist():
            p = mask_probability(kind, t)
            if not 0.0 <= p <= 1.0:
                bad.append((kind, t, p))
    return not bad, f"{len(bad)} out-of-range values" if bad else "all kinds map [0, 1] into [0, 1]"


def check_absorbing_marginal() -> CheckResult:
    g = torch.Generator().manual_seed(0)
    betas = torch.rand(10, generator=g, dtype=torch.float64).mul(0.3).tolist()
    worst = 0.0
    for step in range(len(betas) + 1):
        q_bar = cumulative_transition(betas[:step], num_symbols=2)
        for symbol in range(2):
            worst = max(worst, abs(float(q_bar[symbol, symbol]) - absorbing_marginal(betas, step)))
            worst = max(worst, abs(float(q_bar[symbol].sum()) - 1.0))
    return worst < 1e-12, f"max deviation {worst:.2e}"


def check_token_budget() -> CheckResult:
    wrong = []
    for name, (channels, *expected) in TOKEN_BUDGET_TABLE.items():
        got = [
            token_budget(method, 96, 16, channels, digits=3, vocab_tokens=437)
            for method in ("patching", "per_value", "text", "onecast")
        ]
        if got != expected:
            wrong.append(name)
    return not wrong, f"mismatched columns: {wrong}" if wrong else "all 16 cells exact"


def check_denoiser_contract() -> CheckResult:
    torch.manual_seed(0)
    predictor = TokenPredictor(torch.randn(8, 4), max_length=48, hidden=8, layers=1, heads=2)
    history = torch.randint(0, 8, (2, 24))
    first, traces = denoise_batch(history, 24, 4, predictor)
    second, _ = denoise_batch(history, 24, 4, predictor)
    rounds = [len(r.positions) for r in traces[0].rounds]
    ok = rounds == [6, 6, 6, 6] and not bool((first == predictor.mask_id).any()) and torch.equal(first, second)
    return ok, f"restorations per round {rounds}"


CHECKS: Dict[str, Callable[[], CheckResult]] = {
    "layer_gradients": check_layer_gradients,
    "joint_gradients": check_joint_gradients,
    "codebook_gradients": check_codebook_gradients,
    "diffusion_gradients": check_diffusion_gradients,
    "quantizer_oracle": check_quantizer_oracle,
    "scheduler_ranges": check_scheduler_ranges,
    "absorbing_marginal": check_absorbing_marginal,
    "token_budget": check_token_budget,
    "denoiser_contract": check_denoiser_contract,
}


def run_selfcheck(inject_fault: Optional[str] = None, only: Optional[List[str]] = None) -> pd.DataFrame:
    """Run the battery and return one row per check: name, passed, detail, seconds."""
    rows = []
    for name in only or list(CHECKS):
        start = time.perf_counter()
        try:
            passed, detail = CHECKS[name]()
        except Exception as e:  # a crashing check is a failed check
            logger.exception("Self-check %s raised", name)
            passed, detail = False, f"{type(e).__name__}: {e}"
        if name == inject_fault:
            passed, detail = False, "fault injected"
        rows.append({"check": name, "passed": passed, "detail": detail,
                     "seconds": round(time.perf_counter() - start, 3)})
        logger.debug("Self-check %s: %s (%s)", name, "PASS" if passed else "FAIL", detail)
    return pd.DataFrame(rows, columns=["check", "passed", "detail", "seconds"])
