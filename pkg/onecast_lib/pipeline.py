"""
Two-stage training and the end-to-end forecast path.

Stage I optimizes the seasonal predictor and the trend tokenizer jointly on
L_joint. Stage II freezes both, tokenizes every window pair once and trains the
masked-diffusion token predictor on the frozen vocabulary.
"""

import copy
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import torch
from tqdm import tqdm

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, TrainConfig, derive_seed
from .dataset import DomainWindows, WindowPairs
from .decomposition import SeriesWindow
from .diffusion import DenoiseTrace, TokenPredictor, denoise_batch, diffusion_loss, mask_ids, mask_probability
from .errors import CheckpointError, ConfigError, DatasetError, DegenerateBatchError, DivergenceError
from .evaluator import token_accuracy
from .model import OneCastModel, basis_for
from .tokenizer import abandon_rare_tokens, token_frequencies

logger = logging.getLogger(__name__)

TokenPairs = Tuple[torch.Tensor, torch.Tensor]  # history ids [N, n_h], future ids [N, n_f]


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def round_robin_batches(
    sizes: Dict[str, int], batch_size: int, generator: Optional[torch.Generator] = None
) -> Iterator[Tuple[str, torch.Tensor]]:
    """
    Interleave per-domain shuffled batches: one batch of each domain in turn
    until every domain is exhausted. Domains are visited in sorted order.
    """
    queues = {}
    for domain_id in sorted(sizes):
        perm = torch.randperm(sizes[domain_id], generator=generator)
        queues[domain_id] = list(torch.split(perm, batch_size))
    while any(queues.values()):
        for domain_id in sorted(queues):
            if queues[domain_id]:
                yield domain_id, queues[domain_id].pop(0)


def select_best_epoch(val_losses: Sequence[float]) -> int:
    """Index of the lowest validation loss; the earliest epoch wins ties."""
    if not val_losses:
        raise ConfigError("no validation losses recorded")
    return min(range(len(val_losses)), key=lambda i: (val_losses[i], i))


def _optimizer(params, cfg: TrainConfig):
    optimizer = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: cfg.lr_decay_factor ** (step // cfg.lr_decay_every_steps)
    )
    return optimizer, scheduler


def _open_log(log_path: Optional[Union[str, Path]]):
    if log_path is None:
        return nullcontext(None)
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    return open(log_path, "w", encoding="utf-8")


def _log_step(fh, record: dict) -> None:
    if fh is not None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _check_finite(stage: str, step: int, loss: torch.Tensor) -> None:
    if not math.isfinite(float(loss)):
        raise DivergenceError(stage, step, float(loss))


def _require_training_pairs(datasets: Sequence[DomainWindows]) -> None:
    if not datasets:
        raise DatasetError("training needs at least one dataset")
    for d in datasets:
        if len(d.train) == 0:
            raise DatasetError(f"domain {d.domain_id!r} has no training window pairs")


def _batch_seed(cfg: TrainConfig, name: str) -> torch.Generator:
    return torch.Generator().manual_seed(derive_seed(cfg.seed, name))


def build_model(datasets: Sequence[DomainWindows], run_cfg: RunConfig) -> OneCastModel:
    basis = basis_for(run_cfg.model, sorted({d.steps_per_day for d in datasets}))
    model = OneCastModel(run_cfg.model, basis, run_cfg.train.history_length, run_cfg.train.horizon)
    for d in sorted(datasets, key=lambda d: d.domain_id):
        model.register_domain(d.domain_id, d.channels)
    return model


@torch.no_grad()
def validation_joint_loss(model: OneCastModel, datasets: Sequence[DomainWindows], cfg: TrainConfig) -> float:
    """Mean L_joint over validation batches, teacher-forced as in training."""
    total, count = 0.0, 0
    for d in datasets:
        pairs = d.val if len(d.val) else d.train
        for idx in torch.arange(len(pairs)).split(cfg.batch_size):
            losses = model.joint_losses(pairs.history[idx], pairs.future[idx], d.domain_id, cfg.gamma)
            total += float(losses.joint) * len(idx)
            count += len(idx)
    return total / count


def train_stage1(
    datasets: Sequence[DomainWindows],
    run_cfg: RunConfig,
    log_path: Optional[Union[str, Path]] = None,
    show_progress: bool = True,
) -> Checkpoint:
    _require_training_pairs(datasets)
    cfg = run_cfg.train
    seed_everything(derive_seed(cfg.seed, "stage1.init"))
    model = build_model(datasets, run_cfg)
    params = [p for m in model.stage1_modules() for p in m.parameters()]
    optimizer, scheduler = _optimizer(params, cfg)
    batches = _batch_seed(cfg, "stage1.batches")
    sizes = {d.domain_id: len(d.train) for d in datasets}
    by_id = {d.domain_id: d for d in datasets}

    logger.info("Stage I: %d domains, %d parameters, %d epochs", len(datasets), sum(p.numel() for p in params), cfg.epochs)
    val_losses: List[float] = []
    best_state, step = None, 0
    with _open_log(log_path) as fh:
        for epoch in tqdm(range(cfg.epochs), desc="Stage I", disable=not show_progress):
            model.train()
            for domain_id, idx in round_robin_batches(sizes, cfg.batch_size, batches):
                pairs = by_id[domain_id].train
                losses = model.joint_losses(pairs.history[idx], pairs.future[idx], domain_id, cfg.gamma)
                _check_finite("joint", step, losses.joint)
                optimizer.zero_grad()
                losses.joint.backward()
                optimizer.step()
                lr = optimizer.param_groups[0]["lr"]
                scheduler.step()
                step += 1
                _log_step(fh, {"stage": "joint", "epoch": epoch, "step": step, "domain": domain_id, "lr": lr,
                               **losses.as_floats()})
            model.eval()
            val_losses.append(validation_joint_loss(model, datasets, cfg))
            logger.info("Stage I epoch %d: validation L_joint %.6f", epoch, val_losses[-1])
            if select_best_epoch(val_losses) == epoch:
                best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    best = select_best_epoch(val_losses)
    metadata = {"joint": {"best_epoch": best, "val_joint": val_losses[best], "epochs": cfg.epochs, "steps": step}}
    return Checkpoint(model=model, config=run_cfg, metadata=metadata)


def _tokenize_chunk(model: OneCastModel, domain_id: str, pairs: WindowPairs, idx: torch.Tensor) -> TokenPairs:
    return model.tokenize_pair(pairs.history[idx], pairs.future[idx], domain_id)


def tokenize_windows(
    model: OneCastModel,
    domain_id: str,
    pairs: WindowPairs,
    batch_size: int = 256,
    workers: int = 1,
    show_progress: bool = False,
) -> TokenPairs:
    """Frozen-tokenizer ids for every pair; chunks may run in a thread pool, results keep pair order."""
    n_h, n_f = model.history_tokens, model.future_tokens
    if len(pairs) == 0:
        return torch.empty(0, n_h, dtype=torch.long), torch.empty(0, n_f, dtype=torch.long)
    chunks = list(torch.arange(len(pairs)).split(batch_size))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(
            tqdm(
                pool.map(lambda idx: _tokenize_chunk(model, domain_id, pairs, idx), chunks),
                total=len(chunks),
                desc=f"Tokenizing {domain_id}",
                disable=not show_progress,
            )
        )
    return torch.cat([h for h, _ in results]), torch.cat([f for _, f in results])


def _corrupt_batch(
    future_ids: torch.Tensor, scheduler: str, mask_id: int, generator: torch.Generator
) -> Tuple[torch.Tensor, torch.Tensor]:
    t = torch.rand(future_ids.shape[0], generator=generator, dtype=torch.float64)
    p = torch.tensor([mask_probability(scheduler, float(ti)) for ti in t], dtype=torch.float64)
    return mask_ids(future_ids, p, mask_id, generator)


def diffusion_batch_loss(
    predictor: TokenPredictor, history_ids: torch.Tensor, future_ids: torch.Tensor, scheduler: str,
    generator: torch.Generator,
) -> torch.Tensor:
    """Corrupt the future ids at a per-element rate and score the masked positions."""
    corrupted, masked = _corrupt_batch(future_ids, scheduler, predictor.mask_id, generator)
    logits = predictor(torch.cat([history_ids, corrupted], dim=1))[:, history_ids.shape[1]:, :]
    return diffusion_loss(logits, future_ids, masked)


@torch.no_grad()
def validation_diffusion_loss(
    predictor: TokenPredictor, tokens: Dict[str, TokenPairs], scheduler: str, batch_size: int, seed: int
) -> float:
    generator = torch.Generator().manual_seed(seed)
    total, count = 0.0, 0
    for domain_id in sorted(tokens):
        history_ids, future_ids = tokens[domain_id]
        for idx in torch.arange(history_ids.shape[0]).split(batch_size):
            try:
                loss = diffusion_batch_loss(predictor, history_ids[idx], future_ids[idx], scheduler, generator)
            except DegenerateBatchError:
                continue
            total += float(loss) * len(idx)
            count += len(idx)
    return total / count if count else float("inf")


@torch.no_grad()
def denoised_token_accuracy(
    predictor: TokenPredictor, history_ids: torch.Tensor, future_ids: torch.Tensor, steps: int, batch_size: int = 256
) -> float:
    """Accuracy of full iterative inference against the tokenizer's future ids."""
    predicted = [
        denoise_batch(history_ids[idx], future_ids.shape[1], steps, predictor)[0]
        for idx in torch.arange(history_ids.shape[0]).split(batch_size)
    ]
    return token_accuracy(torch.cat(predicted), future_ids)


def fit_token_predictor(
    predictor: TokenPredictor,
    train_tokens: Dict[str, TokenPairs],
    val_tokens: Dict[str, TokenPairs],
    cfg: TrainConfig,
    scheduler: str = "cosine",
    epochs: Optional[int] = None,
    log_path: Optional[Union[str, Path]] = None,
    show_progress: bool = True,
) -> Dict[str, float]:
    """
    Train the predictor on tokenized pairs, keep the best validation epoch.

    Batches in which the corruption masked nothing are skipped and do not count
    as optimizer steps.
    """
    epochs = epochs or cfg.diffusion_epochs
    params = [p for p in predictor.parameters() if p.requires_grad]
    optimizer, lr_scheduler = _optimizer(params, cfg)
    batches = _batch_seed(cfg, "stage2.batches")
    corruption = _batch_seed(cfg, "stage2.corruption")
    sizes = {k: v[0].shape[0] for k, v in train_tokens.items() if v[0].shape[0]}
    val_tokens = {k: v for k, v in val_tokens.items() if v[0].shape[0]} or train_tokens

    val_losses: List[float] = []
    best_state, step, skipped = None, 0, 0
    with _open_log(log_path) as fh:
        for epoch in tqdm(range(epochs), desc="Stage II", disable=not show_progress):
            predictor.train()
            for domain_id, idx in round_robin_batches(sizes, cfg.batch_size, batches):
                history_ids, future_ids = train_tokens[domain_id]
                try:
                    loss = diffusion_batch_loss(predictor, history_ids[idx], future_ids[idx], scheduler, corruption)
                except DegenerateBatchError:
                    skipped += 1
                    continue
                _check_finite("diffusion", step, loss)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                lr = optimizer.param_groups[0]["lr"]
                lr_scheduler.step()
                step += 1
                _log_step(fh, {"stage": "diffusion", "epoch": epoch, "step": step, "domain": domain_id, "lr": lr,
                               "diffusion": float(loss)})
            predictor.eval()
            val_losses.append(
                validation_diffusion_loss(
                    predictor, val_tokens, scheduler, cfg.batch_size, derive_seed(cfg.seed, "stage2.val")
                )
            )
            logger.debug("Stage II epoch %d: validation diffusion loss %.6f", epoch, val_losses[-1])
            if select_best_epoch(val_losses) == epoch:
                best_state = copy.deepcopy(predictor.state_dict())

    predictor.load_state_dict(best_state)
    best = select_best_epoch(val_losses)
    if skipped:
        logger.info("Stage II skipped %d batches with no masked positions", skipped)
    return {"best_epoch": best, "val_diffusion": val_losses[best], "epochs": epochs, "steps": step, "skipped": skipped}


def train_stage2(
    datasets: Sequence[DomainWindows],
    stage1_ckpt: Checkpoint,
    run_cfg: RunConfig,
    log_path: Optional[Union[str, Path]] = None,
    show_progress: bool = True,
) -> Checkpoint:
    """Train the token predictor on a copy of the Stage-I model; the Stage-I parameters stay frozen."""
    _require_training_pairs(datasets)
    cfg = run_cfg.train
    seed_everything(derive_seed(cfg.seed, "stage2.init"))
    model = copy.deepcopy(stage1_ckpt.model)
    for m in model.stage1_modules():
        m.requires_grad_(False)
    model.eval()
    for d in datasets:
        if model.domains.get(d.domain_id) != d.channels:
            raise CheckpointError(f"domain {d.domain_id!r} ({d.channels} channels) is not in the Stage-I checkpoint")

    train_tokens = {
        d.domain_id: tokenize_windows(model, d.domain_id, d.train, workers=cfg.workers, show_progress=show_progress)
        for d in datasets
    }
    val_tokens = {d.domain_id: tokenize_windows(model, d.domain_id, d.val, workers=cfg.workers) for d in datasets}

    predictor = model.build_predictor()
    if run_cfg.model.abandon_threshold > 0:
        all_ids = torch.cat([torch.cat([h.reshape(-1), f.reshape(-1)]) for h, f in train_tokens.values()])
        predictor.vocab_keep.copy_(
            abandon_rare_tokens(token_frequencies(all_ids, predictor.vocab_size), run_cfg.model.abandon_threshold)
        )
    logger.info("Stage II: predictor with %d trainable parameters, scheduler %s",
                sum(p.numel() for p in predictor.parameters()), run_cfg.model.scheduler)

    summary = fit_token_predictor(
        predictor, train_tokens, val_tokens, cfg, run_cfg.model.scheduler, log_path=log_path,
        show_progress=show_progress,
    )
    val_h = torch.cat([h for h, _ in val_tokens.values()])
    val_f = torch.cat([f for _, f in val_tokens.values()])
    if val_h.shape[0]:
        summary["val_token_accuracy"] = denoised_token_accuracy(
            predictor, val_h, val_f, run_cfg.model.inference_steps
        )
    metadata = {**stage1_ckpt.metadata, "diffusion": summary}
    return Checkpoint(model=model, config=run_cfg, metadata=metadata)


def forecast(
    window: SeriesWindow,
    ckpt: Checkpoint,
    steps: Optional[int] = None,
    components: str = "full",
    traces: Optional[List[DenoiseTrace]] = None,
) -> torch.Tensor:
    """One L_f x C forecast in the original units of the window."""
    ckpt.model.eval()
    return ckpt.model.forecast_batch(window.values.unsqueeze(0), window.domain_id, steps, components, traces)[0]


def forecast_pairs(
    model: OneCastModel,
    domain_id: str,
    history: torch.Tensor,
    steps: Optional[int] = None,
    components: str = "full",
    batch_size: int = 256,
    traces: Optional[List[DenoiseTrace]] = None,
) -> torch.Tensor:
    model.eval()
    return torch.cat([
        model.forecast_batch(history[idx], domain_id, steps, components, traces)
        for idx in torch.arange(history.shape[0]).split(batch_size)
    ])


def repeat_last_baseline(history: torch.Tensor, horizon: int) -> torch.Tensor:
    """Repeat the last observed value of every channel across the horizon."""
    last = history[..., -1:, :]
    return last.expand(*last.shape[:-2], horizon, last.shape[-1]).clone()


def run_training(
    datasets: Sequence[DomainWindows], run_cfg: RunConfig, out_dir: Union[str, Path], show_progress: bool = True
) -> Dict[str, Path]:
    """Run the configured stage(s) and write stage1.ockpt / stage2.ockpt plus their JSON-lines logs."""
    out_dir = Path(out_dir)
    stage = run_cfg.train.stage
    written: Dict[str, Path] = {}
    if stage in ("joint", "both"):
        stage1 = train_stage1(datasets, run_cfg, out_dir / "stage1.log.jsonl", show_progress)
        written["stage1"] = save_checkpoint(stage1, out_dir / "stage1.ockpt")
    else:
        path = out_dir / "stage1.ockpt"
        if not path.exists():
            raise CheckpointError(f"--stage diffusion needs a Stage-I checkpoint at {path}")
        stage1 = load_checkpoint(path)
    if stage in ("diffusion", "both"):
        stage2 = train_stage2(datasets, stage1, run_cfg, out_dir / "stage2.log.jsonl", show_progress)
        written["stage2"] = save_checkpoint(stage2, out_dir / "stage2.ockpt")
    return written
