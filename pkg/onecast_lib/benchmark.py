# benchmark.py

"""
Test-split evaluation harness: per-horizon metrics for a checkpoint against
the seasonal-only ablation and the repeat-last-value baseline, with JSON / CSV
report writers and an optional SVG plot.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import matplotlib
import pandas as pd
import torch
from tqdm import tqdm

from .checkpoint import Checkpoint
from .dataset import WindowPairs
from .decomposition import denormalize, residual_component_rate
from .errors import ConfigError, DatasetError, UndefinedRateError
from .evaluator import EvalReport, HorizonReport, amad, amad_per_channel, mse_mae, reconstruction_rate
from .model import OneCastModel
from .pipeline import denoised_token_accuracy, forecast_pairs, repeat_last_baseline, tokenize_windows
from .seasonal import evaluate_basis, fit_weights_least_squares

logger = logging.getLogger(__name__)

DEFAULT_HORIZONS = (24, 48, 96, 192)


@torch.no_grad()
def future_trend_reconstruction(model: OneCastModel, pairs: WindowPairs, domain_id: str) -> torch.Tensor:
    """Squared error per point of decoding the true future tokens, in original units: [N, L_f, C]."""
    dec_h = model.decompose(pairs.history)
    dec_f = model.decompose(pairs.future)
    q = model.tokenizer.tokenize(dec_f.trend, domain_id)
    decoded = denormalize(model.tokenizer.decode_future(q.z_q, domain_id), dec_h.stats)
    return (decoded - denormalize(dec_f.trend, dec_f.stats)) ** 2


@torch.no_grad()
def residual_rate(model: OneCastModel, history: torch.Tensor) -> float:
    """RCR of (trend, basis-fitted season, fit residual) over the normalized history windows."""
    dec = model.decompose(history)
    weights = fit_weights_least_squares(model.basis, dec.season)
    season = evaluate_basis(model.basis, weights, 0, history.shape[-2])
    return residual_component_rate(dec.trend, season, dec.season - season)


def _row(horizon: int, method: str, truth: torch.Tensor, pred: torch.Tensor, **extra) -> HorizonReport:
    mse, mae = mse_mae(truth, pred)
    return HorizonReport(
        horizon=horizon,
        method=method,
        windows=truth.shape[0],
        mse=mse,
        mae=mae,
        amad=amad(list(truth), list(pred)),
        amad_per_channel=amad_per_channel(truth, pred),
        **extra,
    )


def run_evaluation(
    ckpt: Checkpoint,
    pairs: WindowPairs,
    domain_id: str,
    horizons: Sequence[int] = DEFAULT_HORIZONS,
    steps: Optional[int] = None,
    oracle: bool = False,
    baselines: bool = True,
    checkpoint_name: str = "",
    show_progress: bool = True,
) -> EvalReport:
    """
    Score the checkpoint on test pairs whose future has the trained horizon.

    Shorter horizons are scored on the leading steps of the same forecasts.
    With oracle=True predictions are replaced by the truth (harness check).
    """
    model = ckpt.model
    if len(pairs) == 0:
        raise DatasetError(f"domain {domain_id!r} has no test window pairs")
    too_long = [h for h in horizons if h > model.horizon or h < 1]
    if too_long:
        raise ConfigError(f"horizons {too_long} outside [1, {model.horizon}] for this checkpoint")

    logger.info("=== Evaluating %s on %d test windows ===", domain_id, len(pairs))
    has_predictor = model.predictor is not None
    truth = pairs.future
    if oracle:
        full = truth.clone()
    elif has_predictor:
        full = forecast_pairs(model, domain_id, pairs.history, steps=steps)
    else:
        full = None
    seasonal = forecast_pairs(model, domain_id, pairs.history, components="seasonal")
    last = repeat_last_baseline(pairs.history, model.horizon)

    accuracy = None
    if has_predictor:
        tokens_h, tokens_f = tokenize_windows(model, domain_id, pairs)
        accuracy = denoised_token_accuracy(model.predictor, tokens_h, tokens_f, steps or model.cfg.inference_steps)
    rcr = residual_rate(model, pairs.history)
    rec_error = future_trend_reconstruction(model, pairs, domain_id)

    report = EvalReport(
        domain_id=domain_id,
        checkpoint=checkpoint_name,
        stages=["joint"] + (["diffusion"] if has_predictor else []),
        inference_steps=(steps or model.cfg.inference_steps) if has_predictor else None,
    )
    for h in tqdm(horizons, desc="Horizons", disable=not show_progress):
        y = truth[:, :h]
        if full is not None:
            final = full[:, :h]
            rec_mse = float(rec_error[:, :h].mean())
            try:
                rate = reconstruction_rate(rec_mse, mse_mae(y, final)[0])
            except UndefinedRateError:
                logger.warning("Reconstruction rate undefined at horizon %d (final MSE is 0)", h)
                rate = None
            report.rows.append(
                _row(h, "onecast", y, final, token_accuracy=accuracy, reconstruction_mse=rec_mse,
                     reconstruction_rate=rate, rcr=rcr)
            )
        if baselines:
            report.rows.append(_row(h, "seasonal_only", y, seasonal[:, :h], rcr=rcr))
            report.rows.append(_row(h, "repeat_last", y, last[:, :h]))
    for row in report.rows:
        logger.info("h=%d %-13s MSE %.6f MAE %.6f AMAD %.6f", row.horizon, row.method, row.mse, row.mae, row.amad)
    return report


def write_report_json(report: EvalReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    return path


def write_report_csv(reports: Union[EvalReport, List[EvalReport]], path: Union[str, Path]) -> Path:
    reports = [reports] if isinstance(reports, EvalReport) else reports
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([row for r in reports for row in r.table()]).to_csv(path, index=False, float_format="%.17g")
    return path


def plot_forecast_svg(
    history: torch.Tensor,
    truth: Optional[torch.Tensor],
    prediction: torch.Tensor,
    path: Union[str, Path],
    title: str = "",
) -> Path:
    """Line plot per channel: history, then truth vs forecast over the horizon."""
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    channels = history.shape[-1]
    fig, axes = plt.subplots(channels, 1, figsize=(10, 2.5 * channels), squeeze=False)
    t_h = range(history.shape[0])
    t_f = range(history.shape[0], history.shape[0] + prediction.shape[0])
    for c, ax in enumerate(axes[:, 0]):
        ax.plot(t_h, history[:, c].numpy(), color="0.5", label="history")
        if truth is not None:
            ax.plot(t_f, truth[:, c].numpy(), color="tab:blue", label="truth")
        ax.plot(t_f, prediction[:, c].numpy(), color="tab:orange", label="forecast")
        ax.set_ylabel(f"ch{c}")
    axes[0, 0].legend(loc="upper left")
    if title:
        axes[0, 0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
