"""
OneCast: cross-domain time series forecasting from a seasonal basis and
discrete trend tokens generated by masked diffusion.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import DatasetSpec, ModelConfig, RunConfig, TrainConfig, load_run_config
from .decomposition import SeriesWindow, decompose_window
from .model import OneCastModel
from .pipeline import forecast, run_training, train_stage1, train_stage2
