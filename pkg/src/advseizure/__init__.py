"""Adversarial EEG decomposition for subject-independent seizure detection.

The package is layered bottom-up: ``tensor`` (reverse-mode autodiff) and
``optim`` (Adam), then ``nn`` and ``model``, then ``dataset``/``recordio``,
``trainer``, ``metrics`` and the leave-one-subject-out driver in ``protocol``.
"""

from .model import ModelConfig, ModelParameters, forward, init_params, load_checkpoint, predict_proba, save_checkpoint
from .trainer import TrainConfig, TrainLog, fit

__all__ = [
    "ModelConfig",
    "ModelParameters",
    "TrainConfig",
    "TrainLog",
    "fit",
    "forward",
    "init_params",
    "load_checkpoint",
    "predict_proba",
    "save_checkpoint",
]
__version__ = "0.1.0"
