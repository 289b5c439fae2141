"""Contrastive predictive coding for raw audio on a small numpy autodiff core."""

from .data import Checkpoint, DataError, Utterance, load_checkpoint, save_checkpoint, synth_dataset
from .model import CPCModel, ModelConfig

__all__ = [
    "CPCModel",
    "Checkpoint",
    "DataError",
    "ModelConfig",
    "Utterance",
    "load_checkpoint",
    "save_checkpoint",
    "synth_dataset",
]

__version__ = "0.1.0"
