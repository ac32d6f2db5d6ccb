"""Relation-aware contrastive self-supervised learning: a momentum-contrast trainer with
similarity-distribution alignment and interpolation-consistency terms."""

from .config import TrainConfig, load_config
from .encoder import Encoder
from .losses import global_loss, infonce, local_loss, total_loss
from .membank import MemoryBank
from .trainer import Trainer, pretrain

__all__ = [
    "Encoder",
    "MemoryBank",
    "TrainConfig",
    "Trainer",
    "global_loss",
    "infonce",
    "load_config",
    "local_loss",
    "pretrain",
    "total_loss",
]
__version__ = "0.1.0"
