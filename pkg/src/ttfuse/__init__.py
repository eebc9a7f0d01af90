"""Multimodal medical image fusion with statistics-driven weights and test-time training."""

from .errors import FusionError
from .fusion import TTTConfig, fuse_pipeline, ttt_adapt
from .network import FusionNet, build_network
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = ["FusionError", "FusionNet", "TTTConfig", "TrainConfig", "build_network",
           "fuse_pipeline", "load_checkpoint", "save_checkpoint", "train", "ttt_adapt"]
