"""Style-robust bitemporal change detection on a small numpy autograd core."""

from .kernels import BACKEND
from .tensor import Tensor, no_grad, parameter
from .network import NetConfig, SDNetwork, load_checkpoint, save_checkpoint
from .losses import LossConfig, PixelLabels, ctcr_kl, pos_weight, total_loss, weighted_bce
from .metrics import MetricsReport, binarize, confusion, metrics
from .data import GenConfig, ImagePairSample, generate_pair, generate_dataset
from .train import TrainConfig, evaluate, lr_at, sgd_step, train_step

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Tensor", "no_grad", "parameter", "NetConfig", "SDNetwork", "load_checkpoint", "save_checkpoint",
    "LossConfig", "PixelLabels", "ctcr_kl", "pos_weight", "total_loss", "weighted_bce", "MetricsReport",
    "binarize", "confusion", "metrics", "GenConfig", "ImagePairSample", "generate_pair", "generate_dataset",
    "TrainConfig", "evaluate", "lr_at", "sgd_step", "train_step",
]
