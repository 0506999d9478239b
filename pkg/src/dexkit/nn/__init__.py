from .autodiff import Tensor, backward, precision
from .checkpoint import CheckpointFormatError, load_checkpoint, load_into, save_checkpoint
from .layers import MLP, Linear, PointNet, PointNetSpec
from .optim import Adam, clip_grad_norm
from .params import ParamStore

__all__ = [
    "Adam",
    "CheckpointFormatError",
    "Linear",
    "MLP",
    "ParamStore",
    "PointNet",
    "PointNetSpec",
    "Tensor",
    "backward",
    "clip_grad_norm",
    "load_checkpoint",
    "load_into",
    "precision",
    "save_checkpoint",
]
