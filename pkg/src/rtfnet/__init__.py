"""RTF-Net salt-and-pepper denoiser on a small numpy autodiff core."""
from .kernels import BACKEND
from .model import ArchConfig, ModelParams, init_params, rtfnet_forward
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "BACKEND",
    "ModelParams",
    "Tensor",
    "backward",
    "init_params",
    "no_grad",
    "rtfnet_forward",
]
