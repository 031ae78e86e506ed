"""Saliency-guided training on a small numpy autodiff engine.

Submodules: ``autodiff`` (tensors and reverse-mode gradients), ``models``,
``saliency``, ``training``, ``datasets``, ``evaluation``, ``checkpoint``,
``config``, ``report`` and ``cli``.
"""

from .autodiff import Tensor, backward, grad
from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import Dataset, generate, load_csv, load_idx
from .errors import SGTError
from .models import ModelSpec, build_model
from .saliency import compute as compute_saliency
from .training import TrainConfig, TrainReport, train

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "grad", "load_checkpoint", "save_checkpoint", "Dataset", "generate",
           "load_csv", "load_idx", "SGTError", "ModelSpec", "build_model", "compute_saliency", "TrainConfig",
           "TrainReport", "train", "__version__"]
