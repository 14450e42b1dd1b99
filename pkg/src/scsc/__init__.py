"""Online convolutional sparse coding with sample-dependent dictionaries.

Each sample ``x_i`` is coded against its own filters ``D_i = B W_i``, built
from ``R`` shared base filters ``B`` and per-sample combination weights
``W_i``.  The base filters are learned online from running per-frequency
statistics whose size scales with ``R^2`` rather than ``K^2``.
"""

from .core import FilterBank, compression_ratio, psnr, reconstruct
from .errors import ConvergenceError, InvalidInputError, NumericalError, ScscError
from .fftops import FilterSupport
from .ocsc import init_ocsc, ocsc_infer, ocsc_train, ocsc_train_step
from .online import infer, init_model, memory_footprint, train, train_step
from .persistence import load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "FilterBank", "FilterSupport", "InvalidInputError", "NumericalError",
    "ScscError", "compression_ratio", "infer", "init_model", "init_ocsc", "load_model",
    "memory_footprint", "ocsc_infer", "ocsc_train", "ocsc_train_step", "psnr", "reconstruct",
    "save_model", "train", "train_step",
]
