"""Log-polar transformer networks: differentiable polar resampling with a
learned origin, a from-scratch tape autodiff core, dataset generators, a
trainer, and an equivariance verification harness."""

from .autodiff import Tensor, Tape, backward
from .ops import PaddingMode

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "backward", "PaddingMode", "__version__"]
