"""Ghost-free multi-exposure HDR fusion on a small numpy autodiff engine.

Modules:

* :mod:`hdrba.autodiff`, :mod:`hdrba.ops`: tensors, reverse mode, and the
  convolution / deformable sampling / contextual attention operators.
* :mod:`hdrba.radiometry`, :mod:`hdrba.imageio`: exposure model, mu-law
  tonemapping, PPM/PFM files.
* :mod:`hdrba.networks`, :mod:`hdrba.losses`, :mod:`hdrba.metrics`: the
  two-stage network, its training losses and the evaluation metrics.
* :mod:`hdrba.dataset`, :mod:`hdrba.trainer`, :mod:`hdrba.cli`: data,
  training and the command line.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, no_grad  # noqa: E402
from .networks import HDRNet, NetConfig  # noqa: E402
from .trainer import TrainConfig, infer, train  # noqa: E402

__all__ = ["__version__", "Tensor", "backward", "no_grad", "HDRNet", "NetConfig", "TrainConfig", "infer", "train"]
