"""Alignment-free RGB/thermal salient object detection toolkit.

Layers, bottom up: `kernels` (numba/numpy hot loops), `tensor` (autodiff),
`acm`/`afsm`/`network` (the model), `losses`/`train` (optimisation),
`metrics` (evaluation), `datagen` (synthetic pairs), `io` (file formats)
and `cli` (command line).
"""

from .kernels import BACKEND
from .network import SACNet, SACNetConfig, ablation_config

__version__ = "0.1.0"
__all__ = ["BACKEND", "SACNet", "SACNetConfig", "ablation_config", "__version__"]
