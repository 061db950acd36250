"""polyrefine: semi-automatic region boundary annotation.

A trainable two-stage pipeline: an attention-guided mask network produces a
region mask estimate, geometry converts it to a sampled boundary polygon, and
a residual graph-convolutional refiner displaces the polygon onto the region
boundary.  Ships with a training harness, evaluation metrics, an HTTP
inference service, and a command-line tool.
"""

from .autodiff import Tensor

__version__ = "0.1.0"

__all__ = ["Tensor", "BoundaryAnnotator", "__version__"]


def __getattr__(name):
    # estimator pulls in the full pipeline; import it only when asked for
    if name == "BoundaryAnnotator":
        from .estimator import BoundaryAnnotator

        return BoundaryAnnotator
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
