"""kanbench: a budget-matched KAN vs MLP comparison laboratory."""

__version__ = "0.1.0"

from .bspline import SplineSpec, basis_eval, basis_grad, make_knots, spline_eval, spline_eval_batch
from .layers import ArchSpec, build_model, model_backward, model_forward

__all__ = [
    "ArchSpec",
    "SplineSpec",
    "basis_eval",
    "basis_grad",
    "build_model",
    "make_knots",
    "model_backward",
    "model_forward",
    "spline_eval",
    "spline_eval_batch",
    "__version__",
]
