"""Reconstruction of Lorentzian interiors from boundary data on desk-scale models."""
import os as _os

# thread caps must be in place before numpy loads its BLAS
if _os.environ.get("CAUSAL_LENS_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["CAUSAL_LENS_THREADS"])

from .errors import CausalLensError  # noqa: E402
from .models import MODEL_NAMES, make_model  # noqa: E402

__version__ = "0.1.0"
__all__ = ["CausalLensError", "MODEL_NAMES", "make_model", "__version__"]
