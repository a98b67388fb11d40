"""Hot-kernel dispatch: numba-jitted loops or a pure-numpy fallback.

The backend is chosen once at import from the DGDENSE_KERNELS environment
variable: "numba" (require the jit path), "numpy" (force the fallback), or
"auto"/unset (jit if numba imports, numpy otherwise). Both paths implement
identical math; floating-point summation order may differ in the last bits,
so bit-level determinism guarantees hold per backend.
"""

import os

_KERNEL_NAMES = [
    "layernorm_fwd", "layernorm_bwd",
    "softmax_fwd", "softmax_bwd",
    "gelu_fwd", "gelu_bwd",
    "sigmoid_fwd", "sigmoid_bwd",
    "cross_entropy_fwd",
    "bce_logits_fwd", "bce_logits_bwd",
    "adamw_update",
    "resize_bilinear_fwd", "resize_bilinear_bwd",
    "confusion_update",
    "affine_warp",
    "lap_min_cost",
]


def load_backend(name):
    """Import one backend module by name ("numba" or "numpy")."""
    if name == "numba":
        from . import _jit
        return _jit
    if name == "numpy":
        from . import _ref
        return _ref
    raise ValueError(f"unknown kernel backend {name!r} (expected 'numba' or 'numpy')")


def _select():
    choice = os.environ.get("DGDENSE_KERNELS", "auto").strip().lower()
    if choice in ("numpy", "np"):
        return "numpy", load_backend("numpy")
    if choice in ("numba", "jit"):
        return "numba", load_backend("numba")
    if choice not in ("", "auto"):
        raise ValueError(f"DGDENSE_KERNELS={choice!r}; expected numba, numpy or auto")
    try:
        return "numba", load_backend("numba")
    except ImportError:
        return "numpy", load_backend("numpy")


BACKEND, _mod = _select()

for _name in _KERNEL_NAMES:
    globals()[_name] = getattr(_mod, _name)

__all__ = _KERNEL_NAMES + ["BACKEND", "load_backend"]
