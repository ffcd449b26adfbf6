"""Hot numeric kernels with two interchangeable backends.

The compiled Cython extension (_core) is used when importable; the numpy
reference implementation is the fallback and the semantics of record.
Set MORPHOME_PURE_PYTHON=1 to force the fallback. `BACKEND` names the
active choice; both backends expose the same seven functions.
"""

import os

from . import reference

_FORCE_PURE = os.environ.get("MORPHOME_PURE_PYTHON", "").strip() not in ("", "0")

if not _FORCE_PURE:
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = reference
        BACKEND = "numpy"
else:
    _impl = reference
    BACKEND = "numpy"

# softmax_forward stays on numpy either way: its cost is the exp, which
# numpy evaluates with SIMD while a scalar C loop cannot (measured ~5x on
# float32 in benchmarks/bench_kernels.py).
softmax_forward = reference.softmax_forward
softmax_backward = _impl.softmax_backward
layernorm_forward = _impl.layernorm_forward
layernorm_backward = _impl.layernorm_backward
relu_forward = _impl.relu_forward
relu_backward = _impl.relu_backward
adam_update = _impl.adam_update

__all__ = [
    "BACKEND",
    "adam_update",
    "layernorm_backward",
    "layernorm_forward",
    "reference",
    "relu_backward",
    "relu_forward",
    "softmax_backward",
    "softmax_forward",
]
