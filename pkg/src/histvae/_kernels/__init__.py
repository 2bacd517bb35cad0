"""Kernel backend selection.

The hot inner loops (GRU cell, masked softmax) have two interchangeable
implementations: a Cython extension and a pure-numpy fallback. The extension
is preferred when importable; set HISTVAE_PURE_PYTHON=1 to force the
fallback. `benchmarks/bench_kernels.py` compares the two.
"""
import os

from . import numpy_backend

_impl = numpy_backend
if os.environ.get("HISTVAE_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _cext as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = numpy_backend

BACKEND = "compiled" if _impl is not numpy_backend else "numpy"

gru_cell_fwd = _impl.gru_cell_fwd
gru_cell_bwd = _impl.gru_cell_bwd
masked_softmax_fwd = _impl.masked_softmax_fwd
masked_softmax_bwd = _impl.masked_softmax_bwd
