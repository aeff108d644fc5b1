"""Select the chain-smoother kernel at import.

The compiled extension is used when it was built, unless the environment
sets ``CAPA_PURE_PYTHON=1``.
"""

import os

from . import _chain_py

rts_smooth_python = _chain_py.rts_smooth
FilterFailure = _chain_py.FilterFailure

try:
    from ._chain_ext import rts_smooth as rts_smooth_compiled
except ImportError:  # extension not built
    rts_smooth_compiled = None

if rts_smooth_compiled is not None and os.environ.get("CAPA_PURE_PYTHON", "") not in ("1", "true"):
    rts_smooth = rts_smooth_compiled
    BACKEND = "cython"
else:
    rts_smooth = rts_smooth_python
    BACKEND = "python"
