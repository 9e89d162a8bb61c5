"""Hot-loop kernels with a compiled core and a pure-numpy fallback.

The compiled Cython extension is preferred when importable; setting the
environment variable ``TRAFFICWEAVE_PURE_PYTHON=1`` forces the fallback.
``BACKEND`` records which implementation is active.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("TRAFFICWEAVE_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

lstm_cell = _impl.lstm_cell
gmm_sample = _impl.gmm_sample
score_rollouts = _impl.score_rollouts

__all__ = ["BACKEND", "lstm_cell", "gmm_sample", "score_rollouts"]
