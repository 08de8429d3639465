"""Backend selection for the latent rollout kernels.

The compiled extension is used when it imports; otherwise, or when
``DECODER_BCD_PURE=1`` is set, the numpy implementation is used.
"""

import os

from ._rollout_py import rollout as python_rollout
from ._rollout_py import rollout_backward as python_rollout_backward

try:
    from ._rollout_ext import rollout as compiled_rollout
    from ._rollout_ext import rollout_backward as compiled_rollout_backward
except ImportError:
    compiled_rollout = compiled_rollout_backward = None

if compiled_rollout is not None and os.environ.get("DECODER_BCD_PURE", "0") in ("", "0"):
    rollout, rollout_backward = compiled_rollout, compiled_rollout_backward
    BACKEND = "cython"
else:
    rollout, rollout_backward = python_rollout, python_rollout_backward
    BACKEND = "python"

__all__ = ["BACKEND", "rollout", "rollout_backward"]
