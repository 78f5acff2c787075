"""Kernel dispatch: compiled extension when built, numpy fallback otherwise.

Set ``PARTIAL_SCREEN_PURE=1`` to force the fallback.
"""

import os

BACKEND = "python"

if os.environ.get("PARTIAL_SCREEN_PURE", "") not in ("1", "true", "yes"):
    try:
        from ._ext import col2im, im2col  # noqa: F401

        BACKEND = "compiled"
    except ImportError:
        pass

if BACKEND == "python":
    from ._kernels_py import col2im, im2col  # noqa: F401
