"""Optimizer kernel backend selection.

The compiled Cython kernel is used when available; otherwise (or when
``EMBEDADAPT_NO_EXT=1`` is set) the numpy fallback takes over. Both expose
the same ``adam_update`` signature and the same update formula.
"""

import os

from . import fallback

if os.environ.get("EMBEDADAPT_NO_EXT") == "1":
    adam_update = fallback.adam_update
    BACKEND = "fallback"
else:
    try:
        from ._adamstep import adam_update

        BACKEND = "compiled"
    except ImportError:
        adam_update = fallback.adam_update
        BACKEND = "fallback"

__all__ = ["adam_update", "BACKEND", "fallback"]
