"""Kernel backend selection.

The compiled ``_kernels`` extension is used when importable; otherwise, or
when ``MMREC_BACKEND=python`` is set, the numpy ``_pykernels`` module is
used. Both expose the same functions.
"""

import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)


def _select():
    if os.environ.get("MMREC_BACKEND", "").lower() == "python":
        return _pykernels
    try:
        from . import _kernels
    except ImportError:
        logger.debug("compiled kernels unavailable, using numpy fallback")
        return _pykernels
    return _kernels


kernels = _select()
NAME = kernels.NAME


def available() -> dict:
    """All importable backends by name."""
    out = {"python": _pykernels}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
