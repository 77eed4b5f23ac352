"""Replay kernel selection.

The compiled kernel is used when it imported cleanly; set
``LOBMM_BACKEND=python`` to force the pure-Python fallback.
"""

import os

from . import _replay_py

try:
    from ._replay_ext import replay_kernel as _compiled
except ImportError:  # extension not built
    _compiled = None

KERNELS = {"python": _replay_py.replay_kernel}
if _compiled is not None:
    KERNELS["compiled"] = _compiled


def default_backend() -> str:
    forced = os.environ.get("LOBMM_BACKEND", "").strip().lower()
    if forced:
        if forced not in KERNELS:
            raise ValueError(f"LOBMM_BACKEND={forced!r} is not available; have {sorted(KERNELS)}")
        return forced
    return "compiled" if "compiled" in KERNELS else "python"


def get_kernel(backend=None):
    name = backend or default_backend()
    try:
        return KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown replay backend {name!r}; have {sorted(KERNELS)}") from None
