"""Backend selection for the RNS hot loops.

The compiled Cython module is used when it imports; otherwise the numpy
fallback is used. Setting ``TIP_PURE_PYTHON=1`` forces the fallback.
"""

import logging
import os

from . import _fallback

logger = logging.getLogger(__name__)

_FUNCS = ("ntt_forward", "ntt_inverse", "mulmod", "mulmod_acc", "mulmod_scalar")

BACKEND = "python"
_impl = _fallback

if os.environ.get("TIP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError as exc:  # pragma: no cover - depends on build
        logger.debug("compiled kernels unavailable (%s); using numpy fallback", exc)
        _impl = _fallback

ntt_forward = _impl.ntt_forward
ntt_inverse = _impl.ntt_inverse
mulmod = _impl.mulmod
mulmod_acc = _impl.mulmod_acc
mulmod_scalar = _impl.mulmod_scalar


def get_backend(name=None):
    """Return a namespace of kernel functions for ``name`` ('native' or 'python')."""
    if name is None:
        name = BACKEND
    if name == "python":
        mod = _fallback
    elif name == "native":
        from . import _native as mod
    else:
        raise ValueError(f"unknown backend {name!r}")
    return {f: getattr(mod, f) for f in _FUNCS}
