"""Hot-loop kernels, compiled when the extension is built.

Set ``S4REC_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("S4REC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def rank_rows(logits, targets, excluded, impl=None):
    """1-based rank of ``logits[i, targets[i]]`` among non-excluded columns.

    Ties are broken by column index (lower index ranks first).
    """
    impl = impl or _impl
    logits = np.ascontiguousarray(logits)
    if logits.dtype not in (np.float32, np.float64):
        logits = logits.astype(np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    excluded = np.ascontiguousarray(excluded, dtype=np.uint8)
    return impl.rank_rows(logits, targets, excluded)


def sinkhorn(scores, eps, iters, impl=None):
    """Balanced soft codes for a (B, K) score matrix; rows sum to 1."""
    impl = impl or _impl
    return impl.sinkhorn(np.ascontiguousarray(scores, dtype=np.float64), float(eps), int(iters))


def implementations():
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
