"""Hot-loop backend selection.

The compiled extension is used when it imports; otherwise (or when the
environment variable ``CENSMTE_PURE_PYTHON`` is set to a non-empty value)
the numpy implementation is used. Both expose the same three functions.
"""

import os

from . import _pykernels

if os.environ.get("CENSMTE_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

logit_loglik = _impl.logit_loglik
logit_derivs = _impl.logit_derivs
dmtr_mean = _impl.dmtr_mean

__all__ = ["BACKEND", "logit_loglik", "logit_derivs", "dmtr_mean"]
