"""Backend selection for the encoder/EL2N kernels.

The compiled extension is used when importable; ``PRUNEKIT_BACKEND=python``
forces the numpy path. Both expose identical signatures.
"""

import os

from . import _kernels_py

_forced = os.environ.get("PRUNEKIT_BACKEND", "").lower()

if _forced == "python":
    _impl = _kernels_py
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _forced == "cython":
            raise
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

encoder_forward = _impl.encoder_forward
encoder_backward = _impl.encoder_backward
el2n_components = _impl.el2n_components
