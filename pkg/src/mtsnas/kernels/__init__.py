"""Hot numerical kernels with a compiled backend and a numpy fallback.

The compiled extension (``mtsnas.kernels._ckernels``) is used when it was
built; otherwise the numpy versions in :mod:`._reference` are used. Set
``MTSNAS_KERNELS=python`` to force the fallback.
"""

import os

from mtsnas.kernels import _reference

BACKEND = "python"

if os.environ.get("MTSNAS_KERNELS", "").lower() != "python":
    try:
        from mtsnas.kernels import _ckernels as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _reference
else:
    _impl = _reference

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
topk_mask = _impl.topk_mask

__all__ = ["BACKEND", "conv1d_forward", "conv1d_backward", "topk_mask"]
