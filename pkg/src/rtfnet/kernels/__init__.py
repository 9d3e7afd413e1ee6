"""Hot numeric kernels behind a backend switch.

The numba-compiled kernels are used by default. Setting the environment
variable ``RTFNET_DISABLE_NUMBA=1`` (or running without numba installed)
selects the pure-numpy implementations instead. Both backends produce
bit-identical results for the gather/scatter kernels (``im2col``,
``col2im``, ``salt_pepper``); the GELU kernels agree to rounding.

Column layout used by ``im2col``/``col2im``: one row per output pixel in
``(n, i, j)`` order, columns ordered ``(ky, kx, c)``.
"""
import os

from . import _numpy

BACKEND = "numpy"
_impl = _numpy

if os.environ.get("RTFNET_DISABLE_NUMBA", "").strip() not in ("", "0"):
    pass
else:
    try:
        from . import _numba

        _impl = _numba
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is optional
        pass

im2col = _impl.im2col
col2im = _impl.col2im
gelu = _impl.gelu
gelu_grad = _impl.gelu_grad
salt_pepper = _impl.salt_pepper

__all__ = ["BACKEND", "im2col", "col2im", "gelu", "gelu_grad", "salt_pepper"]
