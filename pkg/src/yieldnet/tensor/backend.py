"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; otherwise the
numpy fallback is used. Both expose the same im2col/col2im contract and
produce bit-identical results, so the choice only affects speed.
"""

try:
    from . import _convkern as _impl
except ImportError:  # extension not built on this install
    from . import _conv_np as _impl

KERNEL_BACKEND = _impl.NAME
im2col = _impl.im2col
col2im = _impl.col2im
