"""Pure-numpy convolution gather/scatter kernels (fallback backend).

The heavy matrix products happen in BLAS either way; these routines cover
the patch extraction (im2col) and gradient scatter (col2im) that surround
them. The compiled backend in ``_convkern.pyx`` implements the same two
functions with identical signatures.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

NAME = "numpy"


def im2col(x, kh, kw, stride, pads, oh, ow):
    """Extract conv patches from x (N,H,W,C) into a (N*oh*ow, kh*kw*C) matrix.

    pads is (top, bottom, left, right) zero padding. Patch columns are laid
    out (kh, kw, C) row-major so they line up with a (kh*kw*C, Cout) reshape
    of the filter bank.
    """
    pt, pb, pl, pr = pads
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    n, hp, wp, c = x.shape
    sn, sh, sw, sc = x.strides
    windows = as_strided(
        x,
        shape=(n, oh, ow, kh, kw, c),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )
    return np.ascontiguousarray(windows).reshape(n * oh * ow, kh * kw * c)


def col2im(cols, xshape, kh, kw, stride, pads, oh, ow):
    """Scatter-add patch gradients (N*oh*ow, kh*kw*C) back onto the input layout."""
    n, h, w, c = xshape
    pt, pb, pl, pr = pads
    dx = np.zeros((n, h + pt + pb, w + pl + pr, c))
    g = cols.reshape(n, oh, ow, kh, kw, c)
    for i in range(kh):
        for j in range(kw):
            dx[:, i : i + oh * stride : stride, j : j + ow * stride : stride, :] += g[
                :, :, :, i, j, :
            ]
    if pt or pb or pl or pr:
        dx = dx[:, pt : pt + h, pl : pl + w, :]
    return np.ascontiguousarray(dx)
