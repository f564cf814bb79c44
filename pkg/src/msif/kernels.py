"""Backend selection for the hot kernels.

The compiled extension is preferred; set ``MSIF_PURE_PYTHON=1`` to force the
numpy fallback. ``BACKEND`` names the active implementation.
"""
import os

import numpy as np

from msif import _kernels_py

_py = _kernels_py
_c = None
if os.environ.get("MSIF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from msif import _ckernels as _c
    except ImportError:  # extension not built
        _c = None

BACKEND = "cython" if _c is not None else "python"
_impl = _c if _c is not None else _py


def backends():
    """Return a name -> module mapping of every importable backend."""
    found = {"python": _py}
    if _c is not None:
        found["cython"] = _c
    else:
        try:
            from msif import _ckernels
            found["cython"] = _ckernels
        except ImportError:
            pass
    return found


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def im2col(x, kh, kw, stride, pad):
    return _impl.im2col(_f64(x), int(kh), int(kw), int(stride), int(pad))


def col2im(cols, shape, kh, kw, stride, pad):
    B, C, H, W = shape
    return _impl.col2im(_f64(cols), B, C, H, W, int(kh), int(kw), int(stride), int(pad))


def bilinear_sample(img, xs, ys):
    return _impl.bilinear_sample(_f64(img), _f64(xs), _f64(ys))


def box_sum(img, radius):
    return _impl.box_sum(_f64(img), int(radius))


def lk_solve(sxx, sxy, syy, sxt, syt, min_eig):
    shape = np.shape(sxx)
    flat = [_f64(a).reshape(1, -1) for a in (sxx, sxy, syy, sxt, syt)]
    du, dv, ok = _impl.lk_solve(*flat, float(min_eig))
    return du.reshape(shape), dv.reshape(shape), ok.reshape(shape)
