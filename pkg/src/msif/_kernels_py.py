"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable or when
``MSIF_PURE_PYTHON=1``. Semantics match the Cython versions exactly.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride, pad):
    """Unfold ``x`` (B, C, H, W) into columns (B, C*kh*kw, Ho*Wo)."""
    B, C, H, W = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    # (B, C, Ho, Wo, kh, kw) -> (B, C, kh, kw, Ho, Wo)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(B, C * kh * kw, Ho * Wo)
    return np.ascontiguousarray(cols)


def col2im(cols, B, C, H, W, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back onto the image."""
    Hp, Wp = H + 2 * pad, W + 2 * pad
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    cols = cols.reshape(B, C, kh, kw, Ho, Wo)
    out = np.zeros((B, C, Hp, Wp))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += cols[:, :, i, j]
    if pad:
        out = out[:, :, pad:pad + H, pad:pad + W]
    return np.ascontiguousarray(out)


def bilinear_sample(img, xs, ys):
    H, W = img.shape
    x = np.clip(xs, 0.0, W - 1.0)
    y = np.clip(ys, 0.0, H - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.intp), W - 2) if W > 1 else np.zeros(x.shape, np.intp)
    y0 = np.minimum(np.floor(y).astype(np.intp), H - 2) if H > 1 else np.zeros(y.shape, np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = x - x0
    wy = y - y0
    top = img[y0, x0] * (1.0 - wx) + img[y0, x1] * wx
    bot = img[y1, x0] * (1.0 - wx) + img[y1, x1] * wx
    return top * (1.0 - wy) + bot * wy


def box_sum(img, radius):
    """Window sums over (2r+1)^2 neighbourhoods, edges replicated."""
    r = int(radius)
    H, W = img.shape
    p = np.pad(img, r, mode="edge")
    sat = np.zeros((H + 2 * r + 1, W + 2 * r + 1))
    sat[1:, 1:] = p.cumsum(0).cumsum(1)
    k = 2 * r + 1
    return sat[k:, k:] - sat[:-k, k:] - sat[k:, :-k] + sat[:-k, :-k]


def lk_solve(sxx, sxy, syy, sxt, syt, min_eig):
    """Per-pixel 2x2 solve of the windowed brightness-constancy system.

    Returns the increments (du, dv) and a boolean mask of pixels whose
    smallest structure-tensor eigenvalue reached ``min_eig``.
    """
    half_tr = 0.5 * (sxx + syy)
    disc = np.sqrt((0.5 * (sxx - syy)) ** 2 + sxy * sxy)
    ok = (half_tr - disc) >= min_eig
    det = np.where(ok, sxx * syy - sxy * sxy, 1.0)
    du = np.where(ok, (-syy * sxt + sxy * syt) / det, 0.0)
    dv = np.where(ok, (sxy * sxt - sxx * syt) / det, 0.0)
    return du, dv, ok
