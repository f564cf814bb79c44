# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same contracts as ``msif._kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt

cnp.import_array()


def im2col(double[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    out_arr = np.zeros((B, C * kh * kw, Ho * Wo))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, i, j, oi, oj, row, yy, xx
    for b in range(B):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    row = (c * kh + i) * kw + j
                    for oi in range(Ho):
                        yy = oi * stride + i - pad
                        if yy < 0 or yy >= H:
                            continue
                        for oj in range(Wo):
                            xx = oj * stride + j - pad
                            if 0 <= xx < W:
                                out[b, row, oi * Wo + oj] = x[b, c, yy, xx]
    return out_arr


def col2im(cols, Py_ssize_t B, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
           int kh, int kw, int stride, int pad):
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    cdef double[:, :, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64).reshape(B, C * kh * kw, Ho * Wo)
    out_arr = np.zeros((B, C, H, W))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, i, j, oi, oj, row, yy, xx
    for b in range(B):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    row = (c * kh + i) * kw + j
                    for oi in range(Ho):
                        yy = oi * stride + i - pad
                        if yy < 0 or yy >= H:
                            continue
                        for oj in range(Wo):
                            xx = oj * stride + j - pad
                            if 0 <= xx < W:
                                out[b, c, yy, xx] += cv[b, row, oi * Wo + oj]
    return out_arr


def bilinear_sample(double[:, ::1] img, double[:, ::1] xs, double[:, ::1] ys):
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1]
    cdef Py_ssize_t R = xs.shape[0], S = xs.shape[1]
    out_arr = np.empty((R, S))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, s, x0, y0, x1, y1
    cdef double x, y, wx, wy, top, bot
    for r in range(R):
        for s in range(S):
            x = xs[r, s]
            y = ys[r, s]
            if x < 0.0:
                x = 0.0
            elif x > W - 1.0:
                x = W - 1.0
            if y < 0.0:
                y = 0.0
            elif y > H - 1.0:
                y = H - 1.0
            x0 = <Py_ssize_t>floor(x)
            y0 = <Py_ssize_t>floor(y)
            if W > 1 and x0 > W - 2:
                x0 = W - 2
            if H > 1 and y0 > H - 2:
                y0 = H - 2
            if W == 1:
                x0 = 0
            if H == 1:
                y0 = 0
            x1 = x0 + 1 if x0 + 1 < W else W - 1
            y1 = y0 + 1 if y0 + 1 < H else H - 1
            wx = x - x0
            wy = y - y0
            top = img[y0, x0] * (1.0 - wx) + img[y0, x1] * wx
            bot = img[y1, x0] * (1.0 - wx) + img[y1, x1] * wx
            out[r, s] = top * (1.0 - wy) + bot * wy
    return out_arr


def box_sum(double[:, ::1] img, int radius):
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1]
    cdef Py_ssize_t r = radius, k = 2 * radius + 1
    cdef Py_ssize_t Hp = H + 2 * r, Wp = W + 2 * r
    sat_arr = np.zeros((Hp + 1, Wp + 1))
    cdef double[:, ::1] sat = sat_arr
    cdef Py_ssize_t i, j, si, sj
    cdef double rowsum
    for i in range(Hp):
        si = i - r
        if si < 0:
            si = 0
        elif si >= H:
            si = H - 1
        rowsum = 0.0
        for j in range(Wp):
            sj = j - r
            if sj < 0:
                sj = 0
            elif sj >= W:
                sj = W - 1
            rowsum += img[si, sj]
            sat[i + 1, j + 1] = sat[i, j + 1] + rowsum
    out_arr = np.empty((H, W))
    cdef double[:, ::1] out = out_arr
    for i in range(H):
        for j in range(W):
            out[i, j] = sat[i + k, j + k] - sat[i, j + k] - sat[i + k, j] + sat[i, j]
    return out_arr


def lk_solve(double[:, ::1] sxx, double[:, ::1] sxy, double[:, ::1] syy,
             double[:, ::1] sxt, double[:, ::1] syt, double min_eig):
    cdef Py_ssize_t H = sxx.shape[0], W = sxx.shape[1]
    du_arr = np.zeros((H, W))
    dv_arr = np.zeros((H, W))
    ok_arr = np.zeros((H, W), dtype=np.bool_)
    cdef double[:, ::1] du = du_arr
    cdef double[:, ::1] dv = dv_arr
    cdef cnp.npy_bool[:, ::1] ok = ok_arr
    cdef Py_ssize_t i, j
    cdef double a, b, c, half_tr, half_diff, disc, det
    for i in range(H):
        for j in range(W):
            a = sxx[i, j]
            b = sxy[i, j]
            c = syy[i, j]
            half_tr = 0.5 * (a + c)
            half_diff = 0.5 * (a - c)
            disc = sqrt(half_diff * half_diff + b * b)
            if half_tr - disc >= min_eig:
                det = a * c - b * b
                du[i, j] = (-c * sxt[i, j] + b * syt[i, j]) / det
                dv[i, j] = (b * sxt[i, j] - a * syt[i, j]) / det
                ok[i, j] = True
    return du_arr, dv_arr, ok_arr
