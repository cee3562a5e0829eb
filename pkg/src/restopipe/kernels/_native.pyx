# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core. Mirrors numpy_backend semantics exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def conv2d_valid(double[:, ::1] padded, double[:, ::1] kernel):
    cdef Py_ssize_t kh = kernel.shape[0], kw = kernel.shape[1]
    cdef Py_ssize_t h = padded.shape[0] - kh + 1
    cdef Py_ssize_t w = padded.shape[1] - kw + 1
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t y, x, i, j
    cdef double s
    for y in range(h):
        for x in range(w):
            s = 0.0
            for i in range(kh):
                for j in range(kw):
                    s += kernel[i, j] * padded[y + kh - 1 - i, x + kw - 1 - j]
            out[y, x] = s
    return out_arr


def window_min_valid(double[:, ::1] padded, int radius):
    cdef Py_ssize_t size = 2 * radius + 1
    cdef Py_ssize_t h = padded.shape[0] - 2 * radius
    cdef Py_ssize_t w = padded.shape[1] - 2 * radius
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t y, x, i, j
    cdef double m, v
    for y in range(h):
        for x in range(w):
            m = padded[y, x]
            for i in range(size):
                for j in range(size):
                    v = padded[y + i, x + j]
                    if v < m:
                        m = v
            out[y, x] = m
    return out_arr


def footprint_median_valid(double[:, ::1] padded, long[:, ::1] offsets, int margin):
    cdef Py_ssize_t k = offsets.shape[0]
    cdef Py_ssize_t h = padded.shape[0] - 2 * margin
    cdef Py_ssize_t w = padded.shape[1] - 2 * margin
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    buf_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] buf = buf_arr
    cdef Py_ssize_t y, x, i, j
    cdef double v
    for y in range(h):
        for x in range(w):
            for i in range(k):
                buf[i] = padded[margin + offsets[i, 0] + y, margin + offsets[i, 1] + x]
            # insertion sort; k is small
            for i in range(1, k):
                v = buf[i]
                j = i - 1
                while j >= 0 and buf[j] > v:
                    buf[j + 1] = buf[j]
                    j -= 1
                buf[j + 1] = v
            if k % 2 == 1:
                out[y, x] = buf[k // 2]
            else:
                out[y, x] = 0.5 * (buf[k // 2 - 1] + buf[k // 2])
    return out_arr


def nlm_valid(double[:, :, ::1] padded, double[:, ::1] luma,
              double h2, double two_sigma2, int patch_r, int window_r):
    cdef Py_ssize_t pad = window_r + patch_r
    cdef Py_ssize_t h = padded.shape[0] - 2 * pad
    cdef Py_ssize_t w = padded.shape[1] - 2 * pad
    cdef Py_ssize_t k = 2 * patch_r + 1
    cdef double npatch = <double> (k * k)
    cdef Py_ssize_t hs = h + 2 * patch_r
    cdef Py_ssize_t ws = w + 2 * patch_r

    acc_arr = np.zeros((h, w, 3), dtype=np.float64)
    wsum_arr = np.zeros((h, w), dtype=np.float64)
    diff2_arr = np.empty((hs, ws), dtype=np.float64)
    tmp_arr = np.empty((h, ws), dtype=np.float64)
    cdef double[:, :, ::1] acc = acc_arr
    cdef double[:, ::1] wsum = wsum_arr
    cdef double[:, ::1] diff2 = diff2_arr
    cdef double[:, ::1] tmp = tmp_arr

    cdef Py_ssize_t dy, dx, y, x, u
    cdef Py_ssize_t base_y = pad - patch_r, base_x = pad - patch_r
    cdef double d, s, weight

    for dy in range(-window_r, window_r + 1):
        for dx in range(-window_r, window_r + 1):
            for y in range(hs):
                for x in range(ws):
                    d = luma[base_y + y, base_x + x] - luma[base_y + y + dy, base_x + x + dx]
                    diff2[y, x] = d * d
            for y in range(h):
                for x in range(ws):
                    s = 0.0
                    for u in range(k):
                        s += diff2[y + u, x]
                    tmp[y, x] = s
            for y in range(h):
                for x in range(w):
                    s = 0.0
                    for u in range(k):
                        s += tmp[y, x + u]
                    d = s / npatch - two_sigma2
                    if d < 0.0:
                        d = 0.0
                    weight = exp(-d / h2)
                    wsum[y, x] += weight
                    acc[y, x, 0] += weight * padded[pad + y + dy, pad + x + dx, 0]
                    acc[y, x, 1] += weight * padded[pad + y + dy, pad + x + dx, 1]
                    acc[y, x, 2] += weight * padded[pad + y + dy, pad + x + dx, 2]

    for y in range(h):
        for x in range(w):
            acc[y, x, 0] /= wsum[y, x]
            acc[y, x, 1] /= wsum[y, x]
            acc[y, x, 2] /= wsum[y, x]
    return acc_arr
