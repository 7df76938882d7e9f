# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: categorical projection, bilinear shift-crop, n-step walk."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil

cnp.import_array()

ctypedef fused real_t:
    float
    double


def project(values, probs, double v_min, double delta, Py_ssize_t n_atoms):
    cdef const double[:, ::1] vals = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:, ::1] ps = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t batch = vals.shape[0], k_targets = vals.shape[1]
    out_arr = np.zeros((batch, n_atoms), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, lo, hi
    cdef double b, p, top = <double>(n_atoms - 1)
    with nogil:
        for i in range(batch):
            for j in range(k_targets):
                p = ps[i, j]
                b = (vals[i, j] - v_min) / delta
                if b < 0.0:
                    b = 0.0
                elif b > top:
                    b = top
                lo = <Py_ssize_t>floor(b)
                hi = <Py_ssize_t>ceil(b)
                out[i, lo] += p * (1.0 - (b - lo))
                out[i, hi] += p * (b - lo)
    return out_arr


def _shift_crop_typed(const real_t[:, :, :, ::1] padded, const double[:, ::1] shifts,
                      real_t[:, :, :, ::1] out):
    cdef Py_ssize_t batch = padded.shape[0], channels = padded.shape[1]
    cdef Py_ssize_t hp = padded.shape[2], wp = padded.shape[3]
    cdef Py_ssize_t height = out.shape[2], width = out.shape[3]
    cdef double pad_y = (hp - height) / 2.0, pad_x = (wp - width) / 2.0
    cdef Py_ssize_t k, c, i, j, y0, x0, y1, x1
    cdef double oy, ox, fy, fx, top, bot
    with nogil:
        for k in range(batch):
            oy = pad_y + shifts[k, 1]
            ox = pad_x + shifts[k, 0]
            y0 = <Py_ssize_t>floor(oy)
            x0 = <Py_ssize_t>floor(ox)
            fy = oy - y0
            fx = ox - x0
            y1 = y0 + 1 if y0 + height < hp else y0
            x1 = x0 + 1 if x0 + width < wp else x0
            for c in range(channels):
                for i in range(height):
                    for j in range(width):
                        top = ((1.0 - fx) * padded[k, c, y0 + i, x0 + j]
                               + fx * padded[k, c, y0 + i, x1 + j])
                        bot = ((1.0 - fx) * padded[k, c, y1 + i, x0 + j]
                               + fx * padded[k, c, y1 + i, x1 + j])
                        out[k, c, i, j] = <real_t>((1.0 - fy) * top + fy * bot)


def shift_crop(padded, shifts, Py_ssize_t height, Py_ssize_t width):
    padded = np.ascontiguousarray(padded)
    if padded.dtype != np.float32:
        padded = padded.astype(np.float64, copy=False)
    shifts = np.ascontiguousarray(shifts, dtype=np.float64)
    out = np.empty((padded.shape[0], padded.shape[1], height, width), dtype=padded.dtype)
    _shift_crop_typed(padded, shifts, out)
    return out


def nstep_walk(next_ptr, reward, terminal, truncated, starts, Py_ssize_t n, double gamma):
    cdef const long long[::1] nxt = np.ascontiguousarray(next_ptr, dtype=np.int64)
    cdef const double[::1] rew = np.ascontiguousarray(reward, dtype=np.float64)
    cdef const unsigned char[::1] term = np.ascontiguousarray(terminal, dtype=np.uint8)
    cdef const unsigned char[::1] trunc = np.ascontiguousarray(truncated, dtype=np.uint8)
    cdef const long long[::1] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef Py_ssize_t count = st.shape[0]
    g_arr = np.zeros(count, dtype=np.float64)
    m_arr = np.zeros(count, dtype=np.int64)
    last_arr = np.empty(count, dtype=np.int64)
    boot_arr = np.ones(count, dtype=np.uint8)
    cdef double[::1] g = g_arr
    cdef long long[::1] m = m_arr
    cdef long long[::1] last = last_arr
    cdef unsigned char[::1] boot = boot_arr
    cdef Py_ssize_t k, steps
    cdef long long slot
    cdef double acc, disc
    with nogil:
        for k in range(count):
            slot = st[k]
            acc = 0.0
            disc = 1.0
            steps = 0
            while True:
                acc += disc * rew[slot]
                disc *= gamma
                steps += 1
                if term[slot]:
                    boot[k] = 0
                    break
                if trunc[slot] or steps == n or nxt[slot] < 0:
                    break
                slot = nxt[slot]
            g[k] = acc
            m[k] = steps
            last[k] = slot
    return g_arr, m_arr, last_arr, boot_arr.astype(np.bool_)
