# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled balancing kernels, drop-in compatible with gradbal._accel.pyref."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline double _dot(const double* a, const double* b, Py_ssize_t d) nogil:
    cdef double s = 0.0
    cdef Py_ssize_t j
    for j in range(d):
        s += a[j] * b[j]
    return s


def det_balance(double[::1] acc, double[:, ::1] vecs, signed char[::1] signs):
    cdef Py_ssize_t n = vecs.shape[0], d = vecs.shape[1], i, j
    cdef double ip
    if n == 0:
        return
    with nogil:
        for i in range(n):
            ip = _dot(&acc[0], &vecs[i, 0], d)
            if ip <= 0.0:
                signs[i] = 1
                for j in range(d):
                    acc[j] += vecs[i, j]
            else:
                signs[i] = -1
                for j in range(d):
                    acc[j] -= vecs[i, j]


def prob_balance(double[::1] acc, double[:, ::1] vecs, double c,
                 double[::1] uniforms, signed char[::1] signs):
    cdef Py_ssize_t n = vecs.shape[0], d = vecs.shape[1], i, j
    cdef double ip, p
    cdef long overflow = 0
    if n == 0:
        return 0
    with nogil:
        for i in range(n):
            ip = _dot(&acc[0], &vecs[i, 0], d)
            if ip > c or ip < -c:
                overflow += 1
            p = 0.5 * (1.0 - ip / c)
            if p < 0.0:
                p = 0.0
            elif p > 1.0:
                p = 1.0
            if uniforms[i] < p:
                signs[i] = 1
                for j in range(d):
                    acc[j] += vecs[i, j]
            else:
                signs[i] = -1
                for j in range(d):
                    acc[j] -= vecs[i, j]
    return overflow


def det_signs_frozen(double[::1] acc, double[:, ::1] vecs, signed char[::1] signs):
    cdef Py_ssize_t n = vecs.shape[0], d = vecs.shape[1], i
    if n == 0:
        return
    with nogil:
        for i in range(n):
            if _dot(&acc[0], &vecs[i, 0], d) <= 0.0:
                signs[i] = 1
            else:
                signs[i] = -1


def prob_signs_frozen(double[::1] acc, double[:, ::1] vecs, double c,
                      double[::1] uniforms, signed char[::1] signs):
    cdef Py_ssize_t n = vecs.shape[0], d = vecs.shape[1], i
    cdef double ip, p
    cdef long overflow = 0
    if n == 0:
        return 0
    with nogil:
        for i in range(n):
            ip = _dot(&acc[0], &vecs[i, 0], d)
            if ip > c or ip < -c:
                overflow += 1
            p = 0.5 * (1.0 - ip / c)
            if p < 0.0:
                p = 0.0
            elif p > 1.0:
                p = 1.0
            if uniforms[i] < p:
                signs[i] = 1
            else:
                signs[i] = -1
    return overflow


def det_tree_descend(double[:, ::1] nodes, double[:, ::1] vecs, int depth,
                     long long[::1] leaves, signed char[::1] last_signs):
    cdef Py_ssize_t n = vecs.shape[0], d = vecs.shape[1], i, j, idx
    cdef int level
    cdef double ip
    cdef signed char s
    cdef Py_ssize_t first_leaf = (1 << depth) - 1
    if n == 0:
        return
    with nogil:
        for i in range(n):
            idx = 0
            s = 1
            for level in range(depth):
                ip = _dot(&nodes[idx, 0], &vecs[i, 0], d)
                if ip <= 0.0:
                    s = 1
                    for j in range(d):
                        nodes[idx, j] += vecs[i, j]
                    idx = 2 * idx + 1
                else:
                    s = -1
                    for j in range(d):
                        nodes[idx, j] -= vecs[i, j]
                    idx = 2 * idx + 2
            leaves[i] = idx - first_leaf
            last_signs[i] = s


def prob_tree_descend(double[:, ::1] nodes, double[:, ::1] vecs, int depth,
                      double c, double[::1] uniforms,
                      long long[::1] leaves, signed char[::1] last_signs):
    cdef Py_ssize_t n = vecs.shape[0], d = vecs.shape[1], i, j, idx, k = 0
    cdef int level
    cdef double ip, p
    cdef signed char s
    cdef long overflow = 0
    cdef Py_ssize_t first_leaf = (1 << depth) - 1
    if n == 0:
        return 0
    with nogil:
        for i in range(n):
            idx = 0
            s = 1
            for level in range(depth):
                ip = _dot(&nodes[idx, 0], &vecs[i, 0], d)
                if ip > c or ip < -c:
                    overflow += 1
                p = 0.5 * (1.0 - ip / c)
                if p < 0.0:
                    p = 0.0
                elif p > 1.0:
                    p = 1.0
                if uniforms[k] < p:
                    s = 1
                    for j in range(d):
                        nodes[idx, j] += vecs[i, j]
                    idx = 2 * idx + 1
                else:
                    s = -1
                    for j in range(d):
                        nodes[idx, j] -= vecs[i, j]
                    idx = 2 * idx + 2
                k += 1
            leaves[i] = idx - first_leaf
            last_signs[i] = s
    return overflow


def max_prefix_inf(double[:, ::1] vecs):
    cdef Py_ssize_t n = vecs.shape[0], d = vecs.shape[1], i, j
    cdef double best = 0.0, x
    if n == 0:
        return 0.0
    run_arr = np.zeros(d, dtype=np.float64)
    cdef double[::1] run = run_arr
    with nogil:
        for i in range(n):
            for j in range(d):
                x = run[j] + vecs[i, j]
                run[j] = x
                if x < 0.0:
                    x = -x
                if x > best:
                    best = x
    return best
