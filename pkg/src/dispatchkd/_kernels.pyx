# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch reduction kernels; mirrors ``_kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def patch_sums(field, index):
    cdef const double[::1] f = np.ascontiguousarray(field, dtype=np.float64).ravel()
    cdef const cnp.int64_t[:, ::1] idx = np.ascontiguousarray(index, dtype=np.int64)
    cdef Py_ssize_t P = idx.shape[0]
    cdef Py_ssize_t N = idx.shape[1] if idx.ndim == 2 else 0
    out_arr = np.zeros(P, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, n
    cdef cnp.int64_t j
    cdef double acc
    for p in range(P):
        acc = 0.0
        for n in range(N):
            j = idx[p, n]
            if j >= 0:
                acc += f[j]
        out[p] = acc
    return out_arr


def expand_patch_values(values, index, Py_ssize_t size):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const cnp.int64_t[:, ::1] idx = np.ascontiguousarray(index, dtype=np.int64)
    cdef Py_ssize_t P = idx.shape[0]
    cdef Py_ssize_t N = idx.shape[1]
    out_arr = np.zeros(size, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, n
    cdef cnp.int64_t j
    for p in range(P):
        for n in range(N):
            j = idx[p, n]
            if j >= 0:
                out[j] += v[p]
    return out_arr


def coverage_counts(index, Py_ssize_t size):
    cdef const cnp.int64_t[:, ::1] idx = np.ascontiguousarray(index, dtype=np.int64)
    cdef Py_ssize_t P = idx.shape[0]
    cdef Py_ssize_t N = idx.shape[1]
    out_arr = np.zeros(size, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef Py_ssize_t p, n
    cdef cnp.int64_t j
    for p in range(P):
        for n in range(N):
            j = idx[p, n]
            if j >= 0:
                if j >= size:
                    raise IndexError("patch index out of range")
                out[j] += 1
    return out_arr
