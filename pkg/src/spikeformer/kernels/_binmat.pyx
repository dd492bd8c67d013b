# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled backend for the binary attention kernels.

Bit-packed AND + popcount for the all-pairs {0,1} dot products, plus
literal masked-accumulation loops (adds only, no multiplies) for the
map-times-V and Q-times-map product stages. Selected automatically by
``spikeformer.kernels`` when importable; the numpy module is the
fallback and reference.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef extern from *:
    int __builtin_popcountll(unsigned long long x)


cdef _pack64(cnp.uint8_t[:, ::1] a, Py_ssize_t words):
    # Pack {0,1} bytes into uint64 rows, LSB-first within each word.
    cdef Py_ssize_t rows = a.shape[0], k = a.shape[1]
    packed_np = np.zeros((rows, words), dtype=np.uint64)
    cdef cnp.uint64_t[:, ::1] packed = packed_np
    cdef Py_ssize_t i, j
    for i in range(rows):
        for j in range(k):
            if a[i, j]:
                packed[i, j >> 6] |= (<cnp.uint64_t>1) << (j & 63)
    return packed_np


def binary_matmul_2d(cnp.uint8_t[:, ::1] a, cnp.uint8_t[:, ::1] b):
    """All-pairs dot products of binary rows: out[i, j] = popcount(a[i] & b[j])."""
    cdef Py_ssize_t m = a.shape[0], p = b.shape[0], k = a.shape[1]
    cdef Py_ssize_t words = (k + 63) // 64
    pa_np = _pack64(a, words)
    pb_np = _pack64(b, words)
    cdef cnp.uint64_t[:, ::1] pa = pa_np
    cdef cnp.uint64_t[:, ::1] pb = pb_np
    out_np = np.zeros((m, p), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] out = out_np
    cdef Py_ssize_t i, j, w
    cdef int acc
    for i in range(m):
        for j in range(p):
            acc = 0
            for w in range(words):
                acc += __builtin_popcountll(pa[i, w] & pb[j, w])
            out[i, j] = acc
    return out_np


def masked_matmul_2d(cnp.int32_t[:, ::1] m, cnp.uint8_t[:, ::1] v):
    """out[i, j] = sum over n with v[n, j] == 1 of m[i, n]; adds only.

    Returns (out int32, accumulate count = nnz(m) * columns fed).
    """
    cdef Py_ssize_t rows = m.shape[0], n = m.shape[1], p = v.shape[1]
    out_np = np.zeros((rows, p), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] out = out_np
    cdef Py_ssize_t i, j, t
    cdef long long nnz = 0
    cdef cnp.int32_t val
    for i in range(rows):
        for t in range(n):
            val = m[i, t]
            if val != 0:
                nnz += 1
                for j in range(p):
                    if v[t, j]:
                        out[i, j] += val
    return out_np, nnz * p


def left_masked_matmul_2d(cnp.uint8_t[:, ::1] q, cnp.int32_t[:, ::1] m):
    """out[i, :] accumulates m[k, :] for every k with q[i, k] == 1; adds only.

    Returns (out int32, accumulate count = nnz(q) * row width).
    """
    cdef Py_ssize_t rows = q.shape[0], k = q.shape[1], p = m.shape[1]
    out_np = np.zeros((rows, p), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] out = out_np
    cdef Py_ssize_t i, t, j
    cdef long long nnz = 0
    for i in range(rows):
        for t in range(k):
            if q[i, t]:
                nnz += 1
                for j in range(p):
                    out[i, j] += m[t, j]
    return out_np, nnz * p
