"""Pure-numpy backend for the binary attention kernels.

Three primitives cover every attention product stage:

* ``binary_matmul(a, b)``: all-pairs dot products of {0,1} rows, computed
  as AND over bit-packed rows followed by popcount. Equals the float
  matmul ``a @ swap(b)`` exactly.
* ``masked_matmul(m, v)``: integer map times binary matrix (``m @ v``);
  a masked accumulation of map entries into the output columns v selects.
* ``left_masked_matmul(q, m)``: binary matrix times integer matrix
  (``q @ m``); each input spike accumulates one row of ``m``.

All return int32 (values are bounded by the shared inner dimension at
desk scale). This module is always importable and doubles as the
reference the compiled backend is tested against.
"""

from __future__ import annotations

import numpy as np

# Bits set per byte value; vectorized popcount via table lookup.
_POPCOUNT8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def pack_rows(a: np.ndarray) -> np.ndarray:
    """Pack a {0,1} array along its last axis into uint8 words (MSB first)."""
    return np.packbits(a.astype(np.uint8, copy=False), axis=-1)


def binary_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs binary dot products: out[..., i, j] = sum_k a[..., i, k] & b[..., j, k].

    ``a``: [..., M, K] and ``b``: [..., P, K] with matching leading dims;
    returns int32 [..., M, P]. Realizes the spike dot product as logical
    AND plus addition (popcount), with no multiplications.
    """
    pa = pack_rows(a)
    pb = pack_rows(b)
    anded = pa[..., :, None, :] & pb[..., None, :, :]
    return _POPCOUNT8[anded].sum(axis=-1, dtype=np.int32)


def masked_matmul(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Weight an integer map by a binary matrix: out = m @ v with v in {0,1}."""
    mi = np.ascontiguousarray(m, dtype=np.int64)
    vi = np.ascontiguousarray(v, dtype=np.int64)
    return (mi @ vi).astype(np.int32)


def left_masked_matmul(q: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Binary-driven row accumulation: out = q @ m with q in {0,1}."""
    qi = np.ascontiguousarray(q, dtype=np.int64)
    mi = np.ascontiguousarray(m, dtype=np.int64)
    return (qi @ mi).astype(np.int32)


def masked_matmul_counted(m: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, int]:
    """``masked_matmul`` plus its accumulate count: nnz(m) * v.shape[-1].

    One accumulate per nonzero input element and output it feeds (the
    synaptic-operation model the profiler bills).
    """
    return masked_matmul(m, v), int(np.count_nonzero(m)) * int(v.shape[-1])


def left_masked_matmul_counted(q: np.ndarray, m: np.ndarray) -> tuple[np.ndarray, int]:
    """``left_masked_matmul`` plus its accumulate count: nnz(q) * m.shape[-1]."""
    return left_masked_matmul(q, m), int(np.count_nonzero(q)) * int(m.shape[-1])


def binary_matmul_counted(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, int]:
    """``binary_matmul`` plus its spike-driven accumulate count: nnz(a) * b rows."""
    return binary_matmul(a, b), int(np.count_nonzero(a)) * int(b.shape[-2])
