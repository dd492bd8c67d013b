"""Binary attention kernels with a compiled core and a numpy fallback.

At import time the Cython extension ``_binmat`` is preferred; if it was
not built (no compiler at install time) the pure-numpy implementation in
``binmat`` takes over transparently. ``BACKEND`` names the active one.
``benchmarks/bench_binmat.py`` compares the two against float BLAS.

Public functions accept arbitrary leading batch axes and return int32.
Counting variants also return the number of spike-driven accumulate
operations: one per nonzero input element per output it feeds, which is
exactly the synaptic-operation model the profiler bills.
"""

from __future__ import annotations

import numpy as np

from . import binmat as _np_impl

try:
    from . import _binmat as _c_impl
    BACKEND = "cython"
except ImportError:  # pragma: no cover - depends on build environment
    _c_impl = None
    BACKEND = "numpy"


def _batched(fn_2d, pair_dtypes, a: np.ndarray, b: np.ndarray, out_cols: int, counted: bool):
    lead = a.shape[:-2]
    fa = np.ascontiguousarray(a, dtype=pair_dtypes[0]).reshape((-1,) + a.shape[-2:])
    fb = np.ascontiguousarray(b, dtype=pair_dtypes[1]).reshape((-1,) + b.shape[-2:])
    out = np.empty((fa.shape[0], a.shape[-2], out_cols), dtype=np.int32)
    total = 0
    for i in range(fa.shape[0]):
        res = fn_2d(fa[i], fb[i])
        if isinstance(res, tuple):
            out[i], n = res
            total += n
        else:
            out[i] = res
    shaped = out.reshape(lead + out.shape[-2:])
    return (shaped, total) if counted else shaped


def binary_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """out[..., i, j] = sum_k a[..., i, k] * b[..., j, k] for {0,1} inputs.

    AND + popcount over bit-packed rows; exactly equal to the float
    matmul ``a @ swap(b)`` on the same operands.
    """
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-1]:
        raise ValueError(f"binary_matmul shape mismatch: {a.shape} vs {b.shape}")
    if _c_impl is None:
        return _np_impl.binary_matmul(a, b)
    return _batched(_c_impl.binary_matmul_2d, (np.uint8, np.uint8), a, b, b.shape[-2], counted=False)


def binary_matmul_counted(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, int]:
    """``binary_matmul`` plus its accumulate count: nnz(a) * b.shape[-2]."""
    return binary_matmul(a, b), int(np.count_nonzero(a)) * int(b.shape[-2])


def masked_matmul_counted(m: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, int]:
    """Integer map times binary matrix (``m @ v``) plus count nnz(m) * v cols."""
    if m.shape[:-2] != v.shape[:-2] or m.shape[-1] != v.shape[-2]:
        raise ValueError(f"masked_matmul shape mismatch: {m.shape} vs {v.shape}")
    if _c_impl is None:
        return _np_impl.masked_matmul_counted(m, v)
    return _batched(_c_impl.masked_matmul_2d, (np.int32, np.uint8), m, v, v.shape[-1], counted=True)


def masked_matmul(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    return masked_matmul_counted(m, v)[0]


def left_masked_matmul_counted(q: np.ndarray, m: np.ndarray) -> tuple[np.ndarray, int]:
    """Binary matrix times integer matrix (``q @ m``) plus count nnz(q) * m cols."""
    if q.shape[:-2] != m.shape[:-2] or q.shape[-1] != m.shape[-2]:
        raise ValueError(f"left_masked_matmul shape mismatch: {q.shape} vs {m.shape}")
    if _c_impl is None:
        return _np_impl.left_masked_matmul_counted(q, m)
    return _batched(_c_impl.left_masked_matmul_2d, (np.uint8, np.int32), q, m, m.shape[-1], counted=True)


def left_masked_matmul(q: np.ndarray, m: np.ndarray) -> np.ndarray:
    return left_masked_matmul_counted(q, m)[0]


# Reference (always-numpy) implementations, importable for equivalence tests.
reference = _np_impl
