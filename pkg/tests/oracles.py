"""Independent oracles used across the test suite.

Central-difference gradients, a brute-force integer matmul, and a
nearest-centroid classifier. These stay deliberately independent of the
implementation paths they check.
"""

from __future__ import annotations

import numpy as np

from spikeformer import tensor as T
from spikeformer.tensor import Tensor


def scalarize(out: Tensor, weights: np.ndarray) -> Tensor:
    """Reduce an op output to a scalar loss with fixed random weights."""
    return (out * Tensor(weights, dtype=out.data.dtype)).sum()


def analytic_grads(fn, inputs: list[np.ndarray], weights: np.ndarray) -> list[np.ndarray]:
    T.clear_tape()
    tensors = [Tensor(x, requires_grad=True, dtype=np.float64) for x in inputs]
    loss = scalarize(fn(*tensors), weights)
    loss.backward()
    return [t.grad.copy() for t in tensors]


def numeric_grads(fn, inputs: list[np.ndarray], weights: np.ndarray,
                  eps: float = 1e-6) -> list[np.ndarray]:
    """Central finite differences of the scalarized op, element by element."""
    def value(xs):
        with T.no_grad():
            out = fn(*[Tensor(x, dtype=np.float64) for x in xs])
        return float((out.data * weights).sum())

    grads = []
    for i, x in enumerate(inputs):
        g = np.zeros_like(x, dtype=np.float64)
        flat = g.reshape(-1)
        for j in range(x.size):
            bumped = [arr.copy() for arr in inputs]
            bumped[i].reshape(-1)[j] += eps
            up = value(bumped)
            bumped[i].reshape(-1)[j] -= 2 * eps
            down = value(bumped)
            flat[j] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def max_rel_err(a: np.ndarray, n: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return float((np.abs(a - n) / denom).max())


def gradcheck(fn, inputs: list[np.ndarray], rng: np.random.Generator,
              eps: float = 1e-6, tol: float = 1e-6) -> float:
    """Compare tape gradients against central differences; returns the max err."""
    with T.using_dtype(np.float64):
        with T.no_grad():
            probe_out = fn(*[Tensor(x, dtype=np.float64) for x in inputs])
        weights = rng.standard_normal(probe_out.shape)
        analytic = analytic_grads(fn, inputs, weights)
        numeric = numeric_grads(fn, inputs, weights, eps=eps)
    worst = max(max_rel_err(a, n) for a, n in zip(analytic, numeric))
    assert worst < tol, f"gradient mismatch: max rel err {worst:.3e} >= {tol:.0e}"
    return worst


def brute_force_int_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop integer matrix product; the associativity oracle."""
    m, k = a.shape
    k2, p = b.shape
    assert k == k2
    out = np.zeros((m, p), dtype=np.int64)
    for i in range(m):
        for j in range(p):
            acc = 0
            for t in range(k):
                acc += int(a[i, t]) * int(b[t, j])
            out[i, j] = acc
    return out


def nearest_centroid_accuracy(train_images, train_labels, test_images, test_labels) -> float:
    """Classify by nearest class-mean image; the synthetic-set sanity floor."""
    classes = np.unique(train_labels)
    centroids = np.stack([train_images[train_labels == c].reshape(np.sum(train_labels == c), -1).mean(axis=0)
                          for c in classes])
    flat = test_images.reshape(len(test_images), -1)
    d2 = ((flat[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    pred = classes[d2.argmin(axis=1)]
    return float((pred == test_labels).mean())
