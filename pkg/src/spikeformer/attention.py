"""Softmax-free spiking self attention and its ablation variants.

The core product is Q K^T V on {0,1} matrices, scaled and re-spiked
through a 0.5-threshold neuron, then projected (Linear -> BN -> neuron).
Because the operands are binary the product is integer-valued and
non-negative, the two evaluation orders (QK^T first or K^T V first) are
exactly equal, and the whole thing reduces to AND + addition; the
bit-packed kernel realizes that literally on no-grad paths while training
runs the same product through taped matmuls.

Variants for the ablation harness swap the map construction: raw float
Q K^T ("i"), rectified float maps ("relu"/"leakyrelu"), and softmax
attention with spiking or float V ("vsa"/"vsa_floatv").
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ConfigError, ShapeError
from .modules import BatchNorm, Linear, Module
from .neuron import LifNeuron, LifParams, lif_forward
from .tensor import Tensor

VARIANTS = ("ssa", "vsa", "vsa_floatv", "i", "relu", "leakyrelu")

# Variants whose map is softmax-normalized (no scale, no product neuron).
_SOFTMAX = ("vsa", "vsa_floatv")


@dataclass
class SsaConfig:
    """Attention geometry and scaling."""
    embed_dim: int
    num_heads: int
    scale: float = 0.125
    scale_learnable: bool = False
    order: str = "auto"  # auto | qk_first | kv_first

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.scale <= 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        if self.order not in ("auto", "qk_first", "kv_first"):
            raise ConfigError(f"unknown order {self.order!r}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads


def select_order(order: str, seq_len: int, head_dim: int) -> str:
    """K^T V first wins when the sequence outgrows the head dim (tie: QK^T first)."""
    if order != "auto":
        return order
    return "kv_first" if seq_len > head_dim else "qk_first"


def sparse_dot(q_row: np.ndarray, k_row: np.ndarray) -> int:
    """Binary dot product as masked accumulation: sum of k where q fires."""
    q = np.asarray(q_row)
    k = np.asarray(k_row)
    if q.shape != k.shape:
        raise ShapeError(f"sparse_dot length mismatch: {q.shape} vs {k.shape}")
    return int(k[q != 0].sum())


def qkv_product(q: Tensor, k: Tensor, v: Tensor, order: str = "qk_first") -> Tensor:
    """Taped Q K^T V in the requested evaluation order.

    On binary operands both orders are exactly equal (integer-valued
    intermediates), per-time-step and per-head independent.
    """
    if q.shape[-1] != k.shape[-1] or k.shape != v.shape:
        raise ShapeError(f"qkv_product head-dim mismatch: {q.shape}, {k.shape}, {v.shape}")
    if order == "kv_first":
        return T.matmul(q, T.matmul(k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2), v))
    return T.matmul(T.matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)), v)


def ssa_core(q: Tensor, k: Tensor, v: Tensor, scale: float = 0.125,
             v_threshold: float = 0.5, order: str = "qk_first",
             time_steps: int = 1, neuron: Optional[LifParams] = None) -> Tensor:
    """Scaled Q K^T V passed through a half-threshold spike neuron.

    Inputs are spike tensors with leading time/batch axes folded into the
    first dimension; the output is binary.
    """
    base = neuron or LifParams()
    params = LifParams(base.tau, v_threshold, base.v_reset, base.surrogate_alpha, base.mode)
    scaled = qkv_product(q, k, v, order=order) * scale
    return lif_forward(scaled, params, time_steps)


@dataclass
class AttentionCost:
    """Dense cost of the attention product for both evaluation orders.

    ``macs_*`` count multiply-accumulates per head per time step over both
    product stages (2*N^2*d vs 2*N*d^2). ``flops_*`` count multiplies and
    adds separately and total over heads (the convention under which the
    196-patch, 8-head, 64-dim shape costs ~77e6 ops).
    ``sops_*`` are fr * T * FLOPs estimates, present when rates were given.
    """
    seq_len: int
    head_dim: int
    num_heads: int
    macs_qk_first: int
    macs_kv_first: int
    flops_qk_first: int
    flops_kv_first: int
    order: str
    sops_qk_first: Optional[int] = None
    sops_kv_first: Optional[int] = None


def flop_sop_cost(config: SsaConfig, seq_len: int,
                  firing_rates: Optional[dict] = None,
                  time_steps: int = 1) -> AttentionCost:
    """Theoretical per-step cost of the product; picks the cheaper order."""
    n, d, h = seq_len, config.head_dim, config.num_heads
    macs_qk = 2 * n * n * d
    macs_kv = 2 * n * d * d
    cost = AttentionCost(
        seq_len=n, head_dim=d, num_heads=h,
        macs_qk_first=macs_qk, macs_kv_first=macs_kv,
        flops_qk_first=2 * macs_qk * h, flops_kv_first=2 * macs_kv * h,
        order=select_order(config.order, n, d),
    )
    if firing_rates is not None:
        fr_q = firing_rates["fr_q"]
        fr_v = firing_rates["fr_v"]
        density = firing_rates.get("map_density", 1.0)
        stage = n * n * d * h
        cost.sops_qk_first = math.floor(fr_q * time_steps * stage) + math.floor(density * time_steps * stage)
        stage = n * d * d * h
        cost.sops_kv_first = math.floor(fr_v * time_steps * stage) + math.floor(fr_q * time_steps * stage)
    return cost


class SpikingSelfAttention(Module):
    """Multi-head attention block: QKV branches, product, output projection."""

    def __init__(self, config: SsaConfig, variant: str = "ssa",
                 neuron: Optional[LifParams] = None,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigError(f"unknown attention variant {variant!r}")
        rng = rng or np.random.default_rng(0)
        d = config.embed_dim
        base = neuron or LifParams()
        self.config = config
        self.variant = variant
        self.w_q = Linear(d, d, bias=False, rng=rng)
        self.w_k = Linear(d, d, bias=False, rng=rng)
        self.w_v = Linear(d, d, bias=False, rng=rng)
        self.bn_q = BatchNorm(d)
        self.bn_k = BatchNorm(d)
        self.bn_v = BatchNorm(d)
        self.sn_q = LifNeuron(LifParams(base.tau, 1.0, base.v_reset, base.surrogate_alpha, base.mode))
        self.sn_k = LifNeuron(LifParams(base.tau, 1.0, base.v_reset, base.surrogate_alpha, base.mode))
        self.sn_v = LifNeuron(LifParams(base.tau, 1.0, base.v_reset, base.surrogate_alpha, base.mode))
        # Post-product neuron runs at half threshold; the float-map ablation
        # variants pass through it too, so their value ranges are comparable.
        self.sn_attn = LifNeuron(LifParams(base.tau, 0.5, base.v_reset, base.surrogate_alpha, base.mode))
        self.proj = Linear(d, d, bias=False, rng=rng)
        self.bn_proj = BatchNorm(d)
        self.sn_proj = LifNeuron(LifParams(base.tau, 1.0, base.v_reset, base.surrogate_alpha, base.mode))
        if config.scale_learnable:
            self.scale = Tensor(np.array(config.scale, dtype=T.default_dtype()), requires_grad=True)
        else:
            self.scale = None

    def _branch(self, x: Tensor, which: str, time_steps: int, probe, name: str) -> Tensor:
        w = getattr(self, f"w_{which}")
        bn = getattr(self, f"bn_{which}")
        sn = getattr(self, f"sn_{which}")
        pre = bn(w(x))
        if probe is not None:
            probe.record_linear_input(f"{name}.w_{which}", x.data, fanout=w.weight.shape[1])
        if self.variant == "ssa" or (which == "v" and self.variant != "vsa_floatv"):
            return sn(pre, time_steps, probe=probe, name=f"{name}.sn_{which}")
        if self.variant == "relu":
            return T.relu(pre)
        if self.variant == "leakyrelu":
            return T.leaky_relu(pre, 0.01)
        return pre  # i / vsa float branches

    def _to_heads(self, t: Tensor) -> Tensor:
        m, n, _ = t.shape
        h, d = self.config.num_heads, self.config.head_dim
        return t.reshape(m, n, h, d).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, time_steps: int, probe=None, name: str = "attn") -> Tensor:
        n = x.shape[-2]
        q = self._to_heads(self._branch(x, "q", time_steps, probe, name))
        k = self._to_heads(self._branch(x, "k", time_steps, probe, name))
        v = self._to_heads(self._branch(x, "v", time_steps, probe, name))

        if self.variant in _SOFTMAX:
            attn = T.softmax_lastdim(T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.config.head_dim)))
            product = T.matmul(attn, v)
            if probe is not None:
                self._record_product(probe, name, q, v, attn.data, product.data, "qk_first")
            y = product
        else:
            # Float-map variants keep QK^T-first so the map exists for export
            # and the range diagnostics; decomposition is an SSA property.
            if self.variant == "ssa":
                order = select_order(self.config.order, n, self.config.head_dim)
            else:
                order = "qk_first"
            scale = self.scale if self.scale is not None else self.config.scale
            # Kernel dispatch requires genuinely binary operands: hard neurons
            # only (the smoothed oracle emits continuous values).
            fast = (self.variant == "ssa" and not T.grad_enabled()
                    and not (self.sn_q.soft or self.sn_k.soft or self.sn_v.soft))
            if fast:
                product, attn_map, counts = _binary_product(q.data, k.data, v.data, order)
                product = Tensor(product.astype(x.data.dtype), dtype=x.data.dtype)
            else:
                if order == "kv_first":
                    product = T.matmul(q, T.matmul(k.transpose(0, 1, 3, 2), v))
                    attn_map = None
                else:
                    attn = T.matmul(q, k.transpose(0, 1, 3, 2))
                    product = T.matmul(attn, v)
                    attn_map = attn.data
                counts = None
            scaled = product * scale
            if probe is not None:
                self._record_product(probe, name, q, v, attn_map, scaled.data, order, counts)
            y = self.sn_attn(scaled, time_steps, probe=probe, name=f"{name}.sn_attn")

        m = y.shape[0]
        merged = y.transpose(0, 2, 1, 3).reshape(m, n, self.config.embed_dim)
        if probe is not None:
            probe.record_linear_input(f"{name}.proj", merged.data, fanout=self.proj.weight.shape[1])
        return self.sn_proj(self.bn_proj(self.proj(merged)), time_steps, probe=probe, name=f"{name}.sn_proj")

    def _record_product(self, probe, name: str, q: Tensor, v: Tensor,
                        attn_map, product_values: np.ndarray, order: str,
                        counts: Optional[tuple[int, int]] = None) -> None:
        if counts is None:
            counts = _product_accumulates(q.data, v.data, attn_map, order)
        probe.record_attn_product(
            name=name, order=order,
            seq_len=q.shape[-2], head_dim=q.shape[-1], num_heads=q.shape[1],
            q_nnz=int(np.count_nonzero(q.data)), q_size=q.data.size,
            v_nnz=int(np.count_nonzero(v.data)), v_size=v.data.size,
            map_nnz=int(np.count_nonzero(attn_map)) if attn_map is not None else None,
            map_size=attn_map.size if attn_map is not None else None,
            stage1_accumulates=counts[0], stage2_accumulates=counts[1],
            product_values=product_values, attn_map=attn_map,
        )


def _binary_product(q: np.ndarray, k: np.ndarray, v: np.ndarray, order: str):
    """Production path: bit-packed AND/popcount + masked accumulation.

    Returns (product int array, attention map or None, per-stage accumulate
    counts). Exactly equal to the float matmul chain on the same operands.
    """
    if order == "kv_first":
        # K^T V as all-pairs column dots: binary_matmul(V^T, K^T) = (K^T V)^T.
        kv = kernels.binary_matmul(v.swapaxes(-1, -2), k.swapaxes(-1, -2)).swapaxes(-1, -2)
        c1 = int(np.count_nonzero(v)) * v.shape[-1]
        out, c2 = kernels.left_masked_matmul_counted(q, np.ascontiguousarray(kv))
        return out, None, (c1, c2)
    attn, c1 = kernels.binary_matmul_counted(q, k)
    out, c2 = kernels.masked_matmul_counted(attn, v)
    return out, attn, (c1, c2)


def _product_accumulates(q: np.ndarray, v: np.ndarray, attn_map, order: str) -> tuple[int, int]:
    """Spike-driven accumulate counts for both product stages (nnz * fanout)."""
    n, d = q.shape[-2], q.shape[-1]
    if order == "kv_first":
        return int(np.count_nonzero(v)) * d, int(np.count_nonzero(q)) * d
    stage1 = int(np.count_nonzero(q)) * n
    stage2 = (int(np.count_nonzero(attn_map)) if attn_map is not None else 0) * d
    return stage1, stage2
