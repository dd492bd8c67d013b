"""Leaky integrate-and-fire layers with sigmoid surrogate gradients.

The forward pass runs the hard-threshold membrane recurrence over the
leading time axis and emits exact {0,1} spikes. The backward pass
substitutes the sigmoid surrogate for the Heaviside derivative and
propagates through the membrane leak across time steps (BPTT).

A ``soft=True`` variant replaces the Heaviside with the sigmoid itself in
the forward pass and differentiates the full recurrence; it exists as the
finite-difference oracle for the production hard-forward/soft-backward
path and uses the identical surrogate values at identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .modules import Module
from .tensor import Tensor


@dataclass
class LifParams:
    """Membrane constants. ``mode`` selects leaky ("lif") or pure ("if") integration."""
    tau: float = 2.0
    v_threshold: float = 1.0
    v_reset: float = 0.0
    surrogate_alpha: float = 4.0
    mode: str = "lif"

    def __post_init__(self):
        if self.mode not in ("lif", "if"):
            raise ValueError(f"unknown neuron mode {self.mode!r}")
        if self.mode == "lif" and self.tau < 1.0:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.v_threshold <= self.v_reset:
            raise ValueError(f"v_threshold {self.v_threshold} must exceed v_reset {self.v_reset}")


@dataclass
class LifState:
    """Per-call record of the recurrence (detached from the tape)."""
    membrane: np.ndarray          # V[t] after reset, [T, ...]
    pre_spike: np.ndarray         # H[t] before thresholding, [T, ...]
    spikes: np.ndarray            # S[t], [T, ...]


def surrogate_grad(h_minus_vth: np.ndarray, alpha: float = 4.0) -> np.ndarray:
    """d/dx Sigmoid(alpha*x) evaluated at x = H - V_th; bounded by alpha/4."""
    x = np.asarray(h_minus_vth)
    if x.dtype.kind != "f":
        x = x.astype(T.default_dtype())
    s = T.sigmoid_array(alpha * x)
    return alpha * s * (1.0 - s)


def lif_forward(x: Tensor, params: LifParams, time_steps: int,
                soft: bool = False, state_out: Optional[dict] = None) -> Tensor:
    """Run the spiking recurrence over the leading time axis.

    ``x`` is shaped [T*B, ...]; the layer treats T as an independent axis
    and everything else as batch. Membrane potential starts at v_reset and
    is local to the call (stateless across samples).
    """
    if time_steps <= 0:
        raise ShapeError("neuron input must cover at least one time step")
    if x.shape[0] % time_steps:
        raise ShapeError(f"leading dim {x.shape[0]} not divisible by T={time_steps}")

    dt = x.data.dtype
    xs = x.data.reshape(time_steps, -1)
    tau = dt.type(params.tau)
    v_th = dt.type(params.v_threshold)
    v_reset = dt.type(params.v_reset)
    alpha = dt.type(params.surrogate_alpha)
    leaky = params.mode == "lif"

    spikes = np.empty_like(xs)
    h_rec = np.empty_like(xs)
    v_rec = np.empty_like(xs)
    v = np.full(xs.shape[1:], v_reset, dtype=dt)
    for t in range(time_steps):
        if leaky:
            h = v + (xs[t] - (v - v_reset)) / tau
        else:
            h = v + xs[t]
        if soft:
            s = T.sigmoid_array(alpha * (h - v_th))
        else:
            s = (h >= v_th).astype(dt)
        v = h * (1.0 - s) + v_reset * s
        spikes[t] = s
        h_rec[t] = h
        v_rec[t] = v

    out = Tensor(spikes.reshape(x.shape), dtype=dt)
    if state_out is not None:
        state_out["state"] = LifState(membrane=v_rec.copy(), pre_spike=h_rec.copy(),
                                      spikes=spikes.copy())

    x_coef = 1.0 / tau if leaky else dt.type(1.0)
    leak = (1.0 - 1.0 / tau) if leaky else dt.type(1.0)

    def backward(g):
        gs = g.reshape(time_steps, -1)
        gx = np.empty_like(xs)
        if soft:
            surr = alpha * spikes * (1.0 - spikes)
            # Full chain through the reset gate: dV/dH = (1-S) + (v_reset-H)*dS/dH.
            gate = (v_reset - h_rec) * surr
            gate += 1.0
            gate -= spikes
        else:
            surr = h_rec - v_th  # fresh temp; reused in place below
            surr *= alpha
            sig = T.sigmoid_array(surr)
            np.subtract(1.0, sig, out=surr)
            surr *= sig
            surr *= alpha
            # Reset gate is detached: gradient flows through H only.
            gate = 1.0 - spikes
        gh = np.empty(xs.shape[1:], dtype=xs.dtype)
        gh_prev = None
        for t in range(time_steps - 1, -1, -1):
            np.multiply(gs[t], surr[t], out=gh)
            if gh_prev is not None:
                gh_prev *= leak
                gh_prev *= gate[t]
                gh += gh_prev
            np.multiply(gh, x_coef, out=gx[t])
            if gh_prev is None:
                gh_prev = np.empty_like(gh)
            gh, gh_prev = gh_prev, gh
        return (gx.reshape(x.shape),)

    return T._record(out, (x,), backward)


def set_soft_mode(module: Module, soft: bool = True) -> None:
    """Flip every neuron layer under ``module`` to the smoothed (oracle) forward."""
    if isinstance(module, LifNeuron):
        module.soft = soft
    for _, child in module._children():
        set_soft_mode(child, soft)


class LifNeuron(Module):
    """Spiking neuron layer; output values are exactly 0.0 or 1.0 (hard mode)."""

    def __init__(self, params: Optional[LifParams] = None, soft: bool = False, **overrides):
        super().__init__()
        self.params = params or LifParams(**overrides)
        self.soft = soft
        self.last_state: Optional[LifState] = None

    def forward(self, x: Tensor, time_steps: int, probe=None, name: str = "") -> Tensor:
        rec: dict = {}
        out = lif_forward(x, self.params, time_steps, soft=self.soft, state_out=rec)
        self.last_state = rec["state"]
        if probe is not None:
            probe.record_spikes(name or "neuron", out.data)
        return out
