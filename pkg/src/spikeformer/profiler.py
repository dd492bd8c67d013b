"""Firing-rate instrumentation, FLOP/SOP accounting, and energy estimation.

Cost model: a layer's dense cost is its multiply-accumulate (MAC) count;
synaptic operations are SOPs = fr * T * FLOPs with fr the nonzero density
of the layer's input as consumed by the dense kernel (for convolutions
that is the unfolded/im2col input, which makes the rate-based estimate
equal the directly counted accumulates exactly, borders included). Energy bills
the first stem convolution (real-valued input) at E_MAC = 4.6 pJ per MAC
and every spike-consuming layer at E_AC = 0.9 pJ per accumulate; both
constants are overridable for other technology nodes.

The attention product is the one layer whose dense cost is quoted in
ops (multiplies and adds counted separately, 4*N^2*d*H for the QK-first
order) rather than MACs; that convention makes the 77e6-op / 354.2-uJ
reference workload come out right, and the energy tests pin it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import InstrumentationError
from .model import ModelConfig, SpikeTransformer

E_MAC_PJ = 4.6
E_AC_PJ = 0.9


# ---------------------------------------------------------------------
# dense FLOP counting
# ---------------------------------------------------------------------

@dataclass
class LayerDesc:
    """Shape record for one layer; ``kind`` selects the counting rule."""
    name: str
    kind: str  # conv | linear | attention
    params: dict
    billing: str = "ac"        # mac | ac
    steps_factor: Optional[int] = None  # None -> model time steps


def count_flops(desc: LayerDesc) -> int:
    """Dense per-image, per-step cost of a layer (data independent)."""
    p = desc.params
    if desc.kind == "conv":
        return p["out_ch"] * p["in_ch"] * p["kernel"] ** 2 * p["out_h"] * p["out_w"]
    if desc.kind == "linear":
        return p["seq"] * p["d_in"] * p["d_out"]
    if desc.kind == "attention":
        # Both product stages, multiplies and adds separately, all heads.
        return 4 * p["seq"] ** 2 * p["head_dim"] * p["num_heads"]
    raise InstrumentationError(f"unknown layer kind {desc.kind!r} in descriptor {desc.name}")


def count_sops(flops: int, fr, time_steps: int) -> int:
    """SOPs = fr * T * FLOPs, floored to an integer.

    ``fr`` may be a float in [0, 1] or an exact (nnz, size) pair; the pair
    keeps the product in integer arithmetic so it matches in-kernel
    accumulate counts exactly.
    """
    if isinstance(fr, tuple):
        nnz, size = fr
        if size <= 0 or not 0 <= nnz <= size:
            raise InstrumentationError(f"bad firing-rate fraction {nnz}/{size}")
        return (nnz * time_steps * flops) // size
    if not 0.0 <= fr <= 1.0:
        raise InstrumentationError(f"firing rate {fr} outside [0, 1]")
    return math.floor(fr * time_steps * flops)


def layer_descriptors(config: ModelConfig) -> list[LayerDesc]:
    """Descriptors for every counted layer of a model, in forward order."""
    out: list[LayerDesc] = []
    spatial = config.image_size
    in_ch = config.in_channels
    for i, out_ch in enumerate(config.channel_schedule):
        out.append(LayerDesc(
            name=f"sps.block{i}.conv", kind="conv",
            params=dict(out_ch=out_ch, in_ch=in_ch, kernel=3, out_h=spatial, out_w=spatial),
            billing="mac" if i == 0 else "ac"))
        if (i + 1) in config.sps_pooled:
            spatial //= 2
        in_ch = out_ch
    d, n = config.embed_dim, config.num_patches
    grid = config.grid_size
    out.append(LayerDesc(name="rpe.conv", kind="conv",
                         params=dict(out_ch=d, in_ch=d, kernel=3, out_h=grid, out_w=grid)))
    attn_billing = "ac" if config.variant == "ssa" else "mac"
    for b in range(config.num_blocks):
        for branch in ("w_q", "w_k", "w_v"):
            out.append(LayerDesc(name=f"block{b}.attn.{branch}", kind="linear",
                                 params=dict(seq=n, d_in=d, d_out=d)))
        out.append(LayerDesc(name=f"block{b}.attn.product", kind="attention",
                             params=dict(seq=n, head_dim=d // config.num_heads,
                                         num_heads=config.num_heads),
                             billing=attn_billing))
        out.append(LayerDesc(name=f"block{b}.attn.proj", kind="linear",
                             params=dict(seq=n, d_in=d, d_out=d), billing=attn_billing))
        out.append(LayerDesc(name=f"block{b}.mlp.fc1", kind="linear",
                             params=dict(seq=n, d_in=d, d_out=d * config.mlp_ratio)))
        out.append(LayerDesc(name=f"block{b}.mlp.fc2", kind="linear",
                             params=dict(seq=n, d_in=d * config.mlp_ratio, d_out=d)))
    out.append(LayerDesc(name="head", kind="linear",
                         params=dict(seq=1, d_in=d, d_out=config.num_classes),
                         steps_factor=1))
    return out


# ---------------------------------------------------------------------
# probe: per-call instrumentation collected during eval forwards
# ---------------------------------------------------------------------

class Probe:
    """Accumulates spike counts, layer-input densities, and product stats.

    Layers call the ``record_*`` hooks when a probe is passed down the
    forward; all state is local to the probe instance.
    """

    def __init__(self, collect_values: bool = False):
        self.collect_values = collect_values
        self.spikes: dict[str, dict] = {}
        self.inputs: dict[str, dict] = {}
        self.attn: dict[str, dict] = {}
        self.n_images = 0
        self.time_steps = 0

    # -- hooks ----------------------------------------------------------
    def record_spikes(self, name: str, arr: np.ndarray) -> None:
        rec = self.spikes.setdefault(name, {"spikes": 0, "elements": 0, "violations": 0})
        rec["spikes"] += int(np.count_nonzero(arr))
        rec["elements"] += int(arr.size)
        rec["violations"] += int(np.count_nonzero((arr != 0.0) & (arr != 1.0)))

    def record_linear_input(self, name: str, arr: np.ndarray, fanout: int,
                            steps_factor: Optional[int] = None) -> None:
        rec = self.inputs.setdefault(name, {"nnz": 0, "size": 0, "accumulates": 0,
                                            "steps_factor": steps_factor})
        nnz = int(np.count_nonzero(arr))
        rec["nnz"] += nnz
        rec["size"] += int(arr.size)
        rec["accumulates"] += nnz * int(fanout)

    def record_conv_input(self, name: str, arr: np.ndarray, w_shape: tuple) -> None:
        # Density of the unfolded input (channels-last maps; 3x3, stride 1, pad 1).
        out_ch, _, kh, kw = w_shape
        xp = np.pad(arr != 0, ((0, 0), (1, 1), (1, 1), (0, 0)))
        h, w = arr.shape[1], arr.shape[2]
        nnz = 0
        for ki in range(kh):
            for kj in range(kw):
                nnz += int(np.count_nonzero(xp[:, ki:ki + h, kj:kj + w, :]))
        rec = self.inputs.setdefault(name, {"nnz": 0, "size": 0, "accumulates": 0,
                                            "steps_factor": None})
        rec["nnz"] += nnz
        rec["size"] += int(arr.shape[0]) * int(arr.shape[3]) * kh * kw * h * w
        rec["accumulates"] += nnz * int(out_ch)

    def record_attn_product(self, name: str, order: str, seq_len: int, head_dim: int,
                            num_heads: int, q_nnz: int, q_size: int, v_nnz: int,
                            v_size: int, map_nnz, map_size,
                            stage1_accumulates: int, stage2_accumulates: int,
                            product_values: np.ndarray, attn_map) -> None:
        rec = self.attn.setdefault(name, {
            "order": order, "seq_len": seq_len, "head_dim": head_dim, "num_heads": num_heads,
            "q_nnz": 0, "q_size": 0, "v_nnz": 0, "v_size": 0,
            "map_nnz": 0, "map_size": 0, "stage1": 0, "stage2": 0,
            "vmin": math.inf, "vmax": -math.inf, "values": [], "last_map": None,
            "last_product": None,
        })
        rec["q_nnz"] += q_nnz
        rec["q_size"] += q_size
        rec["v_nnz"] += v_nnz
        rec["v_size"] += v_size
        if map_nnz is not None:
            rec["map_nnz"] += map_nnz
            rec["map_size"] += map_size
        rec["stage1"] += stage1_accumulates
        rec["stage2"] += stage2_accumulates
        if product_values.size:
            rec["vmin"] = min(rec["vmin"], float(product_values.min()))
            rec["vmax"] = max(rec["vmax"], float(product_values.max()))
        if self.collect_values:
            rec["values"].append(np.asarray(product_values, dtype=np.float64).ravel())
            rec["last_map"] = None if attn_map is None else np.asarray(attn_map)
            rec["last_product"] = np.asarray(product_values)

    def mark_batch(self, n_images: int, time_steps: int) -> None:
        self.n_images += n_images
        self.time_steps = time_steps

    # -- summaries -------------------------------------------------------
    def binary_violations(self) -> int:
        return sum(rec["violations"] for rec in self.spikes.values())

    def firing_rates(self) -> "FiringRateStats":
        rows = [FiringRateRow(name, rec["spikes"], rec["elements"],
                              rec["spikes"] / rec["elements"] if rec["elements"] else 0.0)
                for name, rec in self.spikes.items()]
        return FiringRateStats(rows)

    def histograms(self, bins: int = 64) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Per attention layer: (bin centers, counts) over Q K^T V * s values."""
        out = {}
        for name, rec in self.attn.items():
            if not rec["values"]:
                continue
            values = np.concatenate(rec["values"])
            values = values[np.isfinite(values)]
            if values.size == 0:
                continue
            lo, hi = float(values.min()), float(values.max())
            if hi <= lo:
                hi = lo + 1.0
            counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
            out[name] = ((edges[:-1] + edges[1:]) / 2.0, counts)
        return out


@dataclass
class FiringRateRow:
    layer: str
    spikes: int
    elements: int
    rate: float


@dataclass
class FiringRateStats:
    rows: list[FiringRateRow]

    def rate(self, layer: str) -> float:
        for row in self.rows:
            if row.layer == layer:
                return row.rate
        raise KeyError(layer)


# ---------------------------------------------------------------------
# energy reports
# ---------------------------------------------------------------------

@dataclass
class LayerEnergy:
    name: str
    kind: str
    billing: str          # mac | ac
    flops: int            # dense cost over the probe set (single pass per image)
    sops: int             # counted accumulates over the probe set (all T steps)
    fr: float
    energy_pj: float


@dataclass
class EnergyReport:
    layers: list[LayerEnergy]
    n_images: int
    time_steps: int
    e_mac_pj: float = E_MAC_PJ
    e_ac_pj: float = E_AC_PJ
    attn_details: dict = field(default_factory=dict)

    @property
    def total_energy_pj(self) -> float:
        return sum(row.energy_pj for row in self.layers)

    @property
    def total_flops(self) -> int:
        return sum(row.flops for row in self.layers)

    @property
    def total_sops(self) -> int:
        return sum(row.sops for row in self.layers)

    def csv_rows(self) -> list[tuple]:
        return [(r.name, r.kind, r.flops, r.sops, f"{r.fr:.6f}", f"{r.energy_pj:.1f}")
                for r in self.layers]


def energy_snn(report: EnergyReport) -> float:
    """First conv at MAC cost, every spike-consuming layer at AC cost (pJ)."""
    total = 0.0
    for row in report.layers:
        if row.billing == "mac":
            total += report.e_mac_pj * row.flops
        else:
            total += report.e_ac_pj * row.sops
    return total


def energy_ann(report: EnergyReport) -> float:
    """Everything at MAC cost: the dense ANN-equivalent (pJ)."""
    return report.e_mac_pj * report.total_flops


def run_probe(model: SpikeTransformer, images: np.ndarray, batch_size: int = 64,
              collect_values: bool = False) -> Probe:
    """Eval-mode forward passes over ``images`` with instrumentation attached."""
    if len(images) == 0:
        raise InstrumentationError("empty probe set")
    probe = Probe(collect_values=collect_values)
    was_training = model.training
    model.eval()
    try:
        with T.no_grad():
            for start in range(0, len(images), batch_size):
                batch = images[start:start + batch_size]
                model(batch, probe=probe)
                probe.mark_batch(len(batch), model.config.time_steps)
    finally:
        if was_training:
            model.train()
    return probe


def firing_rate_probe(model: SpikeTransformer, images: np.ndarray,
                      batch_size: int = 64, bins: int = 64):
    """Per-layer firing rates plus value-range histograms of the products."""
    probe = run_probe(model, images, batch_size=batch_size, collect_values=True)
    return probe.firing_rates(), probe.histograms(bins=bins)


def energy_report(model: SpikeTransformer, images: np.ndarray, batch_size: int = 64,
                  e_mac_pj: float = E_MAC_PJ, e_ac_pj: float = E_AC_PJ,
                  probe: Optional[Probe] = None) -> EnergyReport:
    """Per-layer FLOPs/SOPs/energy over a probe set, from measured densities."""
    if probe is None:
        probe = run_probe(model, images, batch_size=batch_size)
    cfg = model.config
    rows: list[LayerEnergy] = []
    details: dict = {}
    for desc in layer_descriptors(cfg):
        per_image = count_flops(desc)
        flops = per_image * probe.n_images
        if desc.kind == "attention":
            key = desc.name.rsplit(".product", 1)[0]
            rec = probe.attn.get(key)
            sops = (rec["stage1"] + rec["stage2"]) if rec else 0
            fr = (rec["q_nnz"] / rec["q_size"]) if rec and rec["q_size"] else 0.0
            if rec:
                details[key] = {
                    "order": rec["order"],
                    "stage1_accumulates": rec["stage1"],
                    "stage2_accumulates": rec["stage2"],
                    "value_min": rec["vmin"], "value_max": rec["vmax"],
                    "sops_estimate": _attention_sop_estimate(rec, probe),
                }
        else:
            rec = probe.inputs.get(desc.name)
            if rec and rec["size"]:
                sops = rec["accumulates"]
                fr = rec["nnz"] / rec["size"]
            else:
                sops, fr = 0, 0.0
        rows.append(LayerEnergy(
            name=desc.name, kind=desc.kind, billing=desc.billing,
            flops=flops, sops=sops, fr=fr,
            energy_pj=(e_mac_pj * flops) if desc.billing == "mac" else (e_ac_pj * sops)))
    return EnergyReport(layers=rows, n_images=probe.n_images, time_steps=cfg.time_steps,
                        e_mac_pj=e_mac_pj, e_ac_pj=e_ac_pj, attn_details=details)


def _attention_sop_estimate(rec: dict, probe: Probe) -> int:
    """Rate-based SOP estimate for both product stages (fr * T * FLOPs)."""
    n, d, h = rec["seq_len"], rec["head_dim"], rec["num_heads"]
    t = probe.time_steps
    per_image = probe.n_images
    if rec["order"] == "kv_first":
        stage = n * d * d * h * per_image
        s1 = count_sops(stage, (rec["v_nnz"], rec["v_size"]), t)
        s2 = count_sops(stage, (rec["q_nnz"], rec["q_size"]), t)
    else:
        stage = n * n * d * h * per_image
        s1 = count_sops(stage, (rec["q_nnz"], rec["q_size"]), t)
        s2 = count_sops(stage, (rec["map_nnz"], rec["map_size"]), t) if rec["map_size"] else 0
    return s1 + s2
