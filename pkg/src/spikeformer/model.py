"""Full spiking transformer: conv stem, position generator, encoder stack, head.

Data layout: static images are replicated along a leading time axis and
every non-neuron layer sees time folded into the batch dimension
([T*B, ...]); only spiking neuron layers unfold the time axis to run
their membrane recurrence. Residual connections are plain additions of
spike-valued tensors, so activations between blocks are small
non-negative integers rather than strict {0,1}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import SpikingSelfAttention, SsaConfig, VARIANTS
from .errors import ConfigError, ShapeError
from .modules import BatchNorm, Conv2d, Linear, Module
from .neuron import LifNeuron, LifParams
from .tensor import Tensor


@dataclass
class ModelConfig:
    """Hyperparameters of one model instance; serializable as key=value lines."""
    time_steps: int = 4
    in_channels: int = 1
    image_size: int = 16
    embed_dim: int = 64
    num_blocks: int = 2
    num_heads: int = 4
    mlp_ratio: int = 4
    num_classes: int = 4
    sps_blocks: int = 4
    sps_pooled: tuple[int, ...] = (3, 4)  # 1-based indices of pooled stem blocks
    variant: str = "ssa"
    scale: float = 0.125
    scale_learnable: bool = False
    order: str = "auto"
    tau: float = 2.0
    surrogate_alpha: float = 4.0
    neuron_mode: str = "lif"

    def __post_init__(self):
        if self.time_steps < 1:
            raise ConfigError(f"time_steps must be >= 1, got {self.time_steps}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown attention variant {self.variant!r}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.sps_blocks < 1:
            raise ConfigError("sps_blocks must be >= 1")
        bad = [i for i in self.sps_pooled if not 1 <= i <= self.sps_blocks]
        if bad:
            raise ConfigError(f"pooled block indices out of range: {bad}")
        if self.embed_dim % (1 << (self.sps_blocks - 1)):
            raise ConfigError(f"embed_dim {self.embed_dim} must be divisible by 2^{self.sps_blocks - 1}")
        reduction = 1 << len(self.sps_pooled)
        if self.image_size % reduction:
            raise ConfigError(f"image size {self.image_size} not divisible by pool reduction {reduction}")

    @property
    def grid_size(self) -> int:
        return self.image_size // (1 << len(self.sps_pooled))

    @property
    def num_patches(self) -> int:
        return self.grid_size * self.grid_size

    @property
    def channel_schedule(self) -> list[int]:
        # Four stem blocks carry D/8, D/4, D/2, D; fewer blocks halve from D.
        return [self.embed_dim >> (self.sps_blocks - 1 - i) for i in range(self.sps_blocks)]

    def neuron_params(self, v_threshold: float = 1.0) -> LifParams:
        return LifParams(tau=self.tau, v_threshold=v_threshold, v_reset=0.0,
                         surrogate_alpha=self.surrogate_alpha, mode=self.neuron_mode)

    def to_kv(self) -> dict[str, str]:
        return {
            "time_steps": str(self.time_steps),
            "in_channels": str(self.in_channels),
            "image_size": str(self.image_size),
            "embed_dim": str(self.embed_dim),
            "num_blocks": str(self.num_blocks),
            "num_heads": str(self.num_heads),
            "mlp_ratio": str(self.mlp_ratio),
            "num_classes": str(self.num_classes),
            "sps_blocks": str(self.sps_blocks),
            "sps_pooled": ",".join(str(i) for i in self.sps_pooled),
            "variant": self.variant,
            "scale": repr(self.scale),
            "scale_learnable": str(int(self.scale_learnable)),
            "order": self.order,
            "tau": repr(self.tau),
            "surrogate_alpha": repr(self.surrogate_alpha),
            "neuron_mode": self.neuron_mode,
        }

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "ModelConfig":
        def geti(key, default):
            return int(kv[key]) if key in kv else default

        def getf(key, default):
            return float(kv[key]) if key in kv else default

        pooled = kv.get("sps_pooled", "3,4")
        pooled_t = tuple(int(p) for p in pooled.split(",") if p.strip()) if pooled else ()
        try:
            return cls(
                time_steps=geti("time_steps", 4),
                in_channels=geti("in_channels", 1),
                image_size=geti("image_size", 16),
                embed_dim=geti("embed_dim", 64),
                num_blocks=geti("num_blocks", 2),
                num_heads=geti("num_heads", 4),
                mlp_ratio=geti("mlp_ratio", 4),
                num_classes=geti("num_classes", 4),
                sps_blocks=geti("sps_blocks", 4),
                sps_pooled=pooled_t,
                variant=kv.get("variant", "ssa"),
                scale=getf("scale", 0.125),
                scale_learnable=bool(int(kv.get("scale_learnable", "0"))),
                order=kv.get("order", "auto"),
                tau=getf("tau", 2.0),
                surrogate_alpha=getf("surrogate_alpha", 4.0),
                neuron_mode=kv.get("neuron_mode", "lif"),
            )
        except ValueError as exc:
            raise ConfigError(f"bad model config value: {exc}") from exc


def replicate_static_input(image: Tensor, time_steps: int) -> Tensor:
    """Repeat a static input along a new leading time axis (identical copies)."""
    if time_steps < 1:
        raise ShapeError("time_steps must be >= 1")
    data = np.broadcast_to(image.data[None], (time_steps,) + image.shape).copy()
    out = Tensor(data, dtype=image.data.dtype)

    def backward(g):
        return (g.sum(axis=0),)

    return T._record(out, (image,), backward)


class StemBlock(Module):
    """Conv -> BN -> neuron -> optional 2x2 max-pool."""

    def __init__(self, in_ch: int, out_ch: int, pooled: bool, neuron: LifParams,
                 rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, rng=rng)
        self.bn = BatchNorm(out_ch)
        self.sn = LifNeuron(neuron)
        self.pooled = pooled

    def forward(self, x: Tensor, time_steps: int, probe=None, name: str = "sps") -> Tensor:
        if probe is not None:
            probe.record_conv_input(f"{name}.conv", x.data, self.conv.weight.shape)
        y = self.sn(self.bn(self.conv(x)), time_steps, probe=probe, name=f"{name}.sn")
        if self.pooled:
            y = T.maxpool2d_nhwc(y)
        return y


class PatchStem(Module):
    """Spiking patch splitting: stacked stem blocks, then flatten to [M, N, D]."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        schedule = config.channel_schedule
        blocks = []
        in_ch = config.in_channels
        for i, out_ch in enumerate(schedule, start=1):
            blocks.append(StemBlock(in_ch, out_ch, pooled=i in config.sps_pooled,
                                    neuron=config.neuron_params(), rng=rng))
            in_ch = out_ch
        self.blocks = blocks

    def forward(self, x: Tensor, time_steps: int, probe=None) -> Tensor:
        for i, block in enumerate(self.blocks):
            x = block(x, time_steps, probe=probe, name=f"sps.block{i}")
        m, gh, gw, d = x.shape
        return x.reshape(m, gh * gw, d)


class PositionGenerator(Module):
    """Conditional relative position embedding: 3x3 conv over the patch grid."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        d = config.embed_dim
        self.grid = config.grid_size
        self.conv = Conv2d(d, d, rng=rng)
        self.bn = BatchNorm(d)
        self.sn = LifNeuron(config.neuron_params())

    def forward(self, x: Tensor, time_steps: int, probe=None) -> Tensor:
        m, n, d = x.shape
        if n != self.grid * self.grid:
            raise ConfigError(f"{n} patches do not fit a {self.grid}x{self.grid} grid")
        grid = x.reshape(m, self.grid, self.grid, d)
        if probe is not None:
            probe.record_conv_input("rpe.conv", grid.data, self.conv.weight.shape)
        pe = self.sn(self.bn(self.conv(grid)), time_steps, probe=probe, name="rpe.sn")
        return pe.reshape(m, n, d)


class FeedForward(Module):
    """Token MLP: Linear(D -> rD) -> BN -> neuron -> Linear(rD -> D) -> BN -> neuron."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        d = config.embed_dim
        hidden = d * config.mlp_ratio
        self.fc1 = Linear(d, hidden, bias=False, rng=rng)
        self.bn1 = BatchNorm(hidden)
        self.sn1 = LifNeuron(config.neuron_params())
        self.fc2 = Linear(hidden, d, bias=False, rng=rng)
        self.bn2 = BatchNorm(d)
        self.sn2 = LifNeuron(config.neuron_params())

    def forward(self, x: Tensor, time_steps: int, probe=None, name: str = "mlp") -> Tensor:
        if probe is not None:
            probe.record_linear_input(f"{name}.fc1", x.data, fanout=self.fc1.weight.shape[1])
        h = self.sn1(self.bn1(self.fc1(x)), time_steps, probe=probe, name=f"{name}.sn1")
        if probe is not None:
            probe.record_linear_input(f"{name}.fc2", h.data, fanout=self.fc2.weight.shape[1])
        return self.sn2(self.bn2(self.fc2(h)), time_steps, probe=probe, name=f"{name}.sn2")


class EncoderBlock(Module):
    """Attention and MLP sub-blocks, each wrapped in a residual addition."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        ssa_cfg = SsaConfig(embed_dim=config.embed_dim, num_heads=config.num_heads,
                            scale=config.scale, scale_learnable=config.scale_learnable,
                            order=config.order)
        self.attn = SpikingSelfAttention(ssa_cfg, variant=config.variant,
                                         neuron=config.neuron_params(), rng=rng)
        self.mlp = FeedForward(config, rng=rng)

    def forward(self, x: Tensor, time_steps: int, probe=None, name: str = "block") -> Tensor:
        x = self.attn(x, time_steps, probe=probe, name=f"{name}.attn") + x
        x = self.mlp(x, time_steps, probe=probe, name=f"{name}.mlp") + x
        return x


class SpikeTransformer(Module):
    """The full classifier; forward maps [B, C, H, W] images to [B, classes] logits."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.config = config
        self.stem = PatchStem(config, rng)
        self.pos = PositionGenerator(config, rng)
        self.blocks = [EncoderBlock(config, rng) for _ in range(config.num_blocks)]
        self.head = Linear(config.embed_dim, config.num_classes, bias=True, rng=rng)

    def forward(self, images, probe=None) -> Tensor:
        cfg = self.config
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images))
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        if x.ndim != 4:
            raise ShapeError(f"expected [B,C,H,W] images, got {x.shape}")
        if x.shape[1] != cfg.in_channels or x.shape[2] != cfg.image_size or x.shape[3] != cfg.image_size:
            raise ShapeError(f"input {x.shape} does not match configured "
                             f"[{cfg.in_channels},{cfg.image_size},{cfg.image_size}]")
        batch = x.shape[0]
        t = cfg.time_steps
        rep = replicate_static_input(x, t).reshape(t * batch, *x.shape[1:])
        rep = rep.transpose(0, 2, 3, 1)  # channels-last for the conv stack
        tokens = self.stem(rep, t, probe=probe)
        tokens = tokens + self.pos(tokens, t, probe=probe)
        for i, block in enumerate(self.blocks):
            tokens = block(tokens, t, probe=probe, name=f"block{i}")
        pooled = tokens.mean(axis=1)                      # GAP over patches
        rate = pooled.reshape(t, batch, cfg.embed_dim).mean(axis=0)  # rate over time
        if probe is not None:
            probe.record_linear_input("head", rate.data, fanout=self.head.weight.shape[1],
                                      steps_factor=1)
        return self.head(rate)

    def predict(self, images) -> np.ndarray:
        with T.no_grad():
            return self.forward(images).data

    # -- persistence helpers -------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        state: dict[str, np.ndarray] = {}
        for name, p in self.named_parameters():
            state[name] = p.data
        for name, buf in self.named_buffers():
            state[name] = buf
        return state

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        from .errors import CheckpointShapeError
        state = self.state_arrays()
        missing = sorted(set(state) - set(arrays))
        extra = sorted(set(arrays) - set(state))
        if missing or extra:
            raise CheckpointShapeError(f"state mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, target in state.items():
            value = np.asarray(arrays[name])
            if tuple(value.shape) != tuple(target.shape):
                raise CheckpointShapeError(
                    f"tensor {name!r}: checkpoint shape {value.shape} vs model {target.shape}")
            target[...] = value.astype(target.dtype)
