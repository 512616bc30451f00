"""RRDB post-processing filter for the human-layer reconstruction.

A residual-in-residual dense network estimates the coding noise left by the
two-layer codec and subtracts it. All residual-emitting convolutions start at
zero, so an untrained model is exactly the identity and can never make a
decoded image worse before training.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import Checkpoint
from .errors import CheckpointMismatchError, ConfigError
from .imaging import Image

RESIDUAL_SCALE = 0.2


@dataclass(frozen=True)
class RRDBConfig:
    """Structure of the restoration trunk; `l` counts the RRDBs."""

    l: int = 1
    features: int = 64
    growth: int = 32
    beta: float = RESIDUAL_SCALE
    dense_convs: int = 5
    blocks_per_rrdb: int = 3

    def __post_init__(self):
        if self.l < 1:
            raise ConfigError(f"l must be >= 1, got {self.l}")
        if self.features < 1 or self.growth < 1:
            raise ConfigError("features and growth must be >= 1")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")
        if self.dense_convs < 2:
            raise ConfigError("dense_convs must be >= 2")
        if self.blocks_per_rrdb < 1:
            raise ConfigError("blocks_per_rrdb must be >= 1")

    def to_dict(self) -> dict:
        return {
            "l": self.l,
            "features": self.features,
            "growth": self.growth,
            "beta": self.beta,
            "dense_convs": self.dense_convs,
            "blocks_per_rrdb": self.blocks_per_rrdb,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RRDBConfig":
        return cls(**d)


def parameter_count(config: RRDBConfig) -> int:
    """Closed-form parameter count of the network built from `config`.

    Head: 3x3 conv 3->F. Dense block: dense_convs 3x3 convs, the first
    dense_convs-1 emitting `growth` channels from the running concatenation,
    the last emitting `features`. Tail: 3x3 conv F->3. All convs biased.
    """
    f, g, d = config.features, config.growth, config.dense_convs
    head = (3 * 9 + 1) * f
    dense = sum((f + i * g) * 9 * g + g for i in range(d - 1))
    dense += (f + (d - 1) * g) * 9 * f + f
    tail = (f * 9 + 1) * 3
    return head + config.l * config.blocks_per_rrdb * dense + tail


class _DenseBlock(nn.Module):
    def __init__(self, cfg: RRDBConfig):
        super().__init__()
        f, g = cfg.features, cfg.growth
        self.convs = nn.ModuleList(
            nn.Conv2d(f + i * g, g, 3, padding=1) for i in range(cfg.dense_convs - 1))
        self.final = nn.Conv2d(f + (cfg.dense_convs - 1) * g, f, 3, padding=1)
        nn.init.zeros_(self.final.weight)
        nn.init.zeros_(self.final.bias)
        self.lrelu = nn.LeakyReLU(0.2)
        self.beta = cfg.beta

    def forward(self, x):
        feats = [x]
        for conv in self.convs:
            feats.append(self.lrelu(conv(torch.cat(feats, dim=1))))
        return x + self.beta * self.final(torch.cat(feats, dim=1))


class _RRDB(nn.Module):
    def __init__(self, cfg: RRDBConfig):
        super().__init__()
        self.blocks = nn.Sequential(*(_DenseBlock(cfg) for _ in range(cfg.blocks_per_rrdb)))
        self.beta = cfg.beta

    def forward(self, x):
        return x + self.beta * self.blocks(x)


class PostprocModel(nn.Module):
    """Head conv, `l` RRDBs, zero-initialized tail conv, global residual."""

    def __init__(self, config: RRDBConfig):
        super().__init__()
        self.config = config
        self.head = nn.Conv2d(3, config.features, 3, padding=1)
        self.body = nn.Sequential(*(_RRDB(config) for _ in range(config.l)))
        self.tail = nn.Conv2d(config.features, 3, 3, padding=1)
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def residual(self, x):
        return self.tail(self.body(self.head(x)))

    def forward(self, x):
        return x + self.residual(x)


def build_postproc(config: RRDBConfig, seed: int) -> PostprocModel:
    """Build a model with seed-deterministic initialization.

    The global torch RNG state is saved and restored, so building a model
    never perturbs unrelated random streams.
    """
    state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        model = PostprocModel(config)
    finally:
        torch.random.set_rng_state(state)
    model.eval()
    if model.parameter_count != parameter_count(config):
        raise ConfigError("parameter count does not match the closed form")
    return model


def residual_of(image: Image, model: PostprocModel) -> np.ndarray:
    """Raw residual branch output (H, W, 3) before the output clamp."""
    x = torch.from_numpy(np.ascontiguousarray(image.pixels.transpose(2, 0, 1)))[None]
    with torch.no_grad():
        r = model.residual(x)
    return r[0].numpy().transpose(1, 2, 0)


def refine(image: Image, model: PostprocModel) -> Image:
    """clamp(image + residual(image), 0, 1) at the input's dimensions."""
    return Image.from_array(image.pixels + residual_of(image, model), clamp=True)


def postproc_checkpoint(model: PostprocModel, meta: dict) -> Checkpoint:
    params = {k: v.detach().cpu().numpy().astype(np.float32) for k, v in model.state_dict().items()}
    return Checkpoint(kind="postproc", config=model.config.to_dict(), params=params, meta=dict(meta))


def postproc_from_checkpoint(ckpt: Checkpoint) -> PostprocModel:
    if ckpt.kind != "postproc":
        raise CheckpointMismatchError(f"expected a postproc checkpoint, got {ckpt.kind!r}")
    cached = getattr(ckpt, "_module_cache", None)
    if cached is not None:
        return cached
    model = PostprocModel(RRDBConfig.from_dict(ckpt.config))
    model.load_state_dict({k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in ckpt.params.items()})
    model.eval()
    ckpt._module_cache = model
    return model
