"""Two-layer scalable learned codec.

The base layer is a strided convolutional autoencoder whose reconstruction
stands in for the machine-facing image; the enhancement layer conditions on
that reconstruction and codes the supplementary information needed for the
human-facing image. Both layers share the same machinery: a factorized
per-channel logistic density for the training rate term, frozen integer CMF
tables for actual coding, and the integer range coder for the bitstream.
"""

import math
import struct
import zlib
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import Checkpoint, checkpoint_digest
from .errors import CheckpointMismatchError, ConfigError, DecodeError
from .imaging import Image
from .rangecoder import RangeDecoder, RangeEncoder, check_cmf

DEFAULT_SYMBOL_RANGE = 64
TABLE_PRECISION = 16
ESCAPE_RAW_BITS = 16
LIKELIHOOD_FLOOR = 1e-9

BITSTREAM_MAGIC = b"SICR"
BITSTREAM_VERSION = 1
BITSTREAM_HEADER_BYTES = 17  # magic + u8 version + u16 w + u16 h + 2 * u32 length


@dataclass(frozen=True)
class CodecConfig:
    """Architecture hyperparameters shared by both layers."""

    base_latent_channels: int = 12
    enh_latent_channels: int = 12
    downsample_factor: int = 8
    hidden_channels: int = 48
    lambda_base: float = 0.01
    symbol_range: int = DEFAULT_SYMBOL_RANGE

    def __post_init__(self):
        if self.downsample_factor not in (4, 8, 16):
            raise ConfigError(f"downsample_factor must be 4, 8 or 16, got {self.downsample_factor}")
        for name in ("base_latent_channels", "enh_latent_channels", "hidden_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lambda_base <= 0:
            raise ConfigError("lambda_base must be > 0")
        if self.symbol_range < 1:
            raise ConfigError("symbol_range must be >= 1")

    @property
    def num_stages(self) -> int:
        return int(round(math.log2(self.downsample_factor)))

    def to_dict(self) -> dict:
        return {
            "base_latent_channels": self.base_latent_channels,
            "enh_latent_channels": self.enh_latent_channels,
            "downsample_factor": self.downsample_factor,
            "hidden_channels": self.hidden_channels,
            "lambda_base": self.lambda_base,
            "symbol_range": self.symbol_range,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        return cls(**d)


@dataclass(frozen=True)
class Latent:
    """A C x h x w latent tensor; quantized latents hold integral values."""

    values: np.ndarray
    quantized: bool = False

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"latent must be (C, h, w), got shape {self.values.shape}")
        if self.values.dtype != np.float32:
            raise ValueError(f"latent values must be float32, got {self.values.dtype}")
        if self.quantized and self.values.size:
            if not np.all(self.values == np.rint(self.values)):
                raise ValueError("quantized latent holds non-integral values")

    @property
    def shape(self) -> tuple:
        return self.values.shape


def quantize(latent: Latent, mode: str, bound: int = DEFAULT_SYMBOL_RANGE, rng=None) -> Latent:
    """Round-to-nearest (ties away from zero, clamped to [-bound, bound]) or
    add the uniform-noise training surrogate.

    Rounding an already-quantized latent is a no-op, so round is idempotent.
    """
    if mode == "round":
        if latent.quantized:
            return latent
        v = latent.values
        rounded = np.sign(v) * np.floor(np.abs(v) + np.float32(0.5))
        clipped = np.clip(rounded, -bound, bound).astype(np.float32)
        return Latent(values=clipped, quantized=True)
    if mode == "noise":
        rng = np.random.default_rng() if rng is None else rng
        noise = rng.uniform(-0.5, 0.5, size=latent.values.shape).astype(np.float32)
        np.clip(noise, np.float32(-0.4999999), np.float32(0.4999999), out=noise)
        return Latent(values=latent.values + noise, quantized=False)
    raise ValueError(f"unknown quantize mode {mode!r}")


# ---------------------------------------------------------------------------
# Entropy model: frozen per-channel CMF tables over {-L..L} plus an escape
# symbol that carries out-of-range values as raw 16-bit integers.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EntropyModel:
    cmf: np.ndarray  # (C, 2 * symbol_range + 3) int64, each row 0 .. 2^precision
    symbol_range: int
    table_precision: int = TABLE_PRECISION

    def __post_init__(self):
        n_symbols = 2 * self.symbol_range + 2
        if self.cmf.ndim != 2 or self.cmf.shape[1] != n_symbols + 1:
            raise ValueError(f"cmf must be (C, {n_symbols + 1}), got {self.cmf.shape}")
        for row in self.cmf:
            check_cmf(row, self.table_precision)

    @property
    def channels(self) -> int:
        return self.cmf.shape[0]

    @property
    def escape_index(self) -> int:
        return 2 * self.symbol_range + 1

    def frequencies(self) -> np.ndarray:
        return np.diff(self.cmf, axis=1)


def quantize_table(probs: np.ndarray, precision: int = TABLE_PRECISION) -> np.ndarray:
    """Turn per-channel probabilities into integer CMFs summing to 2^precision.

    Every symbol keeps frequency >= 1; the remainder is settled on the most
    probable symbol so the result is deterministic.
    """
    total = 1 << precision
    if probs.ndim != 2:
        raise ValueError("probs must be (C, n_symbols)")
    if probs.shape[1] > total:
        raise ValueError("more symbols than table slots")
    freqs = np.maximum(1, np.rint(probs * total)).astype(np.int64)
    for row in freqs:
        diff = total - int(row.sum())
        while diff != 0:
            i = int(np.argmax(row))
            if diff > 0:
                row[i] += diff
                diff = 0
            else:
                take = min(int(row[i]) - 1, -diff)
                if take == 0:
                    raise ValueError("cannot normalize table: all frequencies at minimum")
                row[i] -= take
                diff += take
    cmf = np.zeros((freqs.shape[0], freqs.shape[1] + 1), dtype=np.int64)
    np.cumsum(freqs, axis=1, out=cmf[:, 1:])
    return cmf


def estimate_rate(latent: Latent, model: EntropyModel) -> float:
    """Total bits Sum(-log2 P(symbol)) under the frozen tables.

    Escape symbols cost their table bits plus the 16 raw payload bits.
    """
    if not latent.quantized:
        raise ValueError("estimate_rate over frozen tables needs a quantized latent")
    c = latent.values.shape[0]
    if c != model.channels:
        raise ValueError(f"latent has {c} channels but the model has {model.channels}")
    values = latent.values.astype(np.int64).reshape(c, -1)
    freqs = model.frequencies()
    total_log2 = float(model.table_precision)
    bits = 0.0
    bound = model.symbol_range
    for ch in range(c):
        vals = values[ch]
        in_range = np.abs(vals) <= bound
        idx = vals[in_range] + bound
        f = freqs[ch][idx].astype(np.float64)
        bits += float(np.sum(total_log2 - np.log2(f)))
        n_escape = int(np.size(vals) - np.count_nonzero(in_range))
        if n_escape:
            f_esc = float(freqs[ch][model.escape_index])
            bits += n_escape * (total_log2 - math.log2(f_esc) + ESCAPE_RAW_BITS)
    return bits


def _bit_cmf(precision: int):
    half = 1 << (precision - 1)
    return [0, half, half * 2]


def entropy_encode(latent: Latent, model: EntropyModel) -> bytes:
    """Range-code a quantized latent channel-major; prefix a CRC32 of the
    symbols so corrupt or truncated payloads are detected at decode."""
    if not latent.quantized:
        raise ValueError("entropy_encode needs a quantized latent")
    c = latent.values.shape[0]
    if c != model.channels:
        raise ValueError(f"latent has {c} channels but the model has {model.channels}")
    values = latent.values.astype(np.int64)
    if values.size and (values.max() > 32767 or values.min() < -32768):
        raise ValueError("latent value outside the 16-bit escape range")
    crc = zlib.crc32(values.astype("<i2").tobytes())
    bound = model.symbol_range
    escape = model.escape_index
    bit_cmf = _bit_cmf(model.table_precision)
    enc = RangeEncoder()
    rows = values.reshape(c, -1).tolist()
    for ch in range(c):
        cmf = model.cmf[ch].tolist()
        for v in rows[ch]:
            if -bound <= v <= bound:
                enc.encode(cmf, v + bound)
            else:
                enc.encode(cmf, escape)
                u = v & 0xFFFF
                for b in range(ESCAPE_RAW_BITS - 1, -1, -1):
                    enc.encode(bit_cmf, (u >> b) & 1)
    return struct.pack("<I", crc) + enc.finish()


def entropy_decode(payload: bytes, model: EntropyModel, shape: tuple) -> Latent:
    """Exact inverse of entropy_encode for the same model and shape."""
    if len(shape) != 3:
        raise ValueError("shape must be (C, h, w)")
    c, h, w = shape
    if c != model.channels:
        raise ValueError(f"shape has {c} channels but the model has {model.channels}")
    if len(payload) < 5:
        raise DecodeError("payload too short to hold CRC and coded data")
    (crc_stored,) = struct.unpack_from("<I", payload, 0)
    dec = RangeDecoder(payload[4:])
    bound = model.symbol_range
    escape = model.escape_index
    bit_cmf = _bit_cmf(model.table_precision)
    out = np.empty((c, h * w), dtype=np.int64)
    for ch in range(c):
        cmf = model.cmf[ch].tolist()
        row = out[ch]
        for i in range(h * w):
            s = dec.decode(cmf)
            if s == escape:
                u = 0
                for _ in range(ESCAPE_RAW_BITS):
                    u = (u << 1) | dec.decode(bit_cmf)
                row[i] = u - 0x10000 if u >= 0x8000 else u
            else:
                row[i] = s - bound
    if zlib.crc32(out.astype("<i2").tobytes()) != crc_stored:
        raise DecodeError("payload integrity check failed (corrupt or truncated)")
    return Latent(values=out.reshape(c, h, w).astype(np.float32), quantized=True)


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------


class FactorizedDensity(nn.Module):
    """Per-channel logistic density giving the differentiable rate term."""

    def __init__(self, channels: int):
        super().__init__()
        self.loc = nn.Parameter(torch.zeros(channels))
        self.log_scale = nn.Parameter(torch.zeros(channels))

    def likelihood(self, y):
        loc = self.loc.view(1, -1, 1, 1)
        scale = torch.exp(self.log_scale).view(1, -1, 1, 1)
        upper = torch.sigmoid((y + 0.5 - loc) / scale)
        lower = torch.sigmoid((y - 0.5 - loc) / scale)
        return torch.clamp(upper - lower, min=LIKELIHOOD_FLOOR)

    def bits(self, y):
        """Total bits per batch element, shape (N,)."""
        return -torch.log2(self.likelihood(y)).sum(dim=(1, 2, 3))

    def frozen_probabilities(self, symbol_range: int) -> np.ndarray:
        """(C, 2L+2) probabilities over {-L..L} plus the escape tail mass."""
        with torch.no_grad():
            loc = self.loc.detach().cpu().numpy().astype(np.float64)[:, None]
            scale = np.exp(self.log_scale.detach().cpu().numpy().astype(np.float64))[:, None]
        k = np.arange(-symbol_range, symbol_range + 1, dtype=np.float64)[None, :]
        upper = _sigmoid((k + 0.5 - loc) / scale)
        lower = _sigmoid((k - 0.5 - loc) / scale)
        p_in = np.clip(upper - lower, LIKELIHOOD_FLOOR, 1.0)
        p_escape = np.clip(lower[:, :1], LIKELIHOOD_FLOOR, 1.0) + np.clip(1.0 - upper[:, -1:], LIKELIHOOD_FLOOR, 1.0)
        return np.concatenate([p_in, p_escape], axis=1)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _quantize_for_training(y, quant: str, bound: int, noise=None, generator=None):
    if quant == "noise":
        if noise is None:
            noise = torch.rand(y.shape, generator=generator, dtype=y.dtype, device=y.device) - 0.5
        return y + noise
    if quant == "ste":
        rounded = torch.clamp(torch.sign(y) * torch.floor(torch.abs(y) + 0.5), -bound, bound)
        return y + (rounded - y).detach()
    raise ValueError(f"unknown quant mode {quant!r}")


class BaseCodec(nn.Module):
    """Machine-layer autoencoder with a factorized entropy model."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        n = cfg.num_stages
        enc = []
        ch = 3
        for i in range(n):
            out = cfg.base_latent_channels if i == n - 1 else cfg.hidden_channels
            enc.append(nn.Conv2d(ch, out, 5, stride=2, padding=2))
            if i < n - 1:
                enc.append(nn.LeakyReLU(0.2))
            ch = out
        self.encoder = nn.Sequential(*enc)
        dec = []
        ch = cfg.base_latent_channels
        for i in range(n):
            out = 3 if i == n - 1 else cfg.hidden_channels
            dec.append(nn.ConvTranspose2d(ch, out, 5, stride=2, padding=2, output_padding=1))
            if i < n - 1:
                dec.append(nn.LeakyReLU(0.2))
            ch = out
        self.decoder = nn.Sequential(*dec)
        self.density = FactorizedDensity(cfg.base_latent_channels)

    def forward(self, x, quant="noise", noise=None, generator=None):
        y = self.encoder(x)
        y_tilde = _quantize_for_training(y, quant, self.cfg.symbol_range, noise, generator)
        bits = self.density.bits(y_tilde)
        recon = self.decoder(y_tilde)
        return recon, bits


class EnhancementCodec(nn.Module):
    """Human-layer codec conditioned on the machine reconstruction."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        n = cfg.num_stages
        enc = []
        ch = 6  # original and machine reconstruction, channel-concatenated
        for i in range(n):
            out = cfg.enh_latent_channels if i == n - 1 else cfg.hidden_channels
            enc.append(nn.Conv2d(ch, out, 5, stride=2, padding=2))
            if i < n - 1:
                enc.append(nn.LeakyReLU(0.2))
            ch = out
        self.encoder = nn.Sequential(*enc)
        dec = []
        ch = cfg.enh_latent_channels
        for _ in range(n):
            dec.append(nn.ConvTranspose2d(ch, cfg.hidden_channels, 5, stride=2, padding=2, output_padding=1))
            dec.append(nn.LeakyReLU(0.2))
            ch = cfg.hidden_channels
        self.decoder = nn.Sequential(*dec)
        self.fuse = nn.Sequential(
            nn.Conv2d(cfg.hidden_channels + 3, cfg.hidden_channels, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(cfg.hidden_channels, 3, 3, padding=1),
        )
        self.density = FactorizedDensity(cfg.enh_latent_channels)

    def synthesize(self, y_tilde, machine):
        feat = self.decoder(y_tilde)
        residual = self.fuse(torch.cat([machine, feat], dim=1))
        return machine + residual

    def forward(self, x, machine, quant="noise", noise=None, generator=None):
        y = self.encoder(torch.cat([x, machine], dim=1))
        y_tilde = _quantize_for_training(y, quant, self.cfg.symbol_range, noise, generator)
        bits = self.density.bits(y_tilde)
        human = self.synthesize(y_tilde, machine)
        return human, bits


# ---------------------------------------------------------------------------
# Checkpoint plumbing
# ---------------------------------------------------------------------------

_KIND_TO_MODULE = {"base_codec": BaseCodec, "enh_codec": EnhancementCodec}
TABLE_PARAM = "entropy.cmf"


def module_params(module: nn.Module) -> dict:
    return {k: v.detach().cpu().numpy().astype(np.float32) for k, v in module.state_dict().items()}


def load_module_params(module: nn.Module, params: dict) -> None:
    state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in params.items() if k != TABLE_PARAM}
    module.load_state_dict(state)


def freeze_entropy_model(module, symbol_range: int) -> EntropyModel:
    """Quantize the learned density into the integer tables the coder uses."""
    probs = module.density.frozen_probabilities(symbol_range)
    probs = probs / probs.sum(axis=1, keepdims=True)
    return EntropyModel(cmf=quantize_table(probs), symbol_range=symbol_range)


def codec_checkpoint(module: nn.Module, kind: str, meta: dict) -> Checkpoint:
    """Snapshot a codec module plus its frozen tables into a Checkpoint."""
    cfg = module.cfg
    params = module_params(module)
    params[TABLE_PARAM] = freeze_entropy_model(module, cfg.symbol_range).cmf
    return Checkpoint(kind=kind, config=cfg.to_dict(), params=params, meta=dict(meta))


def module_from_checkpoint(ckpt: Checkpoint) -> nn.Module:
    if ckpt.kind not in _KIND_TO_MODULE:
        raise CheckpointMismatchError(f"expected a codec checkpoint, got kind {ckpt.kind!r}")
    cached = getattr(ckpt, "_module_cache", None)
    if cached is not None:
        return cached
    module = _KIND_TO_MODULE[ckpt.kind](CodecConfig.from_dict(ckpt.config))
    load_module_params(module, ckpt.params)
    module.eval()
    ckpt._module_cache = module
    return module


def entropy_model_from_checkpoint(ckpt: Checkpoint) -> EntropyModel:
    if TABLE_PARAM not in ckpt.params:
        raise CheckpointMismatchError("checkpoint holds no frozen entropy tables")
    cfg = CodecConfig.from_dict(ckpt.config)
    precision = int(ckpt.meta.get("table_precision", TABLE_PRECISION))
    return EntropyModel(cmf=ckpt.params[TABLE_PARAM], symbol_range=cfg.symbol_range,
                        table_precision=precision)


def check_layer_pair(base_ckpt: Checkpoint, enh_ckpt: Checkpoint) -> None:
    """Verify an enhancement checkpoint was trained against this base."""
    _require_kind(base_ckpt, "base_codec")
    _require_kind(enh_ckpt, "enh_codec")
    expected = enh_ckpt.meta.get("base_digest")
    actual = checkpoint_digest(base_ckpt)
    if expected != actual:
        raise CheckpointMismatchError(
            f"enhancement checkpoint was trained against base {expected}, got {actual}")


def _require_kind(ckpt: Checkpoint, kind: str) -> None:
    if ckpt.kind != kind:
        raise CheckpointMismatchError(f"expected a {kind} checkpoint, got {ckpt.kind!r}")


# ---------------------------------------------------------------------------
# Whole-image encode/decode
# ---------------------------------------------------------------------------


def pad_to_factor(pixels: np.ndarray, factor: int) -> np.ndarray:
    """Edge-replicate bottom/right so both spatial dims divide `factor`."""
    h, w = pixels.shape[:2]
    hp = -(-h // factor) * factor
    wp = -(-w // factor) * factor
    if hp == h and wp == w:
        return pixels
    return np.pad(pixels, ((0, hp - h), (0, wp - w), (0, 0)), mode="edge")


def _to_tensor(pixels: np.ndarray):
    return torch.from_numpy(np.ascontiguousarray(pixels.transpose(2, 0, 1)))[None]


def _latent_dims(height: int, width: int, factor: int) -> tuple:
    return -(-height // factor), -(-width // factor)


def encode_base(image: Image, ckpt: Checkpoint):
    """Encode the machine layer; returns (quantized latent, payload bytes)."""
    _require_kind(ckpt, "base_codec")
    cfg = CodecConfig.from_dict(ckpt.config)
    module = module_from_checkpoint(ckpt)
    x = _to_tensor(pad_to_factor(image.pixels, cfg.downsample_factor))
    with torch.no_grad():
        y = module.encoder(x)
    latent = quantize(Latent(values=y[0].numpy(), quantized=False), "round", bound=cfg.symbol_range)
    payload = entropy_encode(latent, entropy_model_from_checkpoint(ckpt))
    return latent, payload


def decode_base(payload: bytes, ckpt: Checkpoint, height: int, width: int) -> Image:
    """Reconstruct the machine-facing image at its original dimensions."""
    _require_kind(ckpt, "base_codec")
    cfg = CodecConfig.from_dict(ckpt.config)
    module = module_from_checkpoint(ckpt)
    lh, lw = _latent_dims(height, width, cfg.downsample_factor)
    latent = entropy_decode(payload, entropy_model_from_checkpoint(ckpt),
                            (cfg.base_latent_channels, lh, lw))
    with torch.no_grad():
        rec = module.decoder(torch.from_numpy(latent.values)[None])
    pixels = rec[0].numpy().transpose(1, 2, 0)[:height, :width]
    return Image.from_array(pixels, clamp=True)


def encode_enhancement(image: Image, machine: Image, ckpt: Checkpoint) -> bytes:
    """Code the supplementary information on top of the machine layer."""
    _require_kind(ckpt, "enh_codec")
    if image.pixels.shape != machine.pixels.shape:
        raise ValueError("original and machine reconstruction differ in shape")
    cfg = CodecConfig.from_dict(ckpt.config)
    module = module_from_checkpoint(ckpt)
    f = cfg.downsample_factor
    x = _to_tensor(pad_to_factor(image.pixels, f))
    m = _to_tensor(pad_to_factor(machine.pixels, f))
    with torch.no_grad():
        y = module.encoder(torch.cat([x, m], dim=1))
    latent = quantize(Latent(values=y[0].numpy(), quantized=False), "round", bound=cfg.symbol_range)
    return entropy_encode(latent, entropy_model_from_checkpoint(ckpt))


def decode_human(machine: Image, payload: bytes, ckpt: Checkpoint) -> Image:
    """Add the decoded supplementary information to the machine image."""
    _require_kind(ckpt, "enh_codec")
    cfg = CodecConfig.from_dict(ckpt.config)
    module = module_from_checkpoint(ckpt)
    h, w = machine.height, machine.width
    lh, lw = _latent_dims(h, w, cfg.downsample_factor)
    latent = entropy_decode(payload, entropy_model_from_checkpoint(ckpt),
                            (cfg.enh_latent_channels, lh, lw))
    m = _to_tensor(pad_to_factor(machine.pixels, cfg.downsample_factor))
    with torch.no_grad():
        human = module.synthesize(torch.from_numpy(latent.values)[None], m)
    pixels = human[0].numpy().transpose(1, 2, 0)[:h, :w]
    return Image.from_array(pixels, clamp=True)


# ---------------------------------------------------------------------------
# Bitstream container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bitstream:
    """Container with separately measurable base and enhancement payloads."""

    width: int
    height: int
    base_payload: bytes
    enh_payload: bytes
    version: int = BITSTREAM_VERSION

    @property
    def total_bytes(self) -> int:
        return BITSTREAM_HEADER_BYTES + len(self.base_payload) + len(self.enh_payload)

    def serialize(self) -> bytes:
        if not (1 <= self.width <= 0xFFFF and 1 <= self.height <= 0xFFFF):
            raise ValueError("bitstream dimensions must fit in u16")
        return b"".join([
            BITSTREAM_MAGIC,
            struct.pack("<B", self.version),
            struct.pack("<HH", self.width, self.height),
            struct.pack("<I", len(self.base_payload)),
            self.base_payload,
            struct.pack("<I", len(self.enh_payload)),
            self.enh_payload,
        ])

    @classmethod
    def parse(cls, raw: bytes) -> "Bitstream":
        if len(raw) < BITSTREAM_HEADER_BYTES or raw[:4] != BITSTREAM_MAGIC:
            raise DecodeError("not a bitstream (bad magic or too short)")
        version = raw[4]
        if version != BITSTREAM_VERSION:
            raise DecodeError(f"unsupported bitstream version {version}")
        width, height = struct.unpack_from("<HH", raw, 5)
        (blen,) = struct.unpack_from("<I", raw, 9)
        pos = 13
        if pos + blen + 4 > len(raw):
            raise DecodeError("bitstream truncated in base payload")
        base = raw[pos:pos + blen]
        pos += blen
        (elen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if pos + elen != len(raw):
            raise DecodeError("bitstream length mismatch in enhancement payload")
        return cls(width=width, height=height, base_payload=base, enh_payload=raw[pos:])


def compress_image(image: Image, base_ckpt: Checkpoint, enh_ckpt: Checkpoint) -> Bitstream:
    """Full two-layer encode of one image into a container."""
    check_layer_pair(base_ckpt, enh_ckpt)
    _, base_payload = encode_base(image, base_ckpt)
    machine = decode_base(base_payload, base_ckpt, image.height, image.width)
    enh_payload = encode_enhancement(image, machine, enh_ckpt)
    return Bitstream(width=image.width, height=image.height,
                     base_payload=base_payload, enh_payload=enh_payload)


def decompress_image(bs: Bitstream, base_ckpt: Checkpoint, enh_ckpt: Checkpoint):
    """Decode a container; returns (machine reconstruction, human reconstruction)."""
    check_layer_pair(base_ckpt, enh_ckpt)
    machine = decode_base(bs.base_payload, base_ckpt, bs.height, bs.width)
    human = decode_human(machine, bs.enh_payload, enh_ckpt)
    return machine, human
