"""Training loops for both codec layers and the post-processor.

Codec layers minimize rate + lambda * MSE(255-scale) with the additive-noise
quantization surrogate; the post-processor minimizes plain MSE between
refined and original patches. Everything is seeded and, with deterministic
mode on, bit-reproducible across runs.
"""

import logging
import time
from dataclasses import dataclass, replace

import numpy as np
import torch

from . import codec as codec_mod
from .checkpoint import Checkpoint, checkpoint_digest
from .codec import BaseCodec, CodecConfig, EnhancementCodec
from .errors import ConfigError, EmptyDatasetError, MissingCheckpointError
from .imaging import DatasetManifest, extract_patches, load_image
from .postproc import RRDBConfig, build_postproc, postproc_checkpoint

log = logging.getLogger(__name__)

TARGETS = ("base_codec", "enh_codec", "postproc")
ENHANCEMENT_LAMBDAS = (0.005, 0.010, 0.020, 0.030)


@dataclass(frozen=True)
class TrainConfig:
    target: str
    lmbda: float = 0.010
    learning_rate: float = 1e-4
    lr_schedule: str = "constant"  # or "cosine": anneal to 0 over the run
    batch_size: int = 8
    epochs: int = 1
    patch: int = 128
    seed: int = 0
    augment: bool = True  # random crop + flip in post-processor training

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ConfigError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.target != "postproc" and self.lmbda <= 0:
            raise ConfigError("lambda must be > 0 for codec training")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.batch_size < 1 or self.patch < 1:
            raise ConfigError("batch_size and patch must be >= 1")
        # epochs = 0 is legal and means "build but never update".
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


# Documented scale profiles. Desk keeps a full run on one CPU core under the
# acceptance-suite wall-time budget; full mirrors common LIC/RRDB sizing.
PRESETS = {
    "desk": {
        "codec": CodecConfig(base_latent_channels=12, enh_latent_channels=12,
                             downsample_factor=8, hidden_channels=48),
        "rrdb": RRDBConfig(l=1, features=32, growth=16),
        "codec_epochs": 30,
        "postproc_epochs": 30,
        "postproc_lr": 2e-4,
        "postproc_patch": 96,
    },
    "full": {
        "codec": CodecConfig(base_latent_channels=48, enh_latent_channels=48,
                             downsample_factor=8, hidden_channels=128),
        "rrdb": RRDBConfig(l=1, features=64, growth=32),
        "codec_epochs": 300,
        "postproc_epochs": 300,
        "postproc_lr": 2e-4,
        "postproc_patch": 96,
    },
}


def set_deterministic(enabled: bool = True) -> None:
    """Single-threaded, fixed-reduction-order execution for reproducibility."""
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    else:
        torch.use_deterministic_algorithms(False)


def mse255(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return torch.mean((255.0 * (a - b)) ** 2)


def _load_patch_bank(manifest: DatasetManifest, patch: int) -> torch.Tensor:
    """All non-overlapping patches from every manifest image, (N, 3, p, p)."""
    banks = []
    for entry in manifest.entries:
        image = load_image(entry.path)
        for p in extract_patches(image, patch, patch):
            banks.append(p.pixels.transpose(2, 0, 1))
    if not banks:
        raise EmptyDatasetError(
            f"no {patch}x{patch} patches available from manifest split {manifest.split_tag!r}")
    return torch.from_numpy(np.stack(banks))


def _seeded_build(build_fn, seed: int):
    state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        return build_fn()
    finally:
        torch.random.set_rng_state(state)


def _epoch_order(n: int, epoch: int, seed: int) -> np.ndarray:
    return np.random.default_rng((seed, epoch)).permutation(n)


def _make_schedule(opt, config: TrainConfig, n_items: int):
    """Per-step cosine annealing to 0 over the whole run, or None."""
    if config.lr_schedule != "cosine":
        return None
    steps_per_epoch = (n_items + config.batch_size - 1) // config.batch_size
    total = max(1, config.epochs * steps_per_epoch)
    return torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=total, eta_min=0.0)


def train_codec(manifest: DatasetManifest, config: TrainConfig,
                base_ckpt: Checkpoint = None,
                codec_cfg: CodecConfig = None) -> Checkpoint:
    """Train one codec layer; returns a checkpoint with frozen entropy tables.

    For the enhancement layer the base checkpoint is mandatory and frozen:
    each batch is first pushed through the base layer with real rounding, and
    the enhancement net learns to code what is missing from that machine
    image.
    """
    if config.target not in ("base_codec", "enh_codec"):
        raise ConfigError(f"train_codec cannot train target {config.target!r}")
    if config.target == "enh_codec" and base_ckpt is None:
        raise MissingCheckpointError("enhancement training requires a trained base checkpoint")
    if not manifest.entries:
        raise EmptyDatasetError("manifest is empty")

    if config.target == "base_codec":
        cfg = replace(codec_cfg or CodecConfig(), lambda_base=config.lmbda)
        module = _seeded_build(lambda: BaseCodec(cfg), config.seed)
        base_module = None
    else:
        cfg = CodecConfig.from_dict(base_ckpt.config)
        module = _seeded_build(lambda: EnhancementCodec(cfg), config.seed)
        base_module = codec_mod.module_from_checkpoint(base_ckpt)
        for p in base_module.parameters():
            p.requires_grad_(False)

    bank = _load_patch_bank(manifest, config.patch)
    n = bank.shape[0]
    pixels_per_item = config.patch * config.patch
    opt = torch.optim.Adam(module.parameters(), lr=config.learning_rate)
    sched = _make_schedule(opt, config, n)
    noise_gen = torch.Generator().manual_seed(config.seed + 1)

    module.train()
    final_loss = float("nan")
    for epoch in range(1, config.epochs + 1):
        t0 = time.monotonic()
        order = _epoch_order(n, epoch, config.seed)
        tot_loss = tot_bpp = tot_mse = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            x = bank[order[start:start + config.batch_size]]
            opt.zero_grad()
            if config.target == "base_codec":
                recon, bits = module(x, quant="noise", generator=noise_gen)
                target = x
            else:
                with torch.no_grad():
                    machine, _ = base_module(x, quant="ste")
                    machine = torch.clamp(machine, 0.0, 1.0)
                recon, bits = module(x, machine, quant="noise", generator=noise_gen)
                target = x
            bpp = bits.mean() / pixels_per_item
            dist = mse255(recon, target)
            loss = bpp + config.lmbda * dist
            loss.backward()
            opt.step()
            if sched is not None:
                sched.step()
            tot_loss += loss.item()
            tot_bpp += bpp.item()
            tot_mse += dist.item()
            n_batches += 1
        final_loss = tot_loss / n_batches
        log.info("target=%s epoch=%d loss=%.6f rate_bpp=%.6f mse255=%.4f seconds=%.2f",
                 config.target, epoch, final_loss,
                 tot_bpp / n_batches, tot_mse / n_batches, time.monotonic() - t0)

    module.eval()
    meta = {
        "lambda": config.lmbda,
        "seed": config.seed,
        "epochs": config.epochs,
        "final_loss": final_loss,
        "table_precision": codec_mod.TABLE_PRECISION,
        "split": manifest.split_tag,
    }
    if config.target == "enh_codec":
        meta["base_digest"] = checkpoint_digest(base_ckpt)
    return codec_mod.codec_checkpoint(module, config.target, meta)


# ---------------------------------------------------------------------------
# Compressed/original pair construction for post-processor training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairSet:
    """Co-located (compressed, original) patches sharing one lambda."""

    compressed: np.ndarray  # (N, p, p, 3) float32
    original: np.ndarray    # (N, p, p, 3) float32
    lmbda: float
    meta: dict

    def __post_init__(self):
        if self.compressed.shape != self.original.shape:
            raise ValueError("compressed/original shapes differ")
        if self.compressed.ndim != 4:
            raise ValueError("pair arrays must be (N, p, p, 3)")

    def __len__(self) -> int:
        return self.compressed.shape[0]

    @property
    def patch(self) -> int:
        return self.compressed.shape[1]


def build_pairs(manifest: DatasetManifest, base_ckpt: Checkpoint,
                enh_ckpt: Checkpoint, patch: int) -> PairSet:
    """Compress every manifest image through both layers, then cut aligned
    patches from the human reconstruction and the original."""
    codec_mod.check_layer_pair(base_ckpt, enh_ckpt)
    if not manifest.entries:
        raise EmptyDatasetError("manifest is empty")
    comp, orig = [], []
    for entry in manifest.entries:
        image = load_image(entry.path)
        bs = codec_mod.compress_image(image, base_ckpt, enh_ckpt)
        _, human = codec_mod.decompress_image(bs, base_ckpt, enh_ckpt)
        comp.extend(p.pixels for p in extract_patches(human, patch, patch))
        orig.extend(p.pixels for p in extract_patches(image, patch, patch))
    if not comp:
        raise EmptyDatasetError(f"no {patch}x{patch} patches from manifest split {manifest.split_tag!r}")
    return PairSet(
        compressed=np.stack(comp), original=np.stack(orig),
        lmbda=float(enh_ckpt.meta.get("lambda", 0.0)),
        meta={
            "base_digest": checkpoint_digest(base_ckpt),
            "enh_digest": checkpoint_digest(enh_ckpt),
            "split": manifest.split_tag,
            "patch": patch,
        })


def pairs_to_checkpoint(pairs: PairSet) -> Checkpoint:
    """Persist a PairSet through the shared byte-stable container."""
    config = {"patch": pairs.patch, "lambda": pairs.lmbda}
    params = {"compressed": pairs.compressed, "original": pairs.original}
    return Checkpoint(kind="pairs", config=config, params=params, meta=dict(pairs.meta))


def pairs_from_checkpoint(ckpt: Checkpoint) -> PairSet:
    if ckpt.kind != "pairs":
        raise MissingCheckpointError(f"expected a pairs file, got kind {ckpt.kind!r}")
    return PairSet(compressed=ckpt.params["compressed"], original=ckpt.params["original"],
                   lmbda=float(ckpt.config["lambda"]), meta=dict(ckpt.meta))


def _augment(comp: np.ndarray, orig: np.ndarray, out_patch: int, rng) -> tuple:
    """Random co-located crop plus horizontal flip, applied pair-wise."""
    n, p = comp.shape[0], comp.shape[1]
    if out_patch > p:
        raise ConfigError(f"training patch {out_patch} exceeds stored pair patch {p}")
    tops = rng.integers(0, p - out_patch + 1, size=n)
    lefts = rng.integers(0, p - out_patch + 1, size=n)
    flips = rng.random(n) < 0.5
    c = np.empty((n, out_patch, out_patch, 3), dtype=np.float32)
    o = np.empty_like(c)
    for i in range(n):
        t, l = tops[i], lefts[i]
        cc = comp[i, t:t + out_patch, l:l + out_patch]
        oo = orig[i, t:t + out_patch, l:l + out_patch]
        if flips[i]:
            cc, oo = cc[:, ::-1], oo[:, ::-1]
        c[i], o[i] = cc, oo
    return c, o


def train_postproc(pairs: PairSet, config: TrainConfig, model_cfg: RRDBConfig) -> Checkpoint:
    """MSE-train the restoration net on compressed/original pairs.

    The zero-init start makes the identity map the initial iterate, so the
    final training loss can never exceed the identity MSE by more than
    optimizer noise; both numbers land in the checkpoint metadata.
    """
    if config.target != "postproc":
        raise ConfigError(f"train_postproc cannot train target {config.target!r}")
    if len(pairs) == 0:
        raise EmptyDatasetError("pair set is empty")
    model = build_postproc(model_cfg, config.seed)
    diff = 255.0 * (pairs.original.astype(np.float64) - pairs.compressed.astype(np.float64))
    identity_mse = float(np.mean(diff ** 2))
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    sched = _make_schedule(opt, config, len(pairs))
    rng = np.random.default_rng(config.seed + 17)

    model.train()
    final_loss = identity_mse
    n = len(pairs)
    crop = min(config.patch, pairs.patch)
    for epoch in range(1, config.epochs + 1):
        t0 = time.monotonic()
        if config.augment:
            comp, orig = _augment(pairs.compressed, pairs.original, crop, rng)
        else:
            comp, orig = pairs.compressed[:, :crop, :crop], pairs.original[:, :crop, :crop]
        order = _epoch_order(n, epoch, config.seed)
        tot = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x = torch.from_numpy(comp[idx].transpose(0, 3, 1, 2))
            y = torch.from_numpy(orig[idx].transpose(0, 3, 1, 2))
            opt.zero_grad()
            loss = mse255(model(x), y)
            loss.backward()
            opt.step()
            if sched is not None:
                sched.step()
            tot += loss.item()
            n_batches += 1
        final_loss = tot / n_batches
        log.info("target=postproc epoch=%d loss=%.4f identity_mse=%.4f seconds=%.2f",
                 epoch, final_loss, identity_mse, time.monotonic() - t0)

    model.eval()
    meta = {
        "lambda": pairs.lmbda,
        "seed": config.seed,
        "epochs": config.epochs,
        "final_loss": final_loss,
        "identity_mse": identity_mse,
    }
    meta.update({k: pairs.meta[k] for k in ("base_digest", "enh_digest") if k in pairs.meta})
    return postproc_checkpoint(model, meta)


# ---------------------------------------------------------------------------
# Finite-difference gradient verification
# ---------------------------------------------------------------------------

GRAD_CHECK_TARGETS = ("rrdb", "codec", "rate")
_FD_STEP = 1e-5


def _fd_max_rel_error(loss_fn, params) -> tuple:
    """Central finite differences vs autograd over every parameter scalar.

    Relative error uses max(|analytic|, |numeric|, 1e-3) in the denominator
    so near-zero gradients are compared absolutely.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    worst = 0.0
    n_checked = 0
    with torch.no_grad():
        for p, g in zip(params, grads):
            flat = p.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                keep = flat[i].item()
                flat[i] = keep + _FD_STEP
                hi = float(loss_fn())
                flat[i] = keep - _FD_STEP
                lo = float(loss_fn())
                flat[i] = keep
                numeric = (hi - lo) / (2 * _FD_STEP)
                analytic = float(gflat[i])
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)
                worst = max(worst, rel)
                n_checked += 1
    return worst, n_checked


def grad_check(module_under_test: str, seed: int = 0) -> dict:
    """Verify analytic gradients on a tiny double-precision instance.

    Targets: "rrdb" (restoration net), "codec" (autoencoder + rate + MSE
    loss), "rate" (factorized density alone).
    """
    if module_under_test not in GRAD_CHECK_TARGETS:
        raise ConfigError(f"unknown grad-check target {module_under_test!r}")
    t0 = time.monotonic()
    gen = torch.Generator().manual_seed(seed)
    if module_under_test == "rrdb":
        cfg = RRDBConfig(l=1, features=4, growth=2, dense_convs=3, blocks_per_rrdb=2)
        model = build_postproc(cfg, seed).double()
        with torch.no_grad():  # move off the zero-init identity point
            for p in model.parameters():
                p.add_(torch.randn(p.shape, generator=gen, dtype=torch.float64) * 0.05)
        x = torch.rand(1, 3, 8, 8, generator=gen, dtype=torch.float64)
        target = torch.rand(1, 3, 8, 8, generator=gen, dtype=torch.float64)
        params = list(model.parameters())
        # 0-1 scale keeps finite-difference cancellation noise well under the
        # 1e-4 acceptance bound; the gradient structure is scale-invariant.
        loss_fn = lambda: torch.mean((model(x) - target) ** 2)
    elif module_under_test == "codec":
        ccfg = CodecConfig(base_latent_channels=2, enh_latent_channels=2,
                           downsample_factor=4, hidden_channels=4)
        model = _seeded_build(lambda: BaseCodec(ccfg), seed).double()
        x = torch.rand(1, 3, 8, 8, generator=gen, dtype=torch.float64)
        noise = torch.rand(1, 2, 2, 2, generator=gen, dtype=torch.float64) - 0.5
        params = list(model.parameters())

        def loss_fn():
            recon, bits = model(x, quant="noise", noise=noise)
            return bits.mean() / 64.0 + 0.01 * mse255(recon, x)
    else:
        density = codec_mod.FactorizedDensity(2).double()
        with torch.no_grad():
            density.loc.copy_(torch.tensor([0.3, -0.2], dtype=torch.float64))
            density.log_scale.copy_(torch.tensor([0.1, -0.4], dtype=torch.float64))
        y = torch.randn(1, 2, 4, 4, generator=gen, dtype=torch.float64)
        params = list(density.parameters())
        loss_fn = lambda: density.bits(y).sum()
    max_rel, n_checked = _fd_max_rel_error(loss_fn, params)
    return {
        "target": module_under_test,
        "max_rel_error": max_rel,
        "n_params": n_checked,
        "seconds": time.monotonic() - t0,
    }
