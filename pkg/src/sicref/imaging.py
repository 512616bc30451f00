"""Image I/O, quality metrics, rate accounting, dataset manifests and patches.

Pixels are stored as float32 in [0, 1]; MSE and PSNR are computed in the
255-scaled domain so that rate-distortion weights stay in their usual range.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import PIL.Image

from .errors import EmptyDatasetError, UnsupportedDepthError

#: Finite stand-in for infinite PSNR (identical images); tables need a number.
PSNR_SENTINEL = 999.0

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class Image:
    """An H x W x 3 image with float values in [0, 1]."""

    pixels: np.ndarray
    source_path: str | None = None

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != np.float32:
            raise ValueError(f"expected float32 pixels, got {px.dtype}")
        lo, hi = float(px.min()), float(px.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"pixel values outside [0, 1]: min={lo}, max={hi}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_array(cls, arr, clamp: bool = False, source_path: str | None = None) -> "Image":
        """Build an Image from any array-like; `clamp` clips into [0, 1]."""
        px = np.asarray(arr, dtype=np.float32)
        if clamp:
            px = np.clip(px, 0.0, 1.0)
        return cls(pixels=px, source_path=source_path)


@dataclass(frozen=True)
class NoiseMap:
    """Per-pixel coding-noise magnitude in [0, 1]; brighter means noisier."""

    values: np.ndarray
    normalization: str  # "per-image-max" or "fixed-scale"

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("noise map must be 2-D")
        if self.normalization not in ("per-image-max", "fixed-scale"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if float(self.values.min()) < 0.0 or float(self.values.max()) > 1.0:
            raise ValueError("noise map values outside [0, 1]")


def _png_bit_depth(path: Path) -> int | None:
    """Bit depth from the IHDR chunk, or None if the file is not a PNG."""
    with open(path, "rb") as fh:
        head = fh.read(25)
    if len(head) < 25 or not head.startswith(_PNG_SIGNATURE):
        return None
    return head[24]


def load_image(path) -> Image:
    """Load a PNG (or other 8-bit raster) as float32 RGB in [0, 1].

    8-bit samples map to value/255; grayscale is replicated to 3 channels.
    Raises UnsupportedDepthError for more than 8 bits per sample rather than
    silently truncating.
    """
    path = Path(path)
    depth = _png_bit_depth(path)
    if depth is not None and depth > 8:
        raise UnsupportedDepthError(f"{path}: {depth}-bit samples are unsupported (max 8)")
    with PIL.Image.open(path) as img:
        if img.mode in ("I", "F", "I;16", "I;16B", "I;16L", "I;16N"):
            raise UnsupportedDepthError(f"{path}: mode {img.mode} exceeds 8 bits per sample")
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return Image(pixels=arr, source_path=str(path))


def save_image(image: Image, path) -> None:
    """Write an Image as an 8-bit RGB PNG (values rounded to nearest)."""
    arr = np.clip(np.rint(image.pixels * 255.0), 0, 255).astype(np.uint8)
    PIL.Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def _check_same_dims(a: Image, b: Image) -> None:
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"dimension mismatch: {a.pixels.shape} vs {b.pixels.shape}")


def mse(a: Image, b: Image) -> float:
    """Mean squared error in the 255-scaled domain, over all H*W*3 samples."""
    _check_same_dims(a, b)
    diff = 255.0 * (a.pixels.astype(np.float64) - b.pixels.astype(np.float64))
    return float(np.mean(diff * diff))


def psnr(a: Image, b: Image, peak: float = 255.0) -> float:
    """10*log10(peak^2 / mse); returns PSNR_SENTINEL when the error is zero."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_SENTINEL
    return 10.0 * math.log10(peak * peak / err)


def bpp(byte_count: int, width: int, height: int) -> float:
    """Bits per pixel: 8 * byte_count / (width * height)."""
    if width * height <= 0:
        raise ValueError("zero-area image")
    if byte_count < 0:
        raise ValueError("negative byte count")
    return 8.0 * byte_count / (width * height)


def noise_map(original: Image, decoded: Image, scale: float | None = None) -> NoiseMap:
    """Channel-mean absolute error per pixel, normalized for display.

    With scale=None the map is divided by its own maximum (per-image-max);
    otherwise values are err/scale clipped to [0, 1] (fixed-scale), which
    keeps brightness comparable across maps sharing one scale.
    """
    _check_same_dims(original, decoded)
    err = np.mean(
        np.abs(original.pixels.astype(np.float64) - decoded.pixels.astype(np.float64)), axis=2
    )
    if scale is None:
        peak = float(err.max())
        values = err / peak if peak > 0.0 else err
        mode = "per-image-max"
    else:
        if scale <= 0.0:
            raise ValueError("scale must be positive")
        values = np.clip(err / scale, 0.0, 1.0)
        mode = "fixed-scale"
    return NoiseMap(values=values.astype(np.float32), normalization=mode)


def save_noise_map(nm: NoiseMap, path) -> None:
    """Write a NoiseMap as an 8-bit grayscale PNG."""
    arr = np.clip(np.rint(nm.values * 255.0), 0, 255).astype(np.uint8)
    PIL.Image.fromarray(arr, mode="L").save(path, format="PNG")


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    path: str
    width: int
    height: int


@dataclass(frozen=True)
class DatasetManifest:
    """Deterministically ordered list of images forming one dataset split."""

    entries: tuple = field(default_factory=tuple)
    split_tag: str = ""

    def __post_init__(self):
        ids = [e.image_id for e in self.entries]
        if ids != sorted(ids):
            raise ValueError("manifest entries must be sorted by image_id")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate image_id in manifest")

    def __len__(self) -> int:
        return len(self.entries)

    def entry(self, image_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.image_id == image_id:
                return e
        raise KeyError(f"unknown image_id {image_id!r}")


def build_manifest(directory, split_tag: str) -> DatasetManifest:
    """Scan a directory for PNG files and build a sorted manifest."""
    directory = Path(directory)
    if not directory.is_dir():
        raise NotADirectoryError(str(directory))
    names = sorted(p.name for p in directory.iterdir() if p.is_file() and p.suffix.lower() == ".png")
    if not names:
        raise EmptyDatasetError(f"empty dataset: no PNG files in {directory}")
    entries = []
    for name in names:
        path = directory / name
        with PIL.Image.open(path) as img:
            w, h = img.size
        entries.append(ManifestEntry(image_id=name, path=str(path), width=w, height=h))
    return DatasetManifest(entries=tuple(entries), split_tag=split_tag)


def write_manifest(manifest: DatasetManifest, path) -> None:
    """Serialize a manifest as byte-stable tab-separated text."""
    lines = [f"#split={manifest.split_tag}"]
    for e in manifest.entries:
        lines.append(f"{e.image_id}\t{e.path}\t{e.width}\t{e.height}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or not lines[0].startswith("#split="):
        raise ValueError(f"{path}: not a manifest file")
    split_tag = lines[0][len("#split="):]
    entries = []
    for ln in lines[1:]:
        image_id, p, w, h = ln.split("\t")
        entries.append(ManifestEntry(image_id=image_id, path=p, width=int(w), height=int(h)))
    return DatasetManifest(entries=tuple(entries), split_tag=split_tag)


def extract_patches(image: Image, patch: int, stride: int) -> list:
    """All full patch x patch crops in row-major scan order.

    Images smaller than the patch yield an empty list.
    """
    if patch < 1 or stride < 1:
        raise ValueError("patch and stride must be >= 1")
    h, w = image.height, image.width
    out = []
    for top in range(0, h - patch + 1, stride):
        for left in range(0, w - patch + 1, stride):
            px = image.pixels[top:top + patch, left:left + patch].copy()
            out.append(Image(pixels=px, source_path=image.source_path))
    return out
