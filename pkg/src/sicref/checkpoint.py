"""Byte-stable checkpoint container for codec layers and the post-processor.

Layout: 8-byte magic, little-endian u32 header length, canonical JSON header
(kind, config, meta, tensor directory in name order), then raw little-endian
tensor bytes in directory order. Loading and re-saving reproduces the file
byte for byte, which the reproducibility tests rely on.
"""

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DecodeError

MAGIC = b"SICKPT01"

_DTYPES = {
    "float32": np.float32,
    "float64": np.float64,
    "int64": np.int64,
}


@dataclass
class Checkpoint:
    kind: str  # "base_codec" | "enh_codec" | "postproc" | "pairset"
    config: dict
    params: dict = field(default_factory=dict)  # name -> np.ndarray
    meta: dict = field(default_factory=dict)


def _header(ckpt: Checkpoint, names) -> dict:
    tensors = []
    for name in names:
        arr = ckpt.params[name]
        if arr.dtype.name not in _DTYPES:
            raise ValueError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
        tensors.append({"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape)})
    return {"kind": ckpt.kind, "config": ckpt.config, "meta": ckpt.meta, "tensors": tensors}


def canonical_bytes(ckpt: Checkpoint) -> bytes:
    """Serialize to the deterministic on-disk byte string."""
    names = sorted(ckpt.params)
    header = json.dumps(_header(ckpt, names), sort_keys=True, separators=(",", ":")).encode("utf-8")
    blobs = [MAGIC, struct.pack("<I", len(header)), header]
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name])
        blobs.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return b"".join(blobs)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically (temp file + rename), creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(canonical_bytes(ckpt))
    os.replace(tmp, path)


def parse_checkpoint(raw: bytes) -> Checkpoint:
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise DecodeError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"corrupt checkpoint header: {exc}") from exc
    offset = start + hlen
    params = {}
    for spec in header["tensors"]:
        dtype = np.dtype(_DTYPES[spec["dtype"]]).newbyteorder("<")
        count = int(np.prod(spec["shape"], dtype=np.int64)) if spec["shape"] else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise DecodeError(f"checkpoint truncated in tensor {spec['name']!r}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        params[spec["name"]] = arr.reshape(spec["shape"]).astype(_DTYPES[spec["dtype"]])
        offset += nbytes
    if offset != len(raw):
        raise DecodeError("trailing bytes after checkpoint tensors")
    return Checkpoint(kind=header["kind"], config=header["config"], params=params, meta=header["meta"])


def load_checkpoint(path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())


def checkpoint_digest(ckpt: Checkpoint) -> str:
    """Content hash used to tie dependent checkpoints together."""
    return hashlib.sha256(canonical_bytes(ckpt)).hexdigest()[:16]
