"""Binary tensor files and checkpoint directories.

Tensor file layout (all little-endian)::

    b"INTI"  | u32 version | u32 rank | u32 dim * rank | f64 data (row-major)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .tensor import Tensor

MAGIC = b"INTI"
VERSION = 1


def tensor_to_bytes(t) -> bytes:
    arr = np.asarray(t.data if isinstance(t, Tensor) else t, dtype="<f8")  # keeps rank 0
    head = MAGIC + struct.pack("<II", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def tensor_from_bytes(buf: bytes) -> Tensor:
    if buf[:4] != MAGIC:
        raise ConfigError("not a tensor file (bad magic)")
    version, rank = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ConfigError(f"unsupported tensor file version {version}")
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    offset = 12 + 4 * rank
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) - offset != 8 * count:
        raise ConfigError(f"tensor file payload is {len(buf) - offset} bytes, expected {8 * count}")
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
    return Tensor(data.astype(np.float64).reshape(dims))


def save_tensor(path, t) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def load_tensor(path) -> Tensor:
    return tensor_from_bytes(Path(path).read_bytes())


def save_checkpoint(directory, params: dict[str, Tensor], meta: dict) -> Path:
    """Write one tensor file per parameter plus ``manifest.json``."""
    d = Path(directory)
    (d / "tensors").mkdir(parents=True, exist_ok=True)
    files = {}
    for i, (name, t) in enumerate(params.items()):
        rel = f"tensors/{i:04d}.bin"
        save_tensor(d / rel, t)
        files[name] = rel
    manifest = dict(meta)
    manifest["params"] = files
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def load_checkpoint(directory) -> tuple[dict[str, Tensor], dict]:
    d = Path(directory)
    path = d / "manifest.json"
    if not path.exists():
        raise ConfigError(f"no manifest.json in {d}")
    manifest = json.loads(path.read_text())
    params = {name: load_tensor(d / rel) for name, rel in manifest["params"].items()}
    return params, manifest
