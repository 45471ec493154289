"""SGTF binary tensor container and parameter-directory serialization.

Layout: magic b"SGTF", u8 version (1), u8 dtype code (0=f64, 1=f32),
u32 rank, rank x u64 dims, then raw little-endian element data in
row-major order.  All integers little-endian.  Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"SGTF"
VERSION = 1

_DTYPE_CODE = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CODE_DTYPE = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


def write_tensor(path, tensor) -> None:
    """Write a Tensor or ndarray to an SGTF file."""
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    if arr.dtype not in _DTYPE_CODE:
        raise ValueError(f"SGTF supports f64/f32 only, got dtype {arr.dtype}")
    code = _DTYPE_CODE[arr.dtype]
    header = MAGIC + struct.pack("<BBI", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    payload = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    Path(path).write_bytes(header + payload)


def read_tensor(path) -> np.ndarray:
    """Read an SGTF file back into a numpy array."""
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an SGTF file (bad magic)")
    version, code, rank = struct.unpack_from("<BBI", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported SGTF version {version}")
    if code not in _CODE_DTYPE:
        raise ValueError(f"{path}: unknown dtype code {code}")
    offset = 10
    dims = struct.unpack_from(f"<{rank}Q", raw, offset) if rank else ()
    offset += 8 * rank
    dtype = _CODE_DTYPE[code]
    count = int(np.prod(dims)) if dims else 1
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise ValueError(f"{path}: size mismatch, expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return data.reshape(dims).astype(dtype.newbyteorder("="), copy=True)


def save_params(dirpath, params: dict[str, Tensor]) -> None:
    """Write a named parameter set as one SGTF file per tensor plus a manifest."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    names = sorted(params)
    for name in names:
        write_tensor(d / f"{name}.sgtf", params[name])
    manifest = {"format": "sgtf-params", "version": 1, "tensors": names}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_params(dirpath, requires_grad: bool = True) -> dict[str, Tensor]:
    """Load a parameter directory written by save_params."""
    d = Path(dirpath)
    manifest_path = d / "manifest.json"
    if not manifest_path.exists():
        raise ValueError(f"{dirpath}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "sgtf-params":
        raise ValueError(f"{dirpath}: not a parameter directory")
    params: dict[str, Tensor] = {}
    for name in manifest["tensors"]:
        arr = read_tensor(d / f"{name}.sgtf")
        t = Tensor(arr, requires_grad=requires_grad, dtype=arr.dtype)
        t.name = name
        params[name] = t
    return params
