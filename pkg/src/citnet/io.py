"""Binary tensor checkpoints and checkpoint directories.

One tensor per file:

    magic   4 bytes  b"CITN"
    version u8       1
    dtype   u8       0 = float32, 1 = float64
    ndim    u8
    dims    ndim x u32, little-endian
    payload raw little-endian values, row-major

A checkpoint directory holds one ``.citn`` file per named tensor plus a
``manifest.txt`` of tab-separated ``name<TAB>filename`` lines.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor

MAGIC = b"CITN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_tensor(path, t: Tensor | np.ndarray) -> None:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.dtype not in _CODES:
        raise ConfigError(f"unsupported checkpoint dtype {arr.dtype}")
    if arr.ndim > 255:
        raise DimensionError("tensor rank exceeds checkpoint format limit")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", VERSION, _CODES[arr.dtype]))
        fh.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<I", dim))
        fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ConfigError(f"{path}: bad magic {raw[:4]!r}")
    version, dtype_code = struct.unpack_from("<BB", raw, 4)
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported version {version}")
    if dtype_code not in _DTYPES:
        raise ConfigError(f"{path}: unknown dtype code {dtype_code}")
    (ndim,) = struct.unpack_from("<B", raw, 6)
    dims = struct.unpack_from(f"<{ndim}I", raw, 7)
    offset = 7 + 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    arr = np.frombuffer(raw, dtype=_DTYPES[dtype_code], count=count, offset=offset)
    if arr.size != count:
        raise DimensionError(f"{path}: payload holds {arr.size} values, header says {count}")
    return arr.reshape(dims).astype(_DTYPES[dtype_code].newbyteorder("="))


def _safe_filename(name: str) -> str:
    return name.replace("/", "_").replace("\\", "_") + ".citn"


def save_checkpoint(directory, tensors: dict[str, Tensor | np.ndarray]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in sorted(tensors):
        fname = _safe_filename(name)
        write_tensor(directory / fname, tensors[name])
        lines.append(f"{name}\t{fname}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_checkpoint(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.exists():
        raise ConfigError(f"{directory}: missing manifest.txt")
    out: dict[str, np.ndarray] = {}
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        try:
            name, fname = line.split("\t")
        except ValueError as exc:
            raise ConfigError(f"{directory}: malformed manifest line {line!r}") from exc
        out[name] = read_tensor(directory / fname)
    return out
