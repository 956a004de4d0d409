"""Writer/reader for the CTF1 binary tensor interchange format: magic
"CTF1", dtype code u8 (0 = f32), rank u8, two pad bytes, little-endian u64
dims, row-major little-endian float32 payload."""

import struct

import numpy as np

MAGIC = b"CTF1"
DTYPE_F32 = 0


def write_ctf(array: np.ndarray, path) -> None:
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim < 1 or any(d < 1 for d in arr.shape):
        raise ValueError(f"invalid tensor shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BBxx", DTYPE_F32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_ctf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"bad magic {raw[:4]!r}")
    dtype_code, rank = struct.unpack("<BBxx", raw[4:8])
    if dtype_code != DTYPE_F32:
        raise ValueError(f"unknown dtype code {dtype_code}")
    dims = struct.unpack(f"<{rank}Q", raw[8:8 + 8 * rank])
    payload = raw[8 + 8 * rank:]
    expected = 4 * int(np.prod(dims))
    if len(payload) != expected:
        raise ValueError(f"payload {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
