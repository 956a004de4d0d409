"""Serialization boundary: CTF1 float tensors, binary pixmaps, RLE masks,
and JSON annotation documents."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable

import numpy as np

MAGIC = b"CTF1"
DTYPE_F32 = 0

__all__ = [
    "TensorFormatError",
    "BadMagicError",
    "UnknownDtypeError",
    "TruncatedStreamError",
    "PixmapError",
    "write_tensor",
    "read_tensor",
    "encode_rle",
    "decode_rle",
    "read_image",
    "write_image",
    "InstanceAnnotation",
    "AnnotationSet",
    "load_annotation_sets",
    "save_annotation_sets",
]


class TensorFormatError(ValueError):
    """Malformed CTF1 stream."""


class BadMagicError(TensorFormatError):
    pass


class UnknownDtypeError(TensorFormatError):
    pass


class TruncatedStreamError(TensorFormatError):
    pass


class PixmapError(ValueError):
    """Malformed P5/P6 pixmap."""


def write_tensor(array: np.ndarray, sink: BinaryIO) -> None:
    """Write a float32 array as a CTF1 record.

    Layout: magic "CTF1", dtype code u8, rank u8, two zero pad bytes,
    rank little-endian u64 dims, then the row-major little-endian payload.
    Byte-for-byte deterministic for equal inputs.
    """
    arr = np.asarray(array)
    if arr.dtype != np.float32:
        raise TensorFormatError(f"CTF1 carries float32 only, got {arr.dtype}")
    if arr.ndim < 1:
        raise TensorFormatError("rank must be >= 1")
    if any(d < 1 for d in arr.shape):
        raise TensorFormatError(f"dims must all be >= 1, got {arr.shape}")
    sink.write(MAGIC)
    sink.write(struct.pack("<BBxx", DTYPE_F32, arr.ndim))
    sink.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    sink.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    buf = source.read(n)
    if len(buf) != n:
        raise TruncatedStreamError(f"expected {n} bytes of {what}, got {len(buf)}")
    return buf


def read_tensor(source: BinaryIO) -> np.ndarray:
    """Inverse of write_tensor."""
    magic = _read_exact(source, 4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    dtype_code, rank = struct.unpack("<BBxx", _read_exact(source, 4, "header"))
    if dtype_code != DTYPE_F32:
        raise UnknownDtypeError(f"unknown dtype code {dtype_code}")
    if rank < 1:
        raise TensorFormatError("rank must be >= 1")
    dims = struct.unpack(f"<{rank}Q", _read_exact(source, 8 * rank, "dims"))
    if any(d < 1 for d in dims):
        raise TensorFormatError(f"dims must all be >= 1, got {dims}")
    count = int(np.prod(dims))
    payload = _read_exact(source, 4 * count, "payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def encode_rle(mask: np.ndarray) -> list[int]:
    """Column-major run-length counts of a binary mask.

    The first count is the number of leading zeros (possibly 0); counts
    always sum to width*height.
    """
    m = np.asarray(mask).astype(bool)
    if m.ndim != 2:
        raise ValueError("mask must be 2-D")
    flat = m.flatten(order="F")
    if flat.size == 0:
        return []
    # run boundaries, column-major
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    counts = (ends - starts).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return counts


def decode_rle(counts: Iterable[int], width: int, height: int) -> np.ndarray:
    """Inverse of encode_rle; returns a bool array of shape (height, width)."""
    counts = list(counts)
    total = sum(counts)
    if total != width * height:
        raise ValueError(f"counts sum to {total}, expected {width * height}")
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for c in counts:
        if value:
            flat[pos : pos + c] = True
        pos += c
        value = not value
    return flat.reshape((height, width), order="F")


def _next_token(source: BinaryIO) -> bytes:
    """Read one whitespace-delimited header token, skipping # comments."""
    tok = b""
    while True:
        ch = source.read(1)
        if ch == b"":
            if tok:
                return tok
            raise PixmapError("truncated header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = source.read(1)
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def read_image(source: BinaryIO) -> np.ndarray:
    """Read a binary pixmap (P5 gray / P6 rgb), maxval 255.

    Returns uint8 arrays of shape (h, w) or (h, w, 3).
    """
    magic = source.read(2)
    if magic not in (b"P5", b"P6"):
        raise PixmapError(f"bad pixmap magic {magic!r}")
    channels = 1 if magic == b"P5" else 3
    try:
        width, height, maxval = (int(_next_token(source)) for _ in range(3))
    except ValueError as exc:
        raise PixmapError(f"non-numeric header token: {exc}") from exc
    if width < 1 or height < 1:
        raise PixmapError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise PixmapError(f"only maxval 255 supported, got {maxval}")
    n = width * height * channels
    data = source.read(n)
    if len(data) != n:
        raise PixmapError(f"expected {n} pixel bytes, got {len(data)}")
    img = np.frombuffer(data, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return img.reshape(shape).copy()


def write_image(image: np.ndarray, sink: BinaryIO) -> None:
    """Write a uint8 image as binary P5 (2-D input) or P6 (h,w,3 input)."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise PixmapError(f"pixmaps carry uint8 only, got {img.dtype}")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise PixmapError(f"unsupported image shape {img.shape}")
    h, w = img.shape[:2]
    if h < 1 or w < 1:
        raise PixmapError(f"bad dimensions {w}x{h}")
    sink.write(magic + b"\n" + f"{w} {h}\n255\n".encode("ascii"))
    sink.write(np.ascontiguousarray(img).tobytes())


@dataclass
class InstanceAnnotation:
    """One discovered object: RLE mask, tight box, confidence."""

    counts: list[int]
    size: tuple[int, int]  # (height, width)
    bbox: tuple[float, float, float, float]  # x, y, w, h
    score: float
    source: str = "maskcut"
    round: int = 0

    @classmethod
    def from_mask(cls, mask: np.ndarray, bbox, score: float,
                  source: str = "maskcut", round: int = 0) -> "InstanceAnnotation":
        h, w = mask.shape
        return cls(encode_rle(mask), (h, w), tuple(float(v) for v in bbox),
                   float(score), source, round)

    @property
    def mask(self) -> np.ndarray:
        h, w = self.size
        return decode_rle(self.counts, w, h)

    @property
    def area(self) -> int:
        # foreground pixels = every second run, starting after the zero run
        return int(sum(self.counts[1::2]))


@dataclass
class AnnotationSet:
    """Per-image annotation collection with self-training provenance."""

    image_id: str
    width: int
    height: int
    annotations: list[InstanceAnnotation] = field(default_factory=list)
    round: int = 0

    def validate(self) -> None:
        if self.round < 0:
            raise ValueError("round must be >= 0")
        for ann in self.annotations:
            if ann.size != (self.height, self.width):
                raise ValueError(
                    f"mask size {ann.size} != image size "
                    f"{(self.height, self.width)} on {self.image_id}")
            if not 0.0 <= ann.score <= 1.0:
                raise ValueError(f"score {ann.score} outside [0,1]")

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "round": self.round,
            "annotations": [
                {
                    "bbox": [float(v) for v in ann.bbox],
                    "score": float(ann.score),
                    "segmentation": {"counts": list(ann.counts),
                                     "size": [ann.size[0], ann.size[1]]},
                }
                for ann in self.annotations
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AnnotationSet":
        anns = [
            InstanceAnnotation(
                counts=[int(c) for c in a["segmentation"]["counts"]],
                size=tuple(a["segmentation"]["size"]),
                bbox=tuple(float(v) for v in a["bbox"]),
                score=float(a["score"]),
                round=int(doc.get("round", 0)),
            )
            for a in doc["annotations"]
        ]
        out = cls(image_id=str(doc["image_id"]), width=int(doc["width"]),
                  height=int(doc["height"]), annotations=anns,
                  round=int(doc.get("round", 0)))
        out.validate()
        return out


def save_annotation_sets(sets: list[AnnotationSet], path) -> None:
    """Write annotation documents as a JSON array, one document per image."""
    docs = [s.to_dict() for s in sorted(sets, key=lambda s: s.image_id)]
    with open(path, "w", encoding="ascii") as fh:
        json.dump(docs, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_annotation_sets(path) -> list[AnnotationSet]:
    """Read a JSON annotation file (array of documents, or a single one)."""
    with open(path, "r", encoding="ascii") as fh:
        payload = json.load(fh)
    if isinstance(payload, dict):
        payload = [payload]
    return [AnnotationSet.from_dict(doc) for doc in payload]
