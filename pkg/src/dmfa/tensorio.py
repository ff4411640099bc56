"""Dataset ingestion and the binary tensor container.

Two input formats are supported: the classic IDX image format (big-endian
header, row-major unsigned bytes) and directories of raw PGM (P5) / PPM (P6)
images.  All pixel data is normalized to [0, 1] as float32 at load time.

Trained models and tensors are persisted in a small self-describing
container: ``b"DMFA" | u32 version | u32 header length | JSON header |
little-endian float32 payload``.  Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import FormatError, InvalidValueError, ShapeError, WrongKindError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

CONTAINER_MAGIC = b"DMFA"
CONTAINER_VERSION = 1


@dataclass
class Dataset:
    """A stack of flat float32 vectors with spatial shape metadata.

    ``samples`` has shape (count, channels*height*width) and every entry
    lies in [0, 1].
    """

    samples: np.ndarray
    shape: tuple[int, int, int]

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2:
            raise ShapeError(f"samples must be 2-D, got ndim={self.samples.ndim}")
        c, h, w = self.shape
        if self.samples.shape[1] != c * h * w:
            raise ShapeError(
                f"sample length {self.samples.shape[1]} != {c}*{h}*{w}"
            )
        if self.samples.size and (
            self.samples.min() < 0.0 or self.samples.max() > 1.0
        ):
            raise InvalidValueError("sample values must lie in [0, 1]")

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.samples[np.asarray(indices)], self.shape)


def load_idx(path) -> Dataset:
    """Load an IDX file of unsigned-byte images, scaled to [0, 1].

    Label files (magic 0x00000801) are rejected with WrongKindError.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise FormatError(f"{path}: too short for an IDX magic")
    magic = int.from_bytes(blob[:4], "big")
    if magic == IDX_LABEL_MAGIC:
        raise WrongKindError(f"{path}: label file, expected images")
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated IDX header")
    count, h, w = struct.unpack(">III", blob[4:16])
    payload = blob[16:]
    if len(payload) != count * h * w:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes, expected {count * h * w}"
        )
    data = np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / 255.0
    return Dataset(data.reshape(count, h * w), (1, h, w))


def _read_pnm(path: Path) -> tuple[int, np.ndarray]:
    """Parse one P5/P6 file; returns (channels, (h, w, c) uint8 array)."""
    blob = path.read_bytes()

    # Header tokens are whitespace separated; '#' starts a comment line.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(blob):
            raise FormatError(f"{path}: truncated PNM header")
        ch = blob[pos : pos + 1]
        if ch == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(blob) and not blob[pos : pos + 1].isspace():
                pos += 1
            tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval

    magic, rest = tokens[0], tokens[1:]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise FormatError(f"{path}: unsupported PNM magic {magic!r}")
    try:
        w, h, maxval = (int(t) for t in rest)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric PNM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    expected = w * h * channels
    payload = blob[pos : pos + expected]
    if len(payload) != expected:
        raise FormatError(f"{path}: PNM payload truncated")
    return channels, np.frombuffer(payload, dtype=np.uint8).reshape(h, w, channels)


def load_image_dir(path, size: tuple[int, int]) -> Dataset:
    """Load all PGM/PPM files under ``path`` (lexicographic filename order).

    Every image must already be exactly ``size`` = (h, w); no resampling is
    performed.  Gray and color files may not be mixed.
    """
    h, w = size
    files = sorted(
        p for p in Path(path).iterdir() if p.suffix.lower() in (".pgm", ".ppm")
    )
    if not files:
        return Dataset(np.zeros((0, h * w), dtype=np.float32), (1, h, w))

    channels = None
    rows = []
    for p in files:
        c, img = _read_pnm(p)
        if channels is None:
            channels = c
        elif c != channels:
            raise FormatError(f"{p}: mixes gray and color images in one dataset")
        if img.shape[:2] != (h, w):
            raise ShapeError(f"{p}: image is {img.shape[:2]}, expected {(h, w)}")
        # (h, w, c) -> (c, h, w) flat, matching Dataset layout
        rows.append(np.transpose(img, (2, 0, 1)).reshape(-1))
    data = np.stack(rows).astype(np.float32) / 255.0
    return Dataset(data, (channels, h, w))


def write_pnm(path, image: np.ndarray) -> None:
    """Write a [0, 1] float image as P5 ((h, w)) or P6 ((3, h, w))."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        magic, h, w = b"P5", *img.shape
        payload = img
    elif img.ndim == 3 and img.shape[0] == 3:
        magic, h, w = b"P6", img.shape[1], img.shape[2]
        payload = np.transpose(img, (1, 2, 0))
    else:
        raise ShapeError(f"expected (h, w) or (3, h, w), got {img.shape}")
    data = np.rint(np.clip(payload, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def save_container(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float32 tensors plus a JSON metadata block.

    Non-finite values are rejected: a model with NaN parameters must fail
    at save time, not at some later load.
    """
    entries = []
    payloads = []
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        if not np.isfinite(a).all():
            raise InvalidValueError(f"tensor {name!r} contains non-finite values")
        entries.append(
            {"role": name, "shape": list(a.shape), "dtype": "f32", "order": "little"}
        )
        payloads.append(a.tobytes())
    header = json.dumps({"tensors": entries, "meta": meta or {}}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CONTAINER_MAGIC)
        f.write(struct.pack("<II", CONTAINER_VERSION, len(header)))
        f.write(header)
        for p in payloads:
            f.write(p)


def load_container(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Inverse of save_container; returns ({role: tensor}, meta)."""
    blob = Path(path).read_bytes()
    if blob[:4] != CONTAINER_MAGIC:
        raise FormatError(f"{path}: bad container magic {blob[:4]!r}")
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated container header")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unparseable container header") from exc

    tensors: dict[str, np.ndarray] = {}
    pos = 12 + header_len
    for entry in header["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        chunk = blob[pos : pos + nbytes]
        if len(chunk) != nbytes:
            raise FormatError(f"{path}: payload shorter than header declares")
        tensors[entry["role"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        pos += nbytes
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes after payload")
    return tensors, header.get("meta", {})
