"""Grayscale raster types and file I/O.

Intensities live in [0, 1] as float64 throughout the pipeline; quantization
to 8 bits happens only at file boundaries. Supported formats are binary PGM
(P5, maxval 255) and 8-bit grayscale PNG, detected by content rather than
extension on read. Stored pixel p maps to p / 255 exactly; writing rounds to
the nearest 8-bit level, so a save/load round trip moves a pixel by at most
0.5 / 255. Color inputs are rejected, never silently converted.

Masks ride the same formats with the convention 0 -> background, 255 -> set.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import (
    CorruptHeader,
    DimensionMismatch,
    IoFailure,
    MaskNotBinary,
    UnsupportedFormat,
)

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class NirImage:
    """Immutable single-channel image; data has shape (height, width)."""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DimensionMismatch(f"degenerate image size {self.width}x{self.height}")
        arr = np.array(self.data, dtype=np.float64)
        if arr.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"data shape {arr.shape} does not match {self.height}x{self.width}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite pixels")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image pixels outside [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_array(cls, arr) -> "NirImage":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionMismatch(f"expected 2-d array, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], data=arr)


@dataclass(frozen=True)
class BinaryMask:
    """Immutable 0/1 mask; bits has shape (height, width), dtype uint8."""

    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DimensionMismatch(f"degenerate mask size {self.width}x{self.height}")
        arr = np.array(self.bits)
        if arr.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"bits shape {arr.shape} does not match {self.height}x{self.width}"
            )
        if not np.isin(arr, (0, 1)).all():
            raise MaskNotBinary("mask values must be exactly 0 or 1")
        arr = arr.astype(np.uint8)
        arr.flags.writeable = False
        object.__setattr__(self, "bits", arr)

    @classmethod
    def from_array(cls, arr) -> "BinaryMask":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise DimensionMismatch(f"expected 2-d array, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], bits=arr)

    @property
    def as_bool(self) -> np.ndarray:
        return self.bits.astype(bool)

    def count(self) -> int:
        return int(self.bits.sum())


# --- PGM codec ---------------------------------------------------------------

def _tokenize_pgm_header(blob: bytes):
    """Yield (token, end_offset) for the first 4 header tokens, honoring
    '#' comments that run to end of line."""
    tokens = []
    i = 0
    n = len(blob)
    while len(tokens) < 4:
        while i < n and blob[i : i + 1].isspace():
            i += 1
        if i < n and blob[i : i + 1] == b"#":
            while i < n and blob[i] not in (0x0A, 0x0D):
                i += 1
            continue
        if i >= n:
            raise CorruptHeader("header ended before width/height/maxval")
        start = i
        while i < n and not blob[i : i + 1].isspace() and blob[i : i + 1] != b"#":
            i += 1
        tokens.append(blob[start:i])
    # exactly one whitespace byte separates maxval from the payload
    if i >= n or not blob[i : i + 1].isspace():
        raise CorruptHeader("missing whitespace between maxval and payload")
    return tokens, i + 1


def decode_pgm(blob: bytes) -> NirImage:
    if not blob.startswith(b"P5"):
        raise UnsupportedFormat("not a binary PGM (P5) stream")
    tokens, payload_at = _tokenize_pgm_header(blob)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise CorruptHeader(f"non-numeric PGM header fields: {tokens[1:]}") from None
    if maxval != 255:
        raise UnsupportedFormat(f"only maxval 255 supported, got {maxval}")
    if width < 1 or height < 1:
        raise CorruptHeader(f"degenerate PGM size {width}x{height}")
    payload = blob[payload_at:]
    expected = width * height
    if len(payload) < expected:
        raise CorruptHeader(
            f"payload truncated: {len(payload)} bytes, declared {expected}"
        )
    if len(payload) > expected:
        raise DimensionMismatch(
            f"payload has {len(payload) - expected} trailing bytes past declared size"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return NirImage(width=width, height=height, data=pixels / 255.0)


def encode_pgm(img: NirImage) -> bytes:
    q = np.round(img.data * 255.0).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + q.tobytes()


# --- PNG codec (via Pillow, grayscale-8 only) ---------------------------------

def _decode_png(blob: bytes) -> NirImage:
    try:
        pil = PILImage.open(io.BytesIO(blob))
        pil.load()
    except UnidentifiedImageError:
        raise CorruptHeader("PNG signature present but stream undecodable") from None
    except OSError as exc:
        raise CorruptHeader(f"PNG stream undecodable: {exc}") from None
    if pil.mode != "L":
        raise UnsupportedFormat(
            f"only 8-bit grayscale PNG accepted, got mode {pil.mode!r}"
        )
    arr = np.asarray(pil, dtype=np.uint8)
    return NirImage(width=pil.width, height=pil.height, data=arr / 255.0)


def _encode_png(img: NirImage) -> bytes:
    q = np.round(img.data * 255.0).astype(np.uint8)
    pil = PILImage.fromarray(q, mode="L")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


# --- file-level API ------------------------------------------------------------

def load_image(path) -> NirImage:
    """Read a PGM or grayscale PNG; format is sniffed from the magic bytes."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if blob.startswith(b"P5"):
        return decode_pgm(blob)
    if blob.startswith(_PNG_MAGIC):
        return _decode_png(blob)
    if blob[:1] == b"P":
        raise UnsupportedFormat(f"unsupported PNM variant {blob[:2]!r} in {path}")
    raise UnsupportedFormat(f"unrecognized image format in {path}")


def save_image(img: NirImage, path) -> None:
    """Write PGM or PNG according to the path suffix (.pgm / .png)."""
    suffix = str(path).lower().rsplit(".", 1)
    kind = suffix[1] if len(suffix) == 2 else ""
    if kind == "pgm":
        blob = encode_pgm(img)
    elif kind == "png":
        blob = _encode_png(img)
    else:
        raise UnsupportedFormat(f"cannot infer output format from {path}")
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def mask_to_image(mask: BinaryMask) -> NirImage:
    return NirImage(width=mask.width, height=mask.height, data=mask.bits.astype(np.float64))


def save_mask(mask: BinaryMask, path) -> None:
    save_image(mask_to_image(mask), path)


def load_mask(path) -> BinaryMask:
    """Read a mask stored as a 0/255 image; anything in between is rejected."""
    img = load_image(path)
    data = img.data
    is_set = data == 1.0
    if not np.logical_or(is_set, data == 0.0).all():
        raise MaskNotBinary(f"mask {path} has pixels that are neither 0 nor 255")
    return BinaryMask(width=img.width, height=img.height, bits=is_set.astype(np.uint8))
