"""Grayscale image IO for the bridge, all through Pillow.

Pixels travel as float64 arrays in [0, 1]; everything on disk or on the
wire is 8-bit (PGM maxval 255 or grayscale PNG). Deeper formats are
rejected rather than silently rescaled.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import GalleryError, ImageFormatError

GALLERY_SUFFIXES = (".pgm", ".png")


def decode_image_bytes(blob: bytes) -> np.ndarray:
    try:
        pil = Image.open(io.BytesIO(blob))
        pil.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageFormatError(f"undecodable image bytes: {exc}") from exc
    if pil.mode != "L":
        raise ImageFormatError(
            f"only 8-bit grayscale accepted, got mode {pil.mode!r}"
        )
    return np.asarray(pil, dtype=np.uint8) / 255.0


def load_image(path) -> np.ndarray:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    return decode_image_bytes(blob)


def save_mask(bits: np.ndarray, path) -> None:
    """Write a 0/1 array as a 0/255 PGM or PNG, by suffix."""
    arr = (np.asarray(bits, dtype=np.uint8) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_gallery(directory) -> list[tuple[str, np.ndarray]]:
    """(label, pixels) pairs from <label>.pgm/.png files, lexicographic order."""
    root = Path(directory)
    if not root.is_dir():
        raise GalleryError(f"gallery directory {root} does not exist")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in GALLERY_SUFFIXES)
    if len(files) < 2:
        raise GalleryError(f"gallery {root} needs >= 2 images, found {len(files)}")
    entries = []
    shape = None
    for path in files:
        pixels = load_image(path)
        if shape is None:
            shape = pixels.shape
        elif pixels.shape != shape:
            raise GalleryError(
                f"gallery image {path.name} is {pixels.shape}, expected {shape}"
            )
        entries.append((path.stem, pixels))
    labels = [lbl for lbl, _ in entries]
    if len(set(labels)) != len(labels):
        raise GalleryError(f"duplicate labels in {root}")
    return entries
