"""Default embedding and scoring: 16x16 block averages, mean removed,
L2-normalized, cosine similarities softmaxed over the gallery.

This is the reference stand-in a real model replaces; any callable with
the same (pixels) -> vector signature can be plugged into GalleryScorer.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch

GRID = 16
DIM = GRID * GRID
DEFAULT_TEMPERATURE = 0.05
# mean removal leaves ~1e-16 of rounding noise on constant images; below
# this the vector is treated as exactly zero instead of being normalized
ZERO_NORM_TOL = 1e-12


def block_embed(pixels: np.ndarray) -> np.ndarray:
    """Length-256 unit vector; constant images map to the zero vector.

    Row r of the image lands in block floor(r * 16 / h), columns likewise,
    so any image size works; images smaller than the grid leave empty
    blocks at zero.
    """
    h, w = pixels.shape
    if h % GRID == 0 and w % GRID == 0:
        pooled = pixels.reshape(GRID, h // GRID, GRID, w // GRID).mean(axis=(1, 3))
    else:
        rows = np.arange(h) * GRID // h
        cols = np.arange(w) * GRID // w
        bins = (rows[:, None] * GRID + cols[None, :]).ravel()
        sums = np.bincount(bins, weights=pixels.ravel(), minlength=DIM)
        counts = np.bincount(bins, minlength=DIM)
        pooled = (sums / np.maximum(counts, 1)).reshape(GRID, GRID)
    vec = pooled.ravel() - pooled.mean()
    norm = np.linalg.norm(vec)
    if norm <= ZERO_NORM_TOL:
        return np.zeros(DIM)
    return vec / norm


class GalleryScorer:
    """Embeds the gallery once, then turns probes into probability maps."""

    def __init__(self, entries, temperature: float = DEFAULT_TEMPERATURE, embed=block_embed):
        if temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {temperature}")
        self._labels = [lbl for lbl, _ in entries]
        self._shape = entries[0][1].shape
        self._embeds = np.stack([embed(pixels) for _, pixels in entries])
        self._embed = embed
        self.temperature = temperature

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self._shape

    def probabilities(self, pixels: np.ndarray) -> dict[str, float]:
        if pixels.shape != self._shape:
            raise DimensionMismatch(
                f"probe is {pixels.shape[1]}x{pixels.shape[0]}, gallery is "
                f"{self._shape[1]}x{self._shape[0]}"
            )
        sims = self._embeds @ self._embed(pixels)
        z = sims / self.temperature
        z = z - z.max()
        e = np.exp(z)
        p = e / e.sum()
        return dict(zip(self._labels, p.tolist()))
