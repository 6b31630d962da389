"""Patch genome geometry: star-shaped polygons, closed B-spline contours,
scanline rasterization, and mask composition.

A genome is m patch descriptors. Patch i is a center (x_i, y_i) plus n radii
l_i0..l_i,n-1; vertex j sits at angle j * 2pi/n from the center at distance
l_ij. The n vertices drive a closed uniform cubic B-spline (segment j blends
control points j-1, j, j+1, j+2 cyclically), which is sampled and filled with
an even-odd scanline rule. Coordinates are pixel centers: pixel (col, row)
covers the point (col, row) exactly, x grows rightward and y grows downward.

Feasibility is enforced by clamping, not rejection: after any vector
arithmetic, centers are clamped into the image rectangle and radii into
[l_min, l_max], so every genome that reaches the rasterizer is in bounds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    DimensionMismatch,
    GenomeFormatError,
    IndexOutOfRange,
    InvalidRange,
    IoFailure,
    OpenContour,
    TooFewVertices,
)
from .image import BinaryMask

CLOSURE_TOL = 1e-9
DEFAULT_SAMPLES_PER_SEGMENT = 16
DEFAULT_RADIUS_MIN = 2.0
DEFAULT_RADIUS_MAX = 20.0


@dataclass(frozen=True)
class GenomeBounds:
    """Feasible box: centers in [x_min, x_max] x [y_min, y_max], radii in
    [radius_min, radius_max]."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    radius_min: float
    radius_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise InvalidRange("center bounds out of order")
        if self.radius_min > self.radius_max or self.radius_min < 0:
            raise InvalidRange("radius bounds out of order or negative")

    @classmethod
    def for_image(
        cls,
        width: int,
        height: int,
        radius_min: float = DEFAULT_RADIUS_MIN,
        radius_max: float = DEFAULT_RADIUS_MAX,
    ) -> "GenomeBounds":
        """Centers anywhere on the pixel grid of a width x height image."""
        return cls(0.0, float(width - 1), 0.0, float(height - 1), radius_min, radius_max)


@dataclass(frozen=True)
class PatchGenome:
    """m patch centers with an (m, n) radius table."""

    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        centers = np.array(self.centers, dtype=np.float64)
        radii = np.array(self.radii, dtype=np.float64)
        if centers.ndim != 2 or centers.shape[1] != 2:
            raise GenomeFormatError(f"centers must be (m, 2), got {centers.shape}")
        if centers.shape[0] < 1:
            raise GenomeFormatError("genome needs at least one patch")
        if radii.ndim != 2 or radii.shape[0] != centers.shape[0]:
            raise GenomeFormatError(
                f"radii must be (m, n) with m={centers.shape[0]}, got {radii.shape}"
            )
        if radii.shape[1] < 3:
            raise GenomeFormatError("each patch needs at least 3 vertices")
        if not (np.all(np.isfinite(centers)) and np.all(np.isfinite(radii))):
            raise GenomeFormatError("genome contains non-finite values")
        if radii.min() < 0:
            raise GenomeFormatError("negative radius")
        centers.flags.writeable = False
        radii.flags.writeable = False
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radii", radii)

    @property
    def patch_count(self) -> int:
        return self.centers.shape[0]

    @property
    def vertex_count(self) -> int:
        return self.radii.shape[1]

    def to_vector(self) -> np.ndarray:
        """Flat layout [x_0, y_0, .., x_{m-1}, y_{m-1}, l_00, .., l_{m-1,n-1}]."""
        return np.concatenate([self.centers.ravel(), self.radii.ravel()])

    @classmethod
    def from_vector(cls, m: int, n: int, vec: np.ndarray) -> "PatchGenome":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (2 * m + m * n,):
            raise GenomeFormatError(
                f"vector length {vec.shape} does not match m={m}, n={n}"
            )
        centers = vec[: 2 * m].reshape(m, 2)
        radii = vec[2 * m :].reshape(m, n)
        return cls(centers=centers, radii=radii)


@dataclass(frozen=True)
class Contour:
    """Sampled closed curve; points has shape (k, 2) in (x, y) order."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
            raise TooFewVertices(f"contour needs (k>=4, 2) points, got {pts.shape}")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def closure_error(self) -> float:
        return float(np.linalg.norm(self.points[0] - self.points[-1]))


def compute_vertices(genome: PatchGenome, patch_index: int) -> np.ndarray:
    """Star-polygon vertices of one patch: vertex j at angle j * 2pi/n."""
    if not 0 <= patch_index < genome.patch_count:
        raise IndexOutOfRange(
            f"patch index {patch_index} out of range for m={genome.patch_count}"
        )
    n = genome.vertex_count
    angles = np.arange(n) * (2.0 * np.pi / n)
    offsets = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return genome.centers[patch_index] + genome.radii[patch_index, :, None] * offsets


@lru_cache(maxsize=8)
def _spline_basis(samples_per_segment: int) -> np.ndarray:
    """Uniform cubic B-spline basis evaluated at t = k / samples_per_segment,
    k = 0..samples_per_segment-1; rows sum to 1."""
    t = np.arange(samples_per_segment) / samples_per_segment
    b0 = (1.0 - t) ** 3 / 6.0
    b1 = (3.0 * t**3 - 6.0 * t**2 + 4.0) / 6.0
    b2 = (-3.0 * t**3 + 3.0 * t**2 + 3.0 * t + 1.0) / 6.0
    b3 = t**3 / 6.0
    basis = np.stack([b0, b1, b2, b3], axis=1)
    basis.flags.writeable = False
    return basis


def bspline_contour(
    vertices: np.ndarray, samples_per_segment: int = DEFAULT_SAMPLES_PER_SEGMENT
) -> Contour:
    """Closed uniform cubic B-spline through n control vertices.

    Segment j blends control points (j-1, j, j+1, j+2) mod n, so the curve is
    C2-continuous and closed by construction. Returns
    n * samples_per_segment + 1 points, the last repeating the first exactly.
    """
    verts = np.asarray(vertices, dtype=np.float64)
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise TooFewVertices(f"vertices must be (n, 2), got {verts.shape}")
    n = verts.shape[0]
    if n < 3:
        raise TooFewVertices(f"closed spline needs n >= 3 vertices, got {n}")
    if samples_per_segment < 2:
        raise InvalidRange(
            f"samples_per_segment must be >= 2, got {samples_per_segment}"
        )
    basis = _spline_basis(samples_per_segment)
    idx = np.arange(n)
    # (n, 4, 2): control quadruple for each segment, cyclic
    ctrl = verts[np.stack([(idx - 1) % n, idx, (idx + 1) % n, (idx + 2) % n], axis=1)]
    pts = np.einsum("tb,sbc->stc", basis, ctrl).reshape(-1, 2)
    pts = np.vstack([pts, pts[:1]])
    return Contour(points=pts)


def rasterize(contour: Contour, width: int, height: int) -> BinaryMask:
    """Fill a closed contour with the even-odd rule on pixel centers.

    Pixel (px, py) is inside iff a ray cast toward +x from its center crosses
    the polyline an odd number of times. An edge contributes a crossing on
    row y iff exactly one endpoint satisfies (ey > y); this half-open rule
    counts a vertex lying on the scanline once, never twice.
    """
    if width < 1 or height < 1:
        raise DimensionMismatch(f"degenerate raster size {width}x{height}")
    if contour.closure_error() > CLOSURE_TOL:
        raise OpenContour(
            f"contour endpoints {contour.closure_error():.3e} apart exceeds {CLOSURE_TOL}"
        )
    pts = contour.points
    x1, y1 = pts[:-1, 0], pts[:-1, 1]
    x2, y2 = pts[1:, 0], pts[1:, 1]
    bits = np.zeros((height, width), dtype=np.uint8)
    row_lo = max(0, int(np.ceil(pts[:, 1].min())))
    row_hi = min(height - 1, int(np.floor(pts[:, 1].max())))
    cols = np.arange(width, dtype=np.float64)
    for y in range(row_lo, row_hi + 1):
        hit = (y1 > y) != (y2 > y)
        if not hit.any():
            continue
        xs = x1[hit] + (y - y1[hit]) * (x2[hit] - x1[hit]) / (y2[hit] - y1[hit])
        xs.sort()
        # crossings strictly right of each pixel center
        rightward = len(xs) - np.searchsorted(xs, cols, side="right")
        bits[y] = rightward & 1
    return BinaryMask(width=width, height=height, bits=bits)


def apply_constraints(genome: PatchGenome, bounds: GenomeBounds) -> PatchGenome:
    """Clamp centers into the image rectangle and radii into [min, max]."""
    centers = np.clip(
        genome.centers,
        [bounds.x_min, bounds.y_min],
        [bounds.x_max, bounds.y_max],
    )
    radii = np.clip(genome.radii, bounds.radius_min, bounds.radius_max)
    return PatchGenome(centers=centers, radii=radii)


def genome_within_bounds(genome: PatchGenome, bounds: GenomeBounds) -> bool:
    return bool(
        (genome.centers[:, 0] >= bounds.x_min).all()
        and (genome.centers[:, 0] <= bounds.x_max).all()
        and (genome.centers[:, 1] >= bounds.y_min).all()
        and (genome.centers[:, 1] <= bounds.y_max).all()
        and (genome.radii >= bounds.radius_min).all()
        and (genome.radii <= bounds.radius_max).all()
    )


def patch_mask(
    genome: PatchGenome,
    patch_index: int,
    width: int,
    height: int,
    samples_per_segment: int = DEFAULT_SAMPLES_PER_SEGMENT,
) -> BinaryMask:
    """Raster footprint of a single patch."""
    contour = bspline_contour(compute_vertices(genome, patch_index), samples_per_segment)
    return rasterize(contour, width, height)


def compose_mask(
    genome: PatchGenome,
    face_mask: BinaryMask,
    width: int,
    height: int,
    samples_per_segment: int = DEFAULT_SAMPLES_PER_SEGMENT,
) -> BinaryMask:
    """Union of all patch footprints, intersected with the face region.

    Overlapping patches merge (union, not parity); pixels outside face_mask
    never turn on, which keeps ink off the background and off excluded
    features regardless of where centers wander.
    """
    if (face_mask.width, face_mask.height) != (width, height):
        raise DimensionMismatch(
            f"face mask is {face_mask.width}x{face_mask.height}, "
            f"expected {width}x{height}"
        )
    union = np.zeros((height, width), dtype=np.uint8)
    for i in range(genome.patch_count):
        union |= patch_mask(genome, i, width, height, samples_per_segment).bits
    return BinaryMask(width=width, height=height, bits=union & face_mask.bits)


# --- genome documents ----------------------------------------------------------

def genome_to_dict(genome: PatchGenome) -> dict:
    return {
        "m": genome.patch_count,
        "n": genome.vertex_count,
        "centers": genome.centers.tolist(),
        "radii": genome.radii.tolist(),
    }


def genome_from_dict(doc) -> PatchGenome:
    if not isinstance(doc, dict):
        raise GenomeFormatError(f"genome document must be an object, got {type(doc).__name__}")
    missing = {"m", "n", "centers", "radii"} - set(doc)
    if missing:
        raise GenomeFormatError(f"genome document missing fields: {sorted(missing)}")
    try:
        m = int(doc["m"])
        n = int(doc["n"])
        genome = PatchGenome(centers=doc["centers"], radii=doc["radii"])
    except GenomeFormatError:
        raise
    except (TypeError, ValueError) as exc:
        raise GenomeFormatError(f"malformed genome document: {exc}") from exc
    if genome.patch_count != m or genome.vertex_count != n:
        raise GenomeFormatError(
            f"declared m={m}, n={n} but arrays are "
            f"({genome.patch_count}, {genome.vertex_count})"
        )
    return genome


def save_genome(genome: PatchGenome, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(genome_to_dict(genome), fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_genome(path) -> PatchGenome:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise GenomeFormatError(f"{path} is not valid JSON: {exc}") from exc
    return genome_from_dict(doc)
