"""Independent reference implementations used to check the library.

The point-in-polygon oracle here deliberately avoids the library's scanline
bucketing: it evaluates the even-odd ray cast for every pixel directly,
broadcasting over edges. Both use the same half-open crossing rule
((ya > y) != (yb > y), crossing strictly right of the pixel center), which
is the convention the rasterizer documents.
"""

import numpy as np

from nirpatch.geometry import GenomeBounds, PatchGenome


def point_inside(px, py, points):
    """Scalar even-odd ray cast toward +x. Pure Python, one pixel at a time."""
    inside = False
    for k in range(len(points) - 1):
        xa, ya = points[k]
        xb, yb = points[k + 1]
        if (ya > py) == (yb > py):
            continue
        x_cross = xa + (py - ya) * (xb - xa) / (yb - ya)
        if x_cross > px:
            inside = not inside
    return inside


def pnpoly_bits(points, width, height):
    """Even-odd fill oracle: per-pixel ray cast, no scanline sorting.

    Builds the full (height, width, edges) crossing tensor and reduces it,
    so any disagreement with the library is a real convention mismatch.
    """
    pts = np.asarray(points, dtype=np.float64)
    xa, ya = pts[:-1, 0], pts[:-1, 1]
    xb, yb = pts[1:, 0], pts[1:, 1]
    py = np.arange(height, dtype=np.float64)[:, None, None]
    px = np.arange(width, dtype=np.float64)[None, :, None]
    straddle = (ya > py) != (yb > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = xa + (py - ya) * (xb - xa) / (yb - ya)
    crossings = (straddle & (x_cross > px)).sum(axis=2)
    return (crossings & 1).astype(np.uint8)


def random_genome(rng, m, n, bounds: GenomeBounds) -> PatchGenome:
    """Uniformly random feasible genome from a numpy Generator."""
    centers = np.column_stack(
        [
            rng.uniform(bounds.x_min, bounds.x_max, size=m),
            rng.uniform(bounds.y_min, bounds.y_max, size=m),
        ]
    )
    radii = rng.uniform(bounds.radius_min, bounds.radius_max, size=(m, n))
    return PatchGenome(centers=centers, radii=radii)
