"""Face-mask extraction from 81 facial landmarks.

The mask is the convex hull of all 81 points with the eye and outer-mouth
polygons cleared, so downstream patch placement can cover skin but never
the features a recognizer (or wearer) needs unobstructed.

Landmark detection itself is an external concern: detectors ship as native
models that have no place in this package, so the extractor consumes their
output as a JSON sidecar and any 81-point detector can be wired in by
writing one. The layout is the common 68-contour-plus-13-forehead scheme:

    0-16  jaw          17-21 right brow    22-26 left brow
    27-35 nose         36-41 right eye     42-47 left eye
    48-59 outer mouth  60-67 inner mouth   68-80 forehead

Sidecar format: {"points": [[x, y], ...]} with exactly 81 entries, or
{"points": null} / {"points": []} when the detector found no face. The
subsets actually used are echoed into <mask>.meta.json next to the output
so the convention is auditable after the fact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import LandmarkError, NoFaceDetected
from .images import load_image, save_mask

POINT_COUNT = 81
RIGHT_EYE = tuple(range(36, 42))
LEFT_EYE = tuple(range(42, 48))
OUTER_MOUTH = tuple(range(48, 60))
MODEL_NAME = "81-point (68 contour + 13 forehead)"


def default_sidecar(image_path) -> Path:
    return Path(str(image_path) + ".landmarks.json")


def load_points(path) -> list[tuple[float, float]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise LandmarkError(f"cannot read landmark file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise LandmarkError(f"landmark file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "points" not in doc:
        raise LandmarkError(f"landmark file {path} needs a 'points' field")
    points = doc["points"]
    if points is None or points == []:
        raise NoFaceDetected(f"landmark file {path} reports no face")
    if not isinstance(points, list) or len(points) != POINT_COUNT:
        raise LandmarkError(
            f"expected {POINT_COUNT} landmark points, got "
            f"{len(points) if isinstance(points, list) else type(points).__name__}"
        )
    try:
        return [(float(x), float(y)) for x, y in points]
    except (TypeError, ValueError) as exc:
        raise LandmarkError(f"malformed landmark point in {path}: {exc}") from exc


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> list[tuple[float, float]]:
    """Andrew monotone chain, counterclockwise, no repeated endpoint."""
    pts = sorted(set((float(x), float(y)) for x, y in points))
    if len(pts) < 3:
        raise LandmarkError(f"hull needs >= 3 distinct points, got {len(pts)}")
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    # all points collinear collapses the chain to a zero-area segment
    if len(hull) < 3:
        raise LandmarkError("landmarks are collinear, face hull has no area")
    return hull


def build_mask(points, width: int, height: int) -> np.ndarray:
    """0/1 uint8 raster: hull filled, eye and outer-mouth polygons cleared."""
    canvas = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(canvas)
    draw.polygon(convex_hull(points), fill=255)
    for region in (RIGHT_EYE, LEFT_EYE, OUTER_MOUTH):
        draw.polygon([points[i] for i in region], fill=0)
    return (np.asarray(canvas) > 0).astype(np.uint8)


def extract_face_mask(image_path, out_path, landmarks_path=None) -> None:
    """Write the binary mask plus a .meta.json documenting the convention."""
    if landmarks_path is None:
        landmarks_path = default_sidecar(image_path)
    if not Path(landmarks_path).exists():
        raise LandmarkError(
            f"no landmark sidecar at {landmarks_path}; run a detector first"
        )
    pixels = load_image(image_path)
    points = load_points(landmarks_path)
    height, width = pixels.shape
    bits = build_mask(points, width, height)
    save_mask(bits, out_path)
    meta = {
        "source_image": str(image_path),
        "landmarks": str(landmarks_path),
        "width": width,
        "height": height,
        "landmark_model": MODEL_NAME,
        "hull_points": list(range(POINT_COUNT)),
        "excluded_regions": {
            "right_eye": list(RIGHT_EYE),
            "left_eye": list(LEFT_EYE),
            "outer_mouth": list(OUTER_MOUTH),
        },
        "mask_pixels": int(bits.sum()),
    }
    meta_path = Path(out_path).with_suffix(".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
