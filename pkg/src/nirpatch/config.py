"""Run configuration: JSON documents merged with CLI flag overrides.

A config document has up to five sections; every field has a default, so the
minimal attack config is just the paths and a true label. The fully merged
document is echoed into the output directory as effective_config.json, and
feeding that file back reproduces the run byte for byte.

    {
      "attack": {
        "mode": "dodging", "true_label": "id000", "target_label": null,
        "patches": 4, "vertices": 8, "population": 40, "max_iters": 200,
        "mutation_factor": 0.5, "crossover_rate": 0.9, "seed": 0,
        "radius_min": 2.0, "radius_max": 20.0,
        "optimize": "joint", "ink_render": "lrm", "temperature": 0.05,
        "fixed_centers": null
      },
      "reflectance": { "intensity": 1.0, "roughness": 0.35, "f0": 0.04,
                       "diffuse": 0.6, "light_angle": 0.1, "view_angle": 0.1,
                       "ink_absorption": 0.85 },
      "paths": { "probe": "...", "face_mask": "...", "gallery": "..." },
      "oracle": "builtin",        // or "exec:<command>" / "tcp:<host>:<port>"
      "workers": 1,
      "out": "out"
    }

Evaluate runs add "suite" plus either "toy_dataset" ({count,width,height,seed})
or "dataset" (path to a manifest.json), and posture runs add "genome" and
"angles".
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import InvalidConfig
from .geometry import GenomeBounds
from .optimizer import AttackConfig
from .reflectance import ReflectanceParams

DEFAULT_DOC = {
    "attack": {
        "mode": "dodging",
        "true_label": None,
        "target_label": None,
        "patches": 4,
        "vertices": 8,
        "population": 40,
        "max_iters": 200,
        "mutation_factor": 0.5,
        "crossover_rate": 0.9,
        "seed": 0,
        "radius_min": 2.0,
        "radius_max": 20.0,
        "optimize": "joint",
        "ink_render": "lrm",
        "temperature": 0.05,
        "fixed_centers": None,
    },
    "reflectance": {
        "intensity": 1.0,
        "roughness": 0.35,
        "f0": 0.04,
        "diffuse": 0.6,
        "light_angle": 0.1,
        "view_angle": 0.1,
        "ink_absorption": 0.85,
    },
    "paths": {},
    "oracle": "builtin",
    "workers": 1,
    "out": "out",
}

_SECTIONS = ("attack", "reflectance", "paths")


def load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidConfig(f"config {path} must be a JSON object")
    return doc


def merge_config(user_doc: dict | None, overrides: dict | None = None) -> dict:
    """Defaults <- config file <- CLI flags, one section at a time."""
    doc = copy.deepcopy(DEFAULT_DOC)
    for source in (user_doc, overrides):
        if not source:
            continue
        for key, value in source.items():
            if key in _SECTIONS:
                if not isinstance(value, dict):
                    raise InvalidConfig(f"config section {key!r} must be an object")
                doc[key].update(value)
            else:
                doc[key] = value
    return doc


def _section_fields(doc: dict, section: str, allowed) -> dict:
    data = doc.get(section, {})
    unknown = set(data) - set(allowed)
    if unknown:
        raise InvalidConfig(f"unknown {section} fields: {sorted(unknown)}")
    return data


def build_reflectance(doc: dict) -> ReflectanceParams:
    fields = _section_fields(doc, "reflectance", DEFAULT_DOC["reflectance"])
    try:
        return ReflectanceParams(**fields)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad reflectance config: {exc}") from exc


def build_attack_config(doc: dict, image_width: int, image_height: int) -> AttackConfig:
    """Materialize an AttackConfig, deriving center bounds from the probe."""
    fields = dict(_section_fields(doc, "attack", DEFAULT_DOC["attack"]))
    if not fields.get("true_label"):
        raise InvalidConfig("attack.true_label is required")
    radius_min = float(fields.pop("radius_min", 2.0))
    radius_max = float(fields.pop("radius_max", 20.0))
    try:
        bounds = GenomeBounds.for_image(image_width, image_height, radius_min, radius_max)
        fixed = fields.pop("fixed_centers", None)
        cfg = AttackConfig(
            bounds=bounds,
            reflectance=build_reflectance(doc),
            fixed_centers=tuple(tuple(c) for c in fixed) if fixed else None,
            **fields,
        )
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad attack config: {exc}") from exc
    return cfg


def require_path(doc: dict, name: str) -> Path:
    paths = doc.get("paths", {})
    if name not in paths or not paths[name]:
        raise InvalidConfig(f"paths.{name} is required")
    return Path(paths[name])


def resolve_paths(doc: dict, base: Path) -> dict:
    """Make every paths entry absolute so the echoed config replays from
    any working directory."""
    out = copy.deepcopy(doc)
    for key, value in list(out.get("paths", {}).items()):
        if value:
            out["paths"][key] = str((base / value).resolve())
    for key in ("out", "dataset", "genome"):
        if out.get(key):
            out[key] = str((base / out[key]).resolve())
    return out


def write_effective_config(doc: dict, outdir: Path) -> None:
    with open(outdir / "effective_config.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
