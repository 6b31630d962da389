"""Experiment harness: synthetic datasets, attack-success-rate sweeps,
ablations, and pose-robustness checks.

The toy dataset exists so every experiment runs hermetically: identities are
distinct band-limited sinusoid-plus-blob textures over a shared base
pattern, probes are the gallery image plus mild sensor noise, and the face
region is an ellipse covering roughly half the frame. Generation verifies
that every clean probe is recognized as its own identity and reseeds itself
until that holds, so a reported success always reflects the attack rather
than a broken dataset.

ASR counts only cases the attack actually had to fight: cases whose clean
probe already fooled the oracle (pre-success) are excluded from both
numerator and denominator. A case whose oracle dies mid-run is marked failed
and stays in the denominator.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import AttackAborted, InvalidRange
from .geometry import PatchGenome, compose_mask
from .image import BinaryMask, NirImage
from .oracle import BuiltinScorer, Gallery
from .optimizer import AttackConfig, AttackResult, attack_succeeds, run_attack
from .reflectance import render_adversarial
from .rng import RngStream

# harness-level stream ids sit far above any population index
_STREAM_GALLERY = 1_000_000
_STREAM_PROBE = 2_000_000
_STREAM_CENTERS_OFFSET = 0  # fixed-center draws use population as offset

MIN_FACE_COVERAGE = 0.20


@dataclass(frozen=True)
class ToyCase:
    case_id: str
    probe: NirImage
    face_mask: BinaryMask
    true_label: str


@dataclass
class CaseRecord:
    case_id: str
    mode: str
    success: bool
    queries: int
    stop_generation: int
    clean_true_prob: float
    final_true_prob: float
    pre_success: bool
    error: str | None = None


@dataclass
class ExperimentReport:
    records: list
    seed: int
    config_hash: str
    extra: dict

    @property
    def total(self) -> int:
        return len(self.records)

    @property
    def attacked(self) -> int:
        return sum(1 for r in self.records if not r.pre_success)

    @property
    def successes(self) -> int:
        return sum(1 for r in self.records if not r.pre_success and r.success)

    @property
    def asr(self) -> float | None:
        """Successes over attacked cases; None when nothing was attacked."""
        if self.attacked == 0:
            return None
        return self.successes / self.attacked

    def summary_dict(self) -> dict:
        out = {
            "total": self.total,
            "attacked": self.attacked,
            "successes": self.successes,
            "pre_success": self.total - self.attacked,
            "seed": self.seed,
            "config_hash": self.config_hash,
        }
        if self.asr is not None:
            out["asr"] = self.asr
        out.update(self.extra)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "case_id",
                    "mode",
                    "success",
                    "queries",
                    "stop_generation",
                    "clean_true_prob",
                    "final_true_prob",
                    "pre_success",
                    "error",
                ]
            )
            for r in sorted(self.records, key=lambda rec: rec.case_id):
                writer.writerow(
                    [
                        r.case_id,
                        r.mode,
                        int(r.success),
                        r.queries,
                        r.stop_generation,
                        f"{r.clean_true_prob:.12g}",
                        f"{r.final_true_prob:.12g}",
                        int(r.pre_success),
                        r.error or "",
                    ]
                )

    def write_summary(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def config_hash(cfg: AttackConfig) -> str:
    """Stable short fingerprint of an attack config for report metadata."""
    blob = repr(cfg).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


# --- toy dataset -----------------------------------------------------------------

def _identity_texture(width, height, face: BinaryMask, stream: RngStream) -> np.ndarray:
    """One identity's gallery texture.

    The background is shared by every identity; the identity-specific
    sinusoid mix and blobs live only inside the face region. That mirrors
    enrolled face crops (same rig, same backdrop) and keeps the recognition
    signal where a physical patch could actually reach it."""
    u = np.arange(width) / width
    v = np.arange(height) / height
    uu, vv = np.meshgrid(u, v)
    base = 0.5 + 0.14 * np.sin(2.0 * np.pi * (uu + vv))
    # mid-frequency bands spread identity evidence across the whole face, so
    # random patch layouts rarely cover it all and placement has to be earned
    fx = stream.uniform(4.0, 9.0)
    fy = stream.uniform(4.0, 9.0)
    px = stream.uniform(0.0, 1.0)
    py = stream.uniform(0.0, 1.0)
    tex = 0.34 * np.sin(2.0 * np.pi * (fx * uu + px)) * np.sin(2.0 * np.pi * (fy * vv + py))
    for _ in range(2):
        cx = stream.uniform(0.30, 0.70)
        cy = stream.uniform(0.30, 0.70)
        sigma = stream.uniform(0.06, 0.14)
        amp = stream.uniform(0.10, 0.22) * (1.0 if stream.uniform(0.0, 1.0) < 0.5 else -1.0)
        tex = tex + amp * np.exp(-(((uu - cx) ** 2 + (vv - cy) ** 2) / (2.0 * sigma**2)))
    return np.clip(base + face.bits * tex, 0.05, 0.95)


def _elliptical_face_mask(width, height) -> BinaryMask:
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    a, b = 0.38 * width, 0.44 * height
    xs = np.arange(width) - cx
    ys = np.arange(height) - cy
    inside = (xs[None, :] / a) ** 2 + (ys[:, None] / b) ** 2 <= 1.0
    return BinaryMask(width=width, height=height, bits=inside.astype(np.uint8))


def make_toy_dataset(count: int, width: int, height: int, seed: int):
    """Synthesize (gallery, cases). Every clean probe is guaranteed to rank
    its own identity top-1; generation reseeds until that holds."""
    if count < 2:
        raise InvalidRange(f"toy dataset needs >= 2 identities, got {count}")
    if width < 8 or height < 8:
        raise InvalidRange(f"toy images must be at least 8x8, got {width}x{height}")
    face_mask = _elliptical_face_mask(width, height)
    if face_mask.count() < MIN_FACE_COVERAGE * width * height:
        raise InvalidRange("face mask below minimum coverage")  # unreachable by construction
    for attempt in range(32):
        eff_seed = seed + 7919 * attempt
        labels = [f"id{i:03d}" for i in range(count)]
        entries = []
        probes = []
        for i in range(count):
            tex = _identity_texture(
                width, height, face_mask, RngStream(eff_seed, _STREAM_GALLERY + i)
            )
            entries.append((labels[i], NirImage.from_array(tex)))
            noise = RngStream(eff_seed, _STREAM_PROBE + i).normal(0.0, 0.02, (height, width))
            probes.append(NirImage.from_array(np.clip(tex + noise, 0.0, 1.0)))
        gallery = Gallery(entries=tuple(entries))
        scorer = BuiltinScorer(gallery)
        if all(scorer.score(probes[i]).top1() == labels[i] for i in range(count)):
            cases = [
                ToyCase(
                    case_id=f"case{i:03d}",
                    probe=probes[i],
                    face_mask=face_mask,
                    true_label=labels[i],
                )
                for i in range(count)
            ]
            return gallery, cases
    raise InvalidRange(
        f"could not synthesize a cleanly separable dataset for count={count}, seed={seed}"
    )


def write_dataset(gallery: Gallery, cases, outdir) -> None:
    """Lay a dataset out on disk: gallery/<label>.pgm, cases/<id>_{probe,mask}.pgm,
    and a manifest.json tying them together with true labels."""
    from pathlib import Path

    from .image import save_image, save_mask

    root = Path(outdir)
    (root / "gallery").mkdir(parents=True, exist_ok=True)
    (root / "cases").mkdir(parents=True, exist_ok=True)
    for label, img in gallery.entries:
        save_image(img, root / "gallery" / f"{label}.pgm")
    manifest = {"gallery": "gallery", "cases": []}
    for case in cases:
        probe_rel = f"cases/{case.case_id}_probe.pgm"
        mask_rel = f"cases/{case.case_id}_mask.pgm"
        save_image(case.probe, root / probe_rel)
        save_mask(case.face_mask, root / mask_rel)
        manifest["cases"].append(
            {
                "case_id": case.case_id,
                "probe": probe_rel,
                "face_mask": mask_rel,
                "true_label": case.true_label,
            }
        )
    with open(root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_manifest(path):
    """Inverse of write_dataset: returns (gallery, cases); paths resolve
    relative to the manifest file."""
    from pathlib import Path

    from .errors import InvalidConfig
    from .image import load_image, load_mask

    manifest_path = Path(path)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InvalidConfig(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"manifest {path} is not valid JSON: {exc}") from exc
    root = manifest_path.parent
    try:
        gallery = Gallery.load(root / doc["gallery"])
        cases = [
            ToyCase(
                case_id=str(entry["case_id"]),
                probe=load_image(root / entry["probe"]),
                face_mask=load_mask(root / entry["face_mask"]),
                true_label=str(entry["true_label"]),
            )
            for entry in doc["cases"]
        ]
    except KeyError as exc:
        raise InvalidConfig(f"manifest {path} missing field {exc}") from exc
    return gallery, cases


# --- ASR sweep -------------------------------------------------------------------

def _final_true_prob(result: AttackResult, true_label: str) -> float:
    scores = result.final_scores or result.clean_scores
    # an abort before the clean probe was scored leaves no scores at all
    if scores is None:
        return float("nan")
    return scores[true_label]


def _record_from_result(case, cfg, result: AttackResult, error=None) -> CaseRecord:
    clean = result.clean_scores
    return CaseRecord(
        case_id=case.case_id,
        mode=cfg.mode,
        success=result.success,
        queries=result.query_count,
        stop_generation=result.stop_generation,
        clean_true_prob=clean[case.true_label] if clean is not None else float("nan"),
        final_true_prob=_final_true_prob(result, case.true_label),
        pre_success=result.stop_generation < 0 and result.success,
        error=error,
    )


def evaluate_asr(
    dataset, gallery: Gallery, cfg: AttackConfig, *, workers: int = 1
) -> ExperimentReport:
    """Attack every case; case i runs with seed cfg.seed + i so cases are
    independent but the sweep is reproducible."""
    records = []
    for idx, case in enumerate(dataset):
        case_cfg = replace(cfg, true_label=case.true_label, seed=cfg.seed + idx)
        try:
            result = run_attack(
                case.probe, case.face_mask, gallery, case_cfg, workers=workers
            )
            records.append(_record_from_result(case, case_cfg, result))
        except AttackAborted as exc:
            partial = exc.partial_result
            if partial is not None:
                rec = _record_from_result(case, case_cfg, partial, error=str(exc))
                rec.success = False
                records.append(rec)
            else:
                records.append(
                    CaseRecord(
                        case_id=case.case_id,
                        mode=case_cfg.mode,
                        success=False,
                        queries=0,
                        stop_generation=0,
                        clean_true_prob=float("nan"),
                        final_true_prob=float("nan"),
                        pre_success=False,
                        error=str(exc),
                    )
                )
    return ExperimentReport(
        records=records, seed=cfg.seed, config_hash=config_hash(cfg), extra={}
    )


# --- ablations -------------------------------------------------------------------

def fixed_centers_for(cfg: AttackConfig, width: int, height: int) -> tuple:
    """Feasible random centers for shape-only runs, drawn from the first
    stream id past the population so they never collide with member draws."""
    from .geometry import GenomeBounds

    bounds = cfg.bounds or GenomeBounds.for_image(width, height)
    stream = RngStream(cfg.seed, cfg.population + _STREAM_CENTERS_OFFSET)
    centers = []
    for _ in range(cfg.patches):
        x = stream.uniform(bounds.x_min, bounds.x_max)
        y = stream.uniform(bounds.y_min, bounds.y_max)
        centers.append((x, y))
    return tuple(centers)


def ablation_shapes(dataset, gallery: Gallery, cfg: AttackConfig, *, workers: int = 1):
    """Run the sweep three ways: joint, position-only (fixed round shape),
    and shape-only (frozen random centers). Returns {mode: report}."""
    reports = {}
    for mode in ("joint", "position", "shape"):
        changes = {"optimize": mode}
        if mode == "shape":
            changes["fixed_centers"] = fixed_centers_for(cfg, gallery.width, gallery.height)
        mode_cfg = replace(cfg, **changes)
        report = evaluate_asr(dataset, gallery, mode_cfg, workers=workers)
        report.extra["optimize"] = mode
        reports[mode] = report
    return reports


def ablation_lrm(dataset, gallery: Gallery, cfg: AttackConfig, *, workers: int = 1):
    """Train with and without the light-reflection model, then judge both
    under reflection-model rendering (the deployable condition).

    The zeroing variant optimizes against hard-blacked patches; its best
    genome is then re-rendered with the reflection model and re-scored, so
    the comparison isolates how much modeling the ink's actual reflectance
    matters. Pre-success cases are excluded from the held-out tally too.
    """
    scorer = BuiltinScorer(gallery, cfg.temperature)
    out = {}
    for variant, render_mode in (("with_lrm", "lrm"), ("zeroing", "zero")):
        v_cfg = replace(cfg, ink_render=render_mode)
        records = []
        eval_attacked = 0
        eval_successes = 0
        for idx, case in enumerate(dataset):
            case_cfg = replace(v_cfg, true_label=case.true_label, seed=cfg.seed + idx)
            try:
                result = run_attack(
                    case.probe, case.face_mask, gallery, case_cfg, workers=workers
                )
            except AttackAborted as exc:
                records.append(
                    CaseRecord(
                        case_id=case.case_id,
                        mode=case_cfg.mode,
                        success=False,
                        queries=0,
                        stop_generation=0,
                        clean_true_prob=float("nan"),
                        final_true_prob=float("nan"),
                        pre_success=False,
                        error=str(exc),
                    )
                )
                eval_attacked += 1
                continue
            records.append(_record_from_result(case, case_cfg, result))
            if result.stop_generation < 0:
                continue
            eval_attacked += 1
            mask = compose_mask(
                result.best_genome, case.face_mask, case.probe.width, case.probe.height
            )
            adv = render_adversarial(case.probe, mask, cfg.reflectance, "lrm")
            eval_successes += attack_succeeds(scorer.score(adv), case_cfg)
        report = ExperimentReport(
            records=records,
            seed=cfg.seed,
            config_hash=config_hash(v_cfg),
            extra={
                "trained_with": variant,
                "lrm_eval_attacked": eval_attacked,
                "lrm_eval_successes": eval_successes,
            },
        )
        if eval_attacked:
            report.extra["lrm_eval_asr"] = eval_successes / eval_attacked
        out[variant] = report
    return out


# --- posture sweep ----------------------------------------------------------------

@dataclass
class PostureResult:
    angles: list
    successes: list

    @property
    def retention(self) -> float:
        if not self.angles:
            return 0.0
        return sum(self.successes) / len(self.angles)


def rotate_image(img: NirImage, degrees: float) -> NirImage:
    """Rotate about the image center, bilinear, zero fill; 0 degrees is the
    bit-exact identity."""
    if degrees % 360.0 == 0.0:
        return NirImage(width=img.width, height=img.height, data=img.data)
    rotated = ndimage.rotate(
        img.data, degrees, reshape=False, order=1, mode="constant", cval=0.0,
        prefilter=False,
    )
    return NirImage.from_array(np.clip(rotated, 0.0, 1.0))


def rotate_mask(mask: BinaryMask, degrees: float) -> BinaryMask:
    """Rotate with nearest-neighbor so the mask stays strictly 0/1."""
    if degrees % 360.0 == 0.0:
        return BinaryMask(width=mask.width, height=mask.height, bits=mask.bits)
    rotated = ndimage.rotate(
        mask.bits, degrees, reshape=False, order=0, mode="constant", cval=0,
        prefilter=False,
    )
    return BinaryMask.from_array((rotated > 0).astype(np.uint8))


def posture_sweep(
    genome: PatchGenome,
    probe: NirImage,
    face_mask: BinaryMask,
    gallery,
    cfg: AttackConfig,
    angles,
) -> PostureResult:
    """Re-evaluate a found genome while the subject rotates: probe and face
    mask turn together, the genome stays in camera coordinates, and each
    recomposed image is scored once. Angle 0 reproduces the original
    attack outcome exactly."""
    scorer = gallery if hasattr(gallery, "score") else BuiltinScorer(gallery, cfg.temperature)
    successes = []
    for angle in angles:
        rp = rotate_image(probe, angle)
        rm = rotate_mask(face_mask, angle)
        mask = compose_mask(genome, rm, probe.width, probe.height)
        adv = render_adversarial(rp, mask, cfg.reflectance, cfg.ink_render)
        successes.append(attack_succeeds(scorer.score(adv), cfg))
    return PostureResult(angles=list(angles), successes=successes)
