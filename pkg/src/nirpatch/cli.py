"""Command-line entry points.

    nirpatch attack        --config cfg.json [--out DIR --seed N --workers N
                           --oracle SPEC --deterministic]
    nirpatch render        --genome g.json --probe p.pgm --mask m.pgm
                           [--config cfg.json] --out adv.pgm
    nirpatch evaluate      --config cfg.json [...]
    nirpatch simulate-brdf [--config cfg.json] [--grid N --max-angle RAD
                           --roughness A --f0 F --diffuse D --intensity I] --out CSV
    nirpatch make-dataset  --count N [--width W --height H --seed S] --out DIR

Exit codes: 0 success, 1 usage or config error, 2 oracle failure, 3 attack
finished without success. Set NIRPF_LOG=DEBUG|INFO|WARNING|ERROR for stderr
logging. Every run echoes its fully merged config into the output directory
as effective_config.json; rerunning with that file reproduces the run.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import (
    AttackAborted,
    CorruptHeader,
    DimensionMismatch,
    GenomeFormatError,
    GrazingSingularity,
    InvalidAngle,
    InvalidConfig,
    InvalidLabel,
    InvalidRange,
    IoFailure,
    MaskNotBinary,
    OpenContour,
    PopulationTooSmall,
    ProtocolViolation,
    ScorerFailure,
    ScorerTimeout,
    ShapeMismatch,
    TooFewVertices,
    UnsupportedFormat,
)
from .geometry import compose_mask, load_genome, save_genome
from .harness import (
    ablation_lrm,
    ablation_shapes,
    evaluate_asr,
    load_manifest,
    make_toy_dataset,
    posture_sweep,
    write_dataset,
)
from .image import load_image, load_mask, save_image, save_mask
from .optimizer import run_attack
from .oracle import ExternalScorer, Gallery
from .reflectance import brdf, render_adversarial

log = logging.getLogger("nirpatch")

DEFAULT_POSTURE_ANGLES = [-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0]

_CONFIG_ERRORS = (
    InvalidConfig,
    GenomeFormatError,
    IoFailure,
    UnsupportedFormat,
    CorruptHeader,
    DimensionMismatch,
    MaskNotBinary,
    InvalidRange,
    InvalidLabel,
    InvalidAngle,
    GrazingSingularity,
    TooFewVertices,
    OpenContour,
    PopulationTooSmall,
    ShapeMismatch,
    ValueError,
)
_ORACLE_ERRORS = (ScorerFailure, ScorerTimeout, ProtocolViolation)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _setup_logging():
    name = os.environ.get("NIRPF_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def _common_flags(sp):
    sp.add_argument("--config", help="JSON config file")
    sp.add_argument("--out", help="output directory (overrides config)")
    sp.add_argument("--seed", type=int, help="overrides attack.seed")
    sp.add_argument("--workers", type=int, help="parallel oracle calls")
    sp.add_argument(
        "--oracle", help="builtin | exec:<command> | tcp:<host>:<port> (overrides config)"
    )
    sp.add_argument(
        "--deterministic",
        action="store_true",
        help="force sequential evaluation (workers=1)",
    )


def build_parser() -> _Parser:
    p = _Parser(prog="nirpatch", description="black-box NIR face-ID patch attacks")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("attack", help="run one attack and write its artifacts")
    _common_flags(a)
    a.set_defaults(func=cmd_attack)

    r = sub.add_parser("render", help="recompose an adversarial image from a genome")
    r.add_argument("--genome", required=True, help="genome JSON")
    r.add_argument("--probe", required=True, help="probe image")
    r.add_argument("--mask", required=True, help="face mask image (0/255)")
    r.add_argument("--config", help="JSON config for the reflectance section")
    r.add_argument("--out", required=True, help="output image (.pgm/.png)")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("evaluate", help="run an evaluation suite over a dataset")
    _common_flags(e)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate-brdf", help="tabulate the reflectance model")
    s.add_argument("--config", help="JSON config for the reflectance section")
    s.add_argument("--out", required=True, help="output CSV")
    s.add_argument("--grid", type=int, default=50, help="grid points per angle axis")
    s.add_argument(
        "--max-angle", type=float, default=1.2, help="sweep upper bound in radians"
    )
    s.add_argument("--roughness", type=float)
    s.add_argument("--f0", type=float)
    s.add_argument("--diffuse", type=float)
    s.add_argument("--intensity", type=float)
    s.set_defaults(func=cmd_simulate_brdf)

    d = sub.add_parser("make-dataset", help="synthesize a toy dataset on disk")
    d.add_argument("--count", type=int, required=True)
    d.add_argument("--width", type=int, default=64)
    d.add_argument("--height", type=int, default=64)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_make_dataset)

    return p


def _overrides_from_flags(args) -> dict:
    out: dict = {}
    if getattr(args, "out", None):
        out["out"] = args.out
    if getattr(args, "workers", None) is not None:
        out["workers"] = args.workers
    if getattr(args, "deterministic", False):
        out["workers"] = 1
    if getattr(args, "oracle", None):
        out["oracle"] = args.oracle
    if getattr(args, "seed", None) is not None:
        out["attack"] = {"seed": args.seed}
    return out


def _merged_doc(args) -> dict:
    user = cfgmod.load_config_file(args.config) if getattr(args, "config", None) else None
    doc = cfgmod.merge_config(user, _overrides_from_flags(args))
    return cfgmod.resolve_paths(doc, Path.cwd())


def _open_oracle(doc: dict, cfg):
    spec = doc.get("oracle", "builtin")
    if spec == "builtin":
        gallery = Gallery.load(cfgmod.require_path(doc, "gallery"))
        return gallery, None
    scorer = ExternalScorer(spec)
    return scorer, scorer


def _write_result_json(outdir: Path, result) -> None:
    payload = {
        "success": result.success,
        "stop_generation": result.stop_generation,
        "query_count": result.query_count,
        "generations_traced": len(result.fitness_trace),
        "best_fitness": result.fitness_trace[-1] if result.fitness_trace else None,
        "clean_probs": result.clean_scores.probs,
        "final_probs": result.final_scores.probs if result.final_scores else None,
    }
    with open(outdir / "result.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_attack(args) -> int:
    doc = _merged_doc(args)
    probe = load_image(cfgmod.require_path(doc, "probe"))
    face_mask = load_mask(cfgmod.require_path(doc, "face_mask"))
    cfg = cfgmod.build_attack_config(doc, probe.width, probe.height)
    outdir = Path(doc["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    cfgmod.write_effective_config(doc, outdir)
    oracle, to_close = _open_oracle(doc, cfg)
    try:
        result = run_attack(
            probe,
            face_mask,
            oracle,
            cfg,
            workers=int(doc.get("workers", 1)),
            trace_path=outdir / "fitness.csv",
        )
    finally:
        if to_close is not None:
            to_close.close()
    if result.best_genome is not None:
        save_genome(result.best_genome, outdir / "genome.json")
        mask = compose_mask(result.best_genome, face_mask, probe.width, probe.height)
        save_mask(mask, outdir / "patch_mask.pgm")
        adv = render_adversarial(probe, mask, cfg.reflectance, cfg.ink_render)
    else:
        adv = probe
    save_image(adv, outdir / "adversarial.pgm")
    _write_result_json(outdir, result)
    log.info(
        "attack %s: success=%s stop=%d queries=%d",
        cfg.mode,
        result.success,
        result.stop_generation,
        result.query_count,
    )
    return 0 if result.success else 3


def cmd_render(args) -> int:
    genome = load_genome(args.genome)
    probe = load_image(args.probe)
    face_mask = load_mask(args.mask)
    user = cfgmod.load_config_file(args.config) if args.config else None
    doc = cfgmod.merge_config(user, None)
    params = cfgmod.build_reflectance(doc)
    mask = compose_mask(genome, face_mask, probe.width, probe.height)
    adv = render_adversarial(probe, mask, params, doc["attack"]["ink_render"])
    save_image(adv, args.out)
    return 0


def _load_eval_dataset(doc: dict):
    if doc.get("toy_dataset"):
        spec = doc["toy_dataset"]
        try:
            return make_toy_dataset(
                int(spec["count"]),
                int(spec.get("width", 64)),
                int(spec.get("height", 64)),
                int(spec.get("seed", 0)),
            )
        except KeyError as exc:
            raise InvalidConfig(f"toy_dataset missing field {exc}") from exc
    if doc.get("dataset"):
        return load_manifest(doc["dataset"])
    raise InvalidConfig("evaluate needs either toy_dataset or dataset in the config")


def _write_report(report, outdir: Path, stem: str) -> None:
    report.write_csv(outdir / f"cases_{stem}.csv")


def cmd_evaluate(args) -> int:
    doc = _merged_doc(args)
    suite = doc.get("suite")
    if suite not in ("asr", "ablation-shapes", "ablation-lrm", "posture"):
        raise InvalidConfig(
            "suite must be one of asr, ablation-shapes, ablation-lrm, posture"
        )
    outdir = Path(doc["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    workers = int(doc.get("workers", 1))

    if suite == "posture":
        return _suite_posture(doc, outdir)

    gallery, cases = _load_eval_dataset(doc)
    if not doc["attack"].get("true_label") and cases:
        doc["attack"]["true_label"] = cases[0].true_label
    cfgmod.write_effective_config(doc, outdir)
    cfg = cfgmod.build_attack_config(doc, gallery.width, gallery.height)

    if suite == "asr":
        report = evaluate_asr(cases, gallery, cfg, workers=workers)
        _write_report(report, outdir, "asr")
        report.write_summary(outdir / "summary.json")
        log.info("asr=%s over %d attacked cases", report.asr, report.attacked)
    elif suite == "ablation-shapes":
        reports = ablation_shapes(cases, gallery, cfg, workers=workers)
        summary = {}
        for mode, report in reports.items():
            _write_report(report, outdir, mode)
            summary[mode] = report.summary_dict()
        with open(outdir / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:  # ablation-lrm
        reports = ablation_lrm(cases, gallery, cfg, workers=workers)
        summary = {}
        for variant, report in reports.items():
            _write_report(report, outdir, variant)
            summary[variant] = report.summary_dict()
        with open(outdir / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _suite_posture(doc: dict, outdir: Path) -> int:
    if not doc.get("genome"):
        raise InvalidConfig("posture suite requires a genome path in the config")
    genome = load_genome(doc["genome"])
    probe = load_image(cfgmod.require_path(doc, "probe"))
    face_mask = load_mask(cfgmod.require_path(doc, "face_mask"))
    gallery = Gallery.load(cfgmod.require_path(doc, "gallery"))
    cfgmod.write_effective_config(doc, outdir)
    cfg = cfgmod.build_attack_config(doc, probe.width, probe.height)
    angles = doc.get("angles", DEFAULT_POSTURE_ANGLES)
    result = posture_sweep(genome, probe, face_mask, gallery, cfg, angles)
    with open(outdir / "posture.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["angle_degrees", "success"])
        for angle, ok in zip(result.angles, result.successes):
            writer.writerow([angle, int(ok)])
    with open(outdir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"retention": result.retention, "angles": list(result.angles)},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    return 0


def cmd_simulate_brdf(args) -> int:
    user = cfgmod.load_config_file(args.config) if args.config else None
    doc = cfgmod.merge_config(user, None)
    params = cfgmod.build_reflectance(doc)
    for name in ("roughness", "f0", "diffuse", "intensity"):
        value = getattr(args, name)
        if value is not None:
            try:
                params = replace(params, **{name: value})
            except ValueError as exc:
                raise InvalidConfig(str(exc)) from exc
    if args.grid < 1:
        raise InvalidConfig(f"grid must be >= 1, got {args.grid}")
    if not 0.0 <= args.max_angle < math.pi / 2:
        raise InvalidConfig(
            f"max-angle must be in [0, pi/2), got {args.max_angle}"
        )
    angles = np.linspace(0.0, args.max_angle, args.grid)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["light_angle", "view_angle", "brdf"])
        for la in angles:
            for va in angles:
                value = brdf(replace(params, light_angle=float(la), view_angle=float(va)))
                writer.writerow([f"{la:.9g}", f"{va:.9g}", f"{value:.12g}"])
    return 0


def cmd_make_dataset(args) -> int:
    gallery, cases = make_toy_dataset(args.count, args.width, args.height, args.seed)
    write_dataset(gallery, cases, args.out)
    print(f"wrote {len(cases)} cases and {len(gallery.labels)} identities to {args.out}")
    return 0


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except AttackAborted as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return 2
    except _ORACLE_ERRORS as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return 2
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
