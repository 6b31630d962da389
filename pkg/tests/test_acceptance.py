"""Acceptance gate: one test per primary verification criterion.

Each test prints a single one-line verdict (scan the -s output for
"ACCEPTANCE[") and enforces its own wall-clock budget. Checks inside a
criterion accumulate into a problem list so the verdict line always prints
before the assert fires.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import simpson

import nirpatch.optimizer as opt
from nirpatch.geometry import (
    GenomeBounds,
    PatchGenome,
    apply_constraints,
    bspline_contour,
    compose_mask,
    compute_vertices,
    genome_within_bounds,
    patch_mask,
    rasterize,
)
from nirpatch.harness import ablation_lrm, ablation_shapes, evaluate_asr, make_toy_dataset, posture_sweep
from nirpatch.image import BinaryMask, NirImage
from nirpatch.optimizer import AttackConfig, FitnessContext, fitness, run_attack
from nirpatch.oracle import BuiltinScorer
from nirpatch.reflectance import ReflectanceParams, apply_ink, beckmann_d, fresnel_f, ink_scale
from oracles import pnpoly_bits

# Frozen fixtures. The end-to-end calibration run (10-case 64x64 dataset,
# seed 1, stock attack settings) scored ASR 1.0 with strict true-probability
# reduction on 10/10 cases; the floor below leaves one case of slack for
# numeric drift while staying above the 0.7 design target. The posture
# fixtures are cases 0-2 of that same dataset, all of which retained their
# success at every sweep angle when frozen.
E2E_ASR_FLOOR = 0.9
POSTURE_RETENTION_FLOOR = 1.0
TINY_GRID_MARGIN = 0.02


def _verdict(name, problems, elapsed, budget):
    ok = not problems and elapsed < budget
    print(f"\nACCEPTANCE[{name}]: {'PASS' if ok else 'FAIL'} "
          f"({elapsed:.1f}s, budget {budget:.0f}s)")
    if elapsed >= budget:
        problems = problems + [f"runtime {elapsed:.1f}s exceeds budget {budget:.0f}s"]
    assert not problems, "; ".join(problems)


@pytest.fixture(scope="module")
def e2e_dataset():
    return make_toy_dataset(10, 64, 64, seed=1)


def test_geometry_suite():
    t0 = time.monotonic()
    problems = []
    rng = np.random.default_rng(2024)
    bounds = GenomeBounds.for_image(64, 64)
    _, cases = make_toy_dataset(2, 64, 64, seed=3)
    face = cases[0].face_mask
    yy, xx = np.mgrid[0:64, 0:64]

    reach = bounds.radius_max + 0.75
    for _ in range(1000):
        m = int(rng.integers(1, 5))
        n = int(rng.integers(3, 9))
        raw = PatchGenome(
            centers=rng.uniform(-30.0, 94.0, size=(m, 2)),
            radii=rng.uniform(0.0, 40.0, size=(m, n)),
        )
        genome = apply_constraints(raw, bounds)
        if not genome_within_bounds(genome, bounds):
            problems.append("constrained genome escaped bounds")
            break
        for i in range(m):
            err = bspline_contour(compute_vertices(genome, i)).closure_error()
            if err > 1e-9:
                problems.append(f"closure {err:.3e} exceeds 1e-9")
            bits = patch_mask(genome, i, 64, 64).bits
            cx, cy = genome.centers[i]
            dist = np.hypot(xx - cx, yy - cy)[bits.astype(bool)]
            if dist.size and dist.max() > reach:
                problems.append(
                    f"pixel {dist.max():.3f} from center exceeds {reach}"
                )
        composed = compose_mask(genome, face, 64, 64)
        if (composed.bits & ~face.bits).any():
            problems.append("compose output leaked outside the face mask")
        if problems:
            break

    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(3, 9))
        genome = apply_constraints(
            PatchGenome(
                centers=rng.uniform(0.0, 64.0, size=(1, 2)),
                radii=rng.uniform(0.0, 40.0, size=(1, n)),
            ),
            bounds,
        )
        contour = bspline_contour(compute_vertices(genome, 0))
        mine = rasterize(contour, 64, 64).bits
        reference = pnpoly_bits(contour.points, 64, 64)
        mismatches += int(np.count_nonzero(mine != reference))
    if mismatches:
        problems.append(f"{mismatches} pixels disagree with the ray-cast oracle")

    _verdict("geometry", problems, time.monotonic() - t0, 30.0)


def test_reflectance_suite():
    t0 = time.monotonic()
    problems = []

    for f0 in (0.0, 0.04, 0.2, 1.0):
        if abs(fresnel_f(0.0, f0) - f0) > 1e-12:
            problems.append(f"F(0) != f0 for f0={f0}")
        if abs(fresnel_f(math.pi / 2, f0) - 1.0) > 1e-12:
            problems.append(f"F(pi/2) != 1 for f0={f0}")

    theta = np.linspace(0.0, math.pi / 2 - 1e-9, 20001)
    for alpha in (0.1, 0.3, 0.6):
        density = np.array([beckmann_d(t, alpha) for t in theta])
        integral = 2.0 * math.pi * simpson(
            density * np.cos(theta) * np.sin(theta), x=theta
        )
        if abs(integral - 1.0) > 0.01:
            problems.append(f"Beckmann integral {integral:.6f} off for alpha={alpha}")

    unit = ReflectanceParams(
        intensity=1.0, roughness=0.35, f0=0.0, diffuse=1.0,
        light_angle=0.0, view_angle=0.0, ink_absorption=0.0,
    )
    if ink_scale(unit) != 1.0:
        problems.append("unit parameters do not give ink scale exactly 1")
    rng = np.random.default_rng(99)
    img = NirImage.from_array(rng.uniform(0.0, 1.0, size=(16, 16)))
    mask = BinaryMask.from_array((rng.uniform(size=(16, 16)) < 0.4).astype(np.uint8))
    if not np.array_equal(apply_ink(img, mask, unit).data, img.data):
        problems.append("identity ink application is not bit-exact")

    for k in range(200):
        img = NirImage.from_array(rng.uniform(0.0, 1.0, size=(12, 12)))
        mask = BinaryMask.from_array(
            (rng.uniform(size=(12, 12)) < rng.uniform(0.1, 0.9)).astype(np.uint8)
        )
        params = ReflectanceParams(
            intensity=rng.uniform(0.2, 1.0),
            roughness=rng.uniform(0.05, 1.0),
            f0=rng.uniform(0.0, 0.2),
            diffuse=rng.uniform(0.0, 1.0),
            light_angle=rng.uniform(0.0, 1.2),
            view_angle=rng.uniform(0.0, 1.2),
            ink_absorption=rng.uniform(0.0, 1.0),
        )
        out = apply_ink(img, mask, params)
        if out.data.min() < 0.0 or out.data.max() > 1.0:
            problems.append(f"case {k}: output escaped [0, 1]")
            break
        untouched = ~mask.bits.astype(bool)
        if not np.array_equal(out.data[untouched], img.data[untouched]):
            problems.append(f"case {k}: pixels outside the mask changed")
            break
        darker = apply_ink(
            img, mask, replace(params, ink_absorption=min(1.0, params.ink_absorption + 0.3))
        )
        inked = mask.bits.astype(bool)
        if (darker.data[inked] > out.data[inked] + 1e-12).any():
            problems.append(f"case {k}: more absorption brightened a pixel")
            break

    _verdict("reflectance", problems, time.monotonic() - t0, 10.0)


def test_optimizer_suite(monkeypatch):
    t0 = time.monotonic()
    problems = []
    gallery, cases = make_toy_dataset(3, 32, 32, seed=7)
    case = cases[0]
    bounds = GenomeBounds.for_image(32, 32, radius_min=2.0, radius_max=8.0)

    decoded = []
    original = opt._Codec.decode

    def spy(self, vec):
        genome = original(self, vec)
        decoded.append(genome)
        return genome

    monkeypatch.setattr(opt._Codec, "decode", spy)

    budget_cap = 8 * (10 + 2)
    traces = {}
    for seed in range(20):
        cfg = AttackConfig(
            mode="dodging", true_label=case.true_label,
            patches=2, vertices=6, bounds=bounds,
            population=8, max_iters=10, seed=seed,
        )
        result = run_attack(case.probe, case.face_mask, gallery, cfg)
        traces[seed] = result.fitness_trace
        trace = np.array(result.fitness_trace)
        if (np.diff(trace) > 0).any():
            problems.append(f"seed {seed}: best fitness increased")
        if result.query_count > budget_cap:
            problems.append(
                f"seed {seed}: {result.query_count} queries exceed {budget_cap}"
            )
    if not decoded:
        problems.append("feasibility spy saw no genomes")
    elif not all(genome_within_bounds(g, bounds) for g in decoded):
        problems.append("an evaluated genome violated the bounds")

    rerun = run_attack(
        case.probe, case.face_mask, gallery,
        AttackConfig(
            mode="dodging", true_label=case.true_label,
            patches=2, vertices=6, bounds=bounds,
            population=8, max_iters=10, seed=0,
        ),
    )
    if rerun.fitness_trace != traces[0]:
        problems.append("same seed produced a different trace")

    # single patch, triangle contour, radius capped so dodging never triggers
    # an early stop; the exhaustive grid takes {min, mid, max} per parameter
    tiny_bounds = GenomeBounds.for_image(32, 32, radius_min=2.0, radius_max=5.0)
    tiny_cfg = AttackConfig(
        mode="dodging", true_label=case.true_label,
        patches=1, vertices=3, bounds=tiny_bounds,
        population=40, max_iters=50, seed=0,
    )
    ctx = FitnessContext(
        probe=case.probe, face_mask=case.face_mask,
        oracle=BuiltinScorer(gallery), cfg=tiny_cfg,
    )
    lo = [tiny_bounds.x_min, tiny_bounds.y_min] + [tiny_bounds.radius_min] * 3
    hi = [tiny_bounds.x_max, tiny_bounds.y_max] + [tiny_bounds.radius_max] * 3
    grid_best = math.inf
    for flags in np.ndindex(3, 3, 3, 3, 3):
        vec = np.array(
            [(l, (l + h) / 2.0, h)[f] for f, l, h in zip(flags, lo, hi)]
        )
        grid_best = min(grid_best, fitness(PatchGenome.from_vector(1, 3, vec), ctx))
    de = run_attack(case.probe, case.face_mask, gallery, tiny_cfg)
    if de.fitness_trace[-1] > grid_best + TINY_GRID_MARGIN:
        problems.append(
            f"DE best {de.fitness_trace[-1]:.6f} worse than grid "
            f"{grid_best:.6f} + {TINY_GRID_MARGIN}"
        )

    _verdict("optimizer", problems, time.monotonic() - t0, 120.0)


def test_end_to_end_toy_attack(e2e_dataset):
    t0 = time.monotonic()
    problems = []
    gallery, cases = e2e_dataset
    cfg = AttackConfig(mode="dodging", true_label=cases[0].true_label, seed=0)
    report = evaluate_asr(cases, gallery, cfg)

    if report.total != 10:
        problems.append(f"expected 10 records, got {report.total}")
    attacked = [r for r in report.records if not r.pre_success]
    reduced = sum(1 for r in attacked if r.final_true_prob < r.clean_true_prob)
    if attacked and reduced / len(attacked) < 0.9:
        problems.append(
            f"true probability strictly reduced on only {reduced}/{len(attacked)} cases"
        )
    if report.asr is None or report.asr < E2E_ASR_FLOOR:
        problems.append(f"ASR {report.asr} below frozen floor {E2E_ASR_FLOOR}")
    print(f"\n  e2e: asr={report.asr} reduced={reduced}/{len(attacked)} "
          f"stops={[r.stop_generation for r in report.records]}")

    _verdict("end-to-end", problems, time.monotonic() - t0, 600.0)


def test_ablation_directions():
    t0 = time.monotonic()
    problems = []
    finals = {"joint": [], "position": [], "shape": []}
    lrm_tally = {"with_lrm": [0, 0], "zeroing": [0, 0]}
    for s in range(10):
        gallery, cases = make_toy_dataset(3, 64, 64, seed=100 + s)
        cfg = AttackConfig(
            mode="dodging", true_label=cases[0].true_label, max_iters=40, seed=s
        )
        for mode, report in ablation_shapes(cases, gallery, cfg).items():
            finals[mode].extend(r.final_true_prob for r in report.records)
        for variant, report in ablation_lrm(cases, gallery, cfg).items():
            lrm_tally[variant][0] += report.extra["lrm_eval_successes"]
            lrm_tally[variant][1] += report.extra["lrm_eval_attacked"]

    means = {mode: float(np.mean(vals)) for mode, vals in finals.items()}
    if means["joint"] > means["position"]:
        problems.append(
            f"joint mean {means['joint']:.4f} worse than position-only "
            f"{means['position']:.4f}"
        )
    if means["joint"] > means["shape"]:
        problems.append(
            f"joint mean {means['joint']:.4f} worse than shape-only "
            f"{means['shape']:.4f}"
        )
    lrm_asr = {v: s / n for v, (s, n) in lrm_tally.items()}
    if lrm_asr["with_lrm"] < lrm_asr["zeroing"]:
        problems.append(
            f"reflectance-trained eval ASR {lrm_asr['with_lrm']:.3f} below "
            f"zeroing-trained {lrm_asr['zeroing']:.3f}"
        )
    print(f"\n  ablation: final fitness means {means}, held-out ASR {lrm_asr}")

    _verdict("ablation", problems, time.monotonic() - t0, 1800.0)


def test_posture_sweep(e2e_dataset):
    t0 = time.monotonic()
    problems = []
    gallery, cases = e2e_dataset
    angles = [-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0]
    retentions = []
    for idx in range(3):
        case = cases[idx]
        cfg = AttackConfig(mode="dodging", true_label=case.true_label, seed=idx)
        result = run_attack(case.probe, case.face_mask, gallery, cfg)
        if result.best_genome is None:
            problems.append(f"fixture {idx} ended without a genome")
            continue
        sweep = posture_sweep(
            result.best_genome, case.probe, case.face_mask, gallery, cfg, angles
        )
        if sweep.successes[angles.index(0.0)] != result.success:
            problems.append(f"fixture {idx}: angle-0 outcome differs from the attack")
        retentions.append(sweep.retention)
    if retentions and min(retentions) < POSTURE_RETENTION_FLOOR:
        problems.append(
            f"retention {min(retentions):.3f} below frozen {POSTURE_RETENTION_FLOOR}"
        )
    print(f"\n  posture: retentions={retentions}")

    _verdict("posture", problems, time.monotonic() - t0, 120.0)
