"""Experiment harness tests: toy dataset synthesis, dataset round trips,
ASR sweeps with per-case error isolation, the two ablations, and the rotated
posture re-evaluation."""

import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from nirpatch.errors import InvalidRange, InvalidConfig, ScorerFailure
from nirpatch.geometry import GenomeBounds
from nirpatch.harness import (
    CaseRecord,
    ExperimentReport,
    PostureResult,
    ToyCase,
    ablation_lrm,
    ablation_shapes,
    config_hash,
    evaluate_asr,
    fixed_centers_for,
    load_manifest,
    make_toy_dataset,
    posture_sweep,
    rotate_image,
    rotate_mask,
    write_dataset,
)
from nirpatch.harness import _elliptical_face_mask
from nirpatch.image import BinaryMask
from nirpatch.oracle import BuiltinScorer
from nirpatch.optimizer import AttackConfig, run_attack
from nirpatch.reflectance import ReflectanceParams


@pytest.fixture(scope="module")
def toy3():
    return make_toy_dataset(3, 32, 32, seed=7)


def dodge_cfg(**kw):
    defaults = dict(
        mode="dodging",
        true_label="id000",
        patches=2,
        vertices=6,
        population=6,
        max_iters=4,
        seed=1,
    )
    defaults.update(kw)
    return AttackConfig(**defaults)


class TestMakeToyDataset:
    def test_clean_probes_identify_themselves(self, toy3):
        gallery, cases = toy3
        scorer = BuiltinScorer(gallery)
        for case in cases:
            assert scorer.score(case.probe).top1() == case.true_label

    def test_same_seed_reproduces_bit_exactly(self):
        g1, c1 = make_toy_dataset(2, 24, 24, seed=3)
        g2, c2 = make_toy_dataset(2, 24, 24, seed=3)
        for (la, ia), (lb, ib) in zip(g1.entries, g2.entries):
            assert la == lb
            assert np.array_equal(ia.data, ib.data)
        for a, b in zip(c1, c2):
            assert np.array_equal(a.probe.data, b.probe.data)
            assert np.array_equal(a.face_mask.bits, b.face_mask.bits)

    def test_mask_coverage_and_shape(self, toy3):
        _, cases = toy3
        mask = cases[0].face_mask
        assert mask.bits.shape == (32, 32)
        assert set(np.unique(mask.bits)) <= {0, 1}
        assert mask.count() >= 0.2 * 32 * 32

    def test_input_validation(self):
        with pytest.raises(InvalidRange):
            make_toy_dataset(1, 32, 32, seed=0)
        with pytest.raises(InvalidRange):
            make_toy_dataset(3, 4, 32, seed=0)

    def test_identities_are_distinguishable(self, toy3):
        gallery, _ = toy3
        imgs = [img.data for _, img in gallery.entries]
        for i in range(len(imgs)):
            for j in range(i + 1, len(imgs)):
                assert not np.array_equal(imgs[i], imgs[j])


class TestDatasetRoundTrip:
    def test_write_then_load(self, toy3, tmp_path):
        gallery, cases = toy3
        write_dataset(gallery, cases, tmp_path)
        loaded_gallery, loaded_cases = load_manifest(tmp_path / "manifest.json")
        assert loaded_gallery.labels == gallery.labels
        assert [c.case_id for c in loaded_cases] == [c.case_id for c in cases]
        assert [c.true_label for c in loaded_cases] == [c.true_label for c in cases]
        for orig, back in zip(cases, loaded_cases):
            # PGM quantizes to 8 bits; masks are exact
            assert np.abs(back.probe.data - orig.probe.data).max() <= 0.5 / 255
            assert np.array_equal(back.face_mask.bits, orig.face_mask.bits)

    def test_quantization_is_idempotent(self, toy3, tmp_path):
        gallery, cases = toy3
        write_dataset(gallery, cases, tmp_path / "first")
        g1, c1 = load_manifest(tmp_path / "first" / "manifest.json")
        write_dataset(g1, c1, tmp_path / "second")
        g2, c2 = load_manifest(tmp_path / "second" / "manifest.json")
        for a, b in zip(c1, c2):
            assert np.array_equal(a.probe.data, b.probe.data)

    def test_manifest_errors(self, tmp_path):
        with pytest.raises(InvalidConfig):
            load_manifest(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("not json")
        with pytest.raises(InvalidConfig):
            load_manifest(bad)
        partial = tmp_path / "partial.json"
        partial.write_text(json.dumps({"gallery": "gallery", "cases": [{}]}))
        (tmp_path / "gallery").mkdir()
        with pytest.raises(Exception):
            load_manifest(partial)


class FlakyScorer:
    """Real scorer that permanently dies after a fixed number of calls."""

    def __init__(self, inner, fail_after):
        self._inner = inner
        self._left = fail_after

    @property
    def labels(self):
        return self._inner.labels

    def score(self, probe):
        if self._left <= 0:
            raise ScorerFailure("injected outage")
        self._left -= 1
        return self._inner.score(probe)


class TestEvaluateAsr:
    def test_empty_dataset(self, toy3):
        gallery, _ = toy3
        report = evaluate_asr([], gallery, dodge_cfg())
        assert report.total == 0
        assert report.asr is None
        assert "asr" not in report.summary_dict()

    def test_all_pre_success_excluded(self, toy3):
        gallery, cases = toy3
        # claim every probe belongs to someone else; the clean check then
        # already satisfies dodging so no attack ever starts
        wrong = [
            ToyCase(
                case_id=c.case_id,
                probe=c.probe,
                face_mask=c.face_mask,
                true_label="id001" if c.true_label != "id001" else "id002",
            )
            for c in cases
        ]
        report = evaluate_asr(wrong, gallery, dodge_cfg())
        assert report.total == 3
        assert report.attacked == 0
        assert report.successes == 0
        assert report.asr is None
        assert all(r.pre_success for r in report.records)
        assert all(r.queries == 1 for r in report.records)
        summary = report.summary_dict()
        assert summary["pre_success"] == 3
        assert "asr" not in summary

    def test_sweep_records_and_determinism(self, toy3):
        gallery, cases = toy3
        bounds = GenomeBounds.for_image(32, 32, radius_min=2.0, radius_max=8.0)
        cfg = dodge_cfg(bounds=bounds, seed=5)
        a = evaluate_asr(cases, gallery, cfg)
        b = evaluate_asr(cases, gallery, cfg)
        assert a.total == 3
        assert [r.case_id for r in a.records] == [c.case_id for c in cases]
        assert all(r.mode == "dodging" for r in a.records)
        if a.attacked:
            assert 0.0 <= a.asr <= 1.0
        pairs = zip(a.records, b.records)
        assert all(
            (x.success, x.queries, x.final_true_prob) == (y.success, y.queries, y.final_true_prob)
            for x, y in pairs
        )
        assert a.config_hash == b.config_hash == config_hash(cfg)

    def test_oracle_outage_marks_case_failed_and_continues(self, toy3):
        gallery, cases = toy3
        bounds = GenomeBounds.for_image(32, 32, radius_min=2.0, radius_max=5.0)
        # enough budget for case 0 to finish, dies partway into case 1
        flaky = FlakyScorer(BuiltinScorer(gallery), fail_after=140)
        cfg = dodge_cfg(bounds=bounds, max_iters=20)
        report = evaluate_asr(cases, flaky, cfg)
        assert report.total == 3
        errored = [r for r in report.records if r.error]
        assert errored
        assert all(not r.success for r in errored)
        # errored cases still count in the attacked denominator
        assert report.attacked == 3

    def test_csv_output_is_sorted_and_complete(self, toy3, tmp_path):
        gallery, cases = toy3
        cfg = dodge_cfg(seed=2)
        report = evaluate_asr(list(reversed(cases)), gallery, cfg)
        path = tmp_path / "report.csv"
        report.write_csv(path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["case_id"] for r in rows] == sorted(r["case_id"] for r in rows)
        assert len(rows) == 3
        for row in rows:
            assert row["mode"] == "dodging"
            assert row["success"] in ("0", "1")
        report.write_summary(tmp_path / "summary.json")
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["total"] == 3


class TestFixedCenters:
    def test_feasible_and_deterministic(self):
        cfg = dodge_cfg(patches=3)
        a = fixed_centers_for(cfg, 48, 40)
        b = fixed_centers_for(cfg, 48, 40)
        assert a == b
        assert len(a) == 3
        for x, y in a:
            assert 0.0 <= x <= 47.0
            assert 0.0 <= y <= 39.0

    def test_seed_sensitivity(self):
        a = fixed_centers_for(dodge_cfg(seed=1), 48, 48)
        b = fixed_centers_for(dodge_cfg(seed=2), 48, 48)
        assert a != b


class TestAblationShapes:
    def test_three_modes_reported(self, toy3):
        gallery, cases = toy3
        bounds = GenomeBounds.for_image(32, 32, radius_min=2.0, radius_max=8.0)
        cfg = dodge_cfg(bounds=bounds, max_iters=2)
        reports = ablation_shapes(cases[:2], gallery, cfg)
        assert set(reports) == {"joint", "position", "shape"}
        for mode, report in reports.items():
            assert report.total == 2
            assert report.extra["optimize"] == mode

    def test_position_mode_pins_the_round_shape(self, toy3):
        gallery, cases = toy3
        case = cases[0]
        bounds = GenomeBounds.for_image(32, 32, radius_min=2.0, radius_max=8.0)
        cfg = dodge_cfg(true_label=case.true_label, bounds=bounds, optimize="position")
        result = run_attack(case.probe, case.face_mask, gallery, cfg)
        if result.best_genome is not None:
            assert (result.best_genome.radii == 5.0).all()

    def test_shape_mode_single_point_space_has_constant_trace(self, toy3):
        gallery, cases = toy3
        case = cases[0]
        bounds = GenomeBounds(0.0, 31.0, 0.0, 31.0, 5.0, 5.0)
        cfg = dodge_cfg(
            true_label=case.true_label,
            bounds=bounds,
            optimize="shape",
            fixed_centers=((10.0, 12.0), (20.0, 18.0)),
            max_iters=3,
        )
        result = run_attack(case.probe, case.face_mask, gallery, cfg)
        assert len(set(result.fitness_trace)) == 1

    def test_shape_mode_keeps_centers_frozen(self, toy3):
        gallery, cases = toy3
        case = cases[0]
        centers = ((8.0, 8.0), (22.0, 20.0))
        bounds = GenomeBounds.for_image(32, 32, radius_min=2.0, radius_max=6.0)
        cfg = dodge_cfg(
            true_label=case.true_label,
            bounds=bounds,
            optimize="shape",
            fixed_centers=centers,
            max_iters=3,
        )
        result = run_attack(case.probe, case.face_mask, gallery, cfg)
        if result.best_genome is not None:
            assert result.best_genome.centers.tolist() == [list(c) for c in centers]


class TestAblationLrm:
    def test_reports_both_variants(self, toy3):
        gallery, cases = toy3
        bounds = GenomeBounds.for_image(32, 32, radius_min=2.0, radius_max=8.0)
        cfg = dodge_cfg(bounds=bounds, max_iters=2)
        out = ablation_lrm(cases[:2], gallery, cfg)
        assert set(out) == {"with_lrm", "zeroing"}
        for variant, report in out.items():
            assert report.extra["trained_with"] == variant
            assert report.total == 2
            assert report.extra["lrm_eval_attacked"] <= 2
            if report.extra["lrm_eval_attacked"]:
                assert 0.0 <= report.extra["lrm_eval_asr"] <= 1.0

    def test_variants_coincide_under_total_absorption(self, toy3):
        # intensity*f*(1-absorption) = 0 makes the reflectance render equal
        # hard zeroing, so both arms must produce identical runs
        gallery, cases = toy3
        bounds = GenomeBounds.for_image(32, 32, radius_min=2.0, radius_max=8.0)
        cfg = dodge_cfg(
            bounds=bounds,
            max_iters=3,
            reflectance=ReflectanceParams(ink_absorption=1.0),
        )
        out = ablation_lrm(cases[:2], gallery, cfg)
        a, b = out["with_lrm"], out["zeroing"]
        assert a.extra["lrm_eval_successes"] == b.extra["lrm_eval_successes"]
        for ra, rb in zip(a.records, b.records):
            assert (ra.success, ra.queries, ra.stop_generation) == (
                rb.success,
                rb.queries,
                rb.stop_generation,
            )
            assert ra.final_true_prob == rb.final_true_prob


class TestRotation:
    def test_zero_degrees_is_bit_exact(self, toy3):
        _, cases = toy3
        probe, mask = cases[0].probe, cases[0].face_mask
        assert np.array_equal(rotate_image(probe, 0.0).data, probe.data)
        assert np.array_equal(rotate_mask(mask, 0.0).bits, mask.bits)
        assert np.array_equal(rotate_image(probe, 360.0).data, probe.data)

    def test_rotation_preserves_types_and_ranges(self, toy3):
        _, cases = toy3
        probe, mask = cases[0].probe, cases[0].face_mask
        for deg in (-30, -10, 15, 30):
            ri = rotate_image(probe, deg)
            rm = rotate_mask(mask, deg)
            assert (ri.width, ri.height) == (probe.width, probe.height)
            assert ri.data.min() >= 0.0 and ri.data.max() <= 1.0
            assert set(np.unique(rm.bits)) <= {0, 1}

    def test_mask_round_trip_loses_only_boundary(self):
        mask = _elliptical_face_mask(64, 64)
        for deg in (10, 17, 30):
            back = rotate_mask(rotate_mask(mask, deg), -deg)
            mismatch = np.count_nonzero(back.bits != mask.bits)
            assert mismatch / mask.count() < 0.05


class TestPostureSweep:
    def run_fixture(self, toy3):
        gallery, cases = toy3
        case = cases[0]
        bounds = GenomeBounds.for_image(32, 32, radius_min=2.0, radius_max=8.0)
        cfg = dodge_cfg(
            true_label=case.true_label,
            population=8,
            max_iters=10,
            seed=7,
            bounds=bounds,
        )
        result = run_attack(case.probe, case.face_mask, gallery, cfg)
        return gallery, case, cfg, result

    def test_angle_zero_reproduces_success(self, toy3):
        gallery, case, cfg, result = self.run_fixture(toy3)
        assert result.success is True
        sweep = posture_sweep(
            result.best_genome, case.probe, case.face_mask, gallery, cfg, [0.0]
        )
        assert sweep.successes == [True]

    def test_angle_zero_reproduces_failure(self, toy3):
        gallery, cases = toy3
        case = cases[0]
        bounds = GenomeBounds.for_image(32, 32, radius_min=2.0, radius_max=4.0)
        cfg = dodge_cfg(
            true_label=case.true_label, max_iters=2, seed=1, bounds=bounds
        )
        result = run_attack(case.probe, case.face_mask, gallery, cfg)
        assert result.success is False
        sweep = posture_sweep(
            result.best_genome, case.probe, case.face_mask, gallery, cfg, [0.0]
        )
        assert sweep.successes == [False]

    def test_full_sweep_shape_and_retention(self, toy3):
        gallery, case, cfg, result = self.run_fixture(toy3)
        angles = [-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0]
        sweep = posture_sweep(
            result.best_genome, case.probe, case.face_mask, gallery, cfg, angles
        )
        assert sweep.angles == angles
        assert len(sweep.successes) == 7
        assert 0.0 <= sweep.retention <= 1.0
        assert sweep.successes[3] is True

    def test_retention_edge_cases(self):
        assert PostureResult(angles=[], successes=[]).retention == 0.0
        assert PostureResult(angles=[0, 1], successes=[True, False]).retention == 0.5


class TestReportPlumbing:
    def test_config_hash_stability(self):
        assert config_hash(dodge_cfg(seed=4)) == config_hash(dodge_cfg(seed=4))
        assert config_hash(dodge_cfg(seed=4)) != config_hash(dodge_cfg(seed=5))

    def test_report_counts(self):
        records = [
            CaseRecord("a", "dodging", True, 10, 2, 0.9, 0.1, False),
            CaseRecord("b", "dodging", False, 10, 5, 0.9, 0.8, False),
            CaseRecord("c", "dodging", True, 1, -1, 0.2, 0.2, True),
        ]
        report = ExperimentReport(records=records, seed=0, config_hash="x", extra={})
        assert report.total == 3
        assert report.attacked == 2
        assert report.successes == 1
        assert report.asr == 0.5
