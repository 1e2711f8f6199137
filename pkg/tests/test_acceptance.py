"""Acceptance gate: one test per criterion, each reporting a pass/fail line."""

import hashlib
import json
import math
import time

import numpy as np
import pytest

from crossalign.cli import main
from crossalign.deviation import RotationMode, SingularEncoding, decode, encode
from crossalign.evaluation import Detection, GroundTruth, average_precision
from crossalign.geometry import RotatedBox, iou_raster_oracle, rotated_iou
from crossalign.modality_selection import GrayImage, ms_score
from crossalign.rng import SplitMix64
from crossalign.simulator import generate_dataset

from conftest import ACCEPTANCE_RESULTS, random_pair
from experiments import (
    exhaustive_ap,
    gradient_check,
    jitter_moments,
    ms_offset_experiment,
    random_ap_fixture,
    recovery_config,
    recovery_run,
)


def record(num, title, ok, detail):
    ACCEPTANCE_RESULTS.append((num, title, bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {num}. {title}: {detail}")
    assert ok, detail


def _rigid(box, angle, tx, ty):
    c, s = math.cos(angle), math.sin(angle)
    return RotatedBox(c * box.cx - s * box.cy + tx, s * box.cx + c * box.cy + ty, box.w, box.h, box.theta + angle)


def test_criterion_01_geometry_oracle():
    t0 = time.perf_counter()
    rng = SplitMix64(2024)
    oracle_err = sym_err = rigid_err = 0.0
    for _ in range(1000):
        a, b = random_pair(rng)
        iou = rotated_iou(a, b)
        oracle_err = max(oracle_err, abs(iou - iou_raster_oracle(a, b, 1024)))
        sym_err = max(sym_err, abs(iou - rotated_iou(b, a)))
        ang, tx, ty = rng.uniform(-math.pi, math.pi), rng.uniform(-100, 100), rng.uniform(-100, 100)
        rigid_err = max(rigid_err, abs(iou - rotated_iou(_rigid(a, ang, tx, ty), _rigid(b, ang, tx, ty))))
    elapsed = time.perf_counter() - t0
    ok = oracle_err <= 5e-3 and sym_err <= 1e-9 and rigid_err <= 1e-9 and elapsed < 10
    record(1, "geometry oracle", ok,
           f"max|iou-raster|={oracle_err:.2e} sym={sym_err:.1e} rigid={rigid_err:.1e} time={elapsed:.1f}s")


def test_criterion_02_deviation_codec():
    rng = SplitMix64(99)
    worst = 0.0
    for _ in range(1000):
        r, s = random_pair(rng)
        out = decode(r, encode(r, s))
        d = math.fmod(abs(out.theta - s.theta), 2 * math.pi)
        worst = max(worst, abs(out.cx - s.cx), abs(out.cy - s.cy), abs(out.w / s.w - 1), abs(out.h / s.h - 1),
                    min(d, 2 * math.pi - d))
    raised = []
    for eps in (0.0, 9e-7, -9e-7):
        try:
            encode(RotatedBox(0, 0, 2, 1, math.pi / 4 + eps), RotatedBox(1, 0, 2, 1, 0), RotationMode.PAPER_EXACT)
            raised.append(False)
        except SingularEncoding:
            raised.append(True)
    ref = RotatedBox(0, 0, 2, 1, 0)
    examples = [
        encode(RotatedBox(3, 4, 5, 6, 1), RotatedBox(3, 4, 5, 6, 1)).as_array().tolist() == [0, 0, 0, 0, 0],
        encode(ref, RotatedBox(1, 0, 2, 1, 0)).as_array().tolist() == [0.5, 0, 0, 0, 0],
        encode(ref, RotatedBox(0, 0, 2 * math.e, 1, math.pi / 2)).as_array().tolist() == [0, 0, 1, 0, 0.25],
    ]
    ok = worst < 1e-9 and all(raised) and all(examples)
    record(2, "deviation codec", ok, f"round-trip max err={worst:.1e} singular={raised} examples={examples}")


def test_criterion_03_gradient_check():
    worst, counts = gradient_check(seed=7, n_params=240)
    ok = sum(counts) >= 200 and min(counts) > 0 and worst <= 1e-4
    record(3, "gradient check", ok, f"{sum(counts)} params (per branch {counts}), worst rel err={worst:.1e}")


@pytest.fixture(scope="module")
def recovery_results():
    """Per seed: no-MS, MS, and MS+jitter runs on one shared dataset."""
    out = {}
    for seed in (0, 1, 2):
        t0 = time.perf_counter()
        scenes = generate_dataset(recovery_config(seed), 250)
        gen = time.perf_counter() - t0
        runs = {}
        for name, ms, jit in (("align", False, False), ("align_ms", True, False), ("full", True, True)):
            t0 = time.perf_counter()
            before, after, n_obj = recovery_run(seed, ms, jit, scenes=scenes)
            runs[name] = (before, after, time.perf_counter() - t0 + gen)
        runs["n_objects"] = n_obj
        out[seed] = runs
    return out


def test_criterion_04_alignment_recovery(recovery_results):
    before, after, elapsed = recovery_results[0]["full"]
    n_obj = recovery_results[0]["n_objects"]
    ratio = after.center / before.center
    ok = 1900 <= n_obj <= 2100 and ratio <= 0.20 and after.iou >= 0.80 and elapsed <= 300
    record(4, "alignment recovery", ok,
           f"{n_obj} objects, center err {before.center:.3f}->{after.center:.3f} px (ratio {ratio:.3f}), "
           f"IoU {after.iou:.3f}, {elapsed:.0f}s")


def test_criterion_05_ablation_ordering(recovery_results):
    held = []
    parts = []
    for seed, runs in recovery_results.items():
        baseline = runs["align"][0].center  # no alignment, IR reference
        e_align = runs["align"][1].center
        e_ms = runs["align_ms"][1].center
        e_full = runs["full"][1].center
        order = baseline > e_align >= e_ms
        jitter_ok = e_full <= 1.05 * e_ms
        held.append(order and jitter_ok)
        parts.append(f"seed {seed}: {baseline:.2f}>{e_align:.3f}>={e_ms:.3f}, jitter {e_full:.3f}")
    ok = sum(held) >= 2
    record(5, "ablation ordering", ok, f"{sum(held)}/3 seeds hold ({'; '.join(parts)})")


def test_criterion_06_ms_strategy():
    frac = ms_offset_experiment(500, seed=0)
    img = np.zeros((40, 40), dtype=np.uint8)
    img[16:24, 12:28] = 255
    perfect = ms_score(GrayImage(img), RotatedBox(20, 20, 16, 8, 0)).score
    ok = frac >= 0.95 and perfect == 1.0
    record(6, "MS strategy", ok, f"clean modality chosen in {frac:.1%} of 500 cases; perfect box score {perfect}")


def _box(cx):
    return RotatedBox(cx, 0, 10, 4, 0)


def test_criterion_07_evaluator():
    gts = [GroundTruth(0, 0, _box(0)), GroundTruth(0, 0, _box(50))]
    dets = [Detection(0, 0, _box(0), 0.9), Detection(0, 0, _box(200), 0.8), Detection(0, 0, _box(50), 0.7)]
    ap = average_precision(dets, gts, 0)
    rng = SplitMix64(31)
    agree = total = 0
    fixtures = [(dets, gts)]
    while len(fixtures) < 300:
        d, g = random_ap_fixture(rng)
        if g:
            fixtures.append((d, g))
    for d, g in fixtures:
        total += 1
        agree += abs(average_precision(d, g, 0) - exhaustive_ap(d, g)) <= 1e-12
    ok = abs(ap - 0.8333333) <= 1e-6 and agree == total
    record(7, "evaluator", ok, f"fixture AP={ap:.6f}; greedy == exhaustive on {agree}/{total} fixtures")


def _stats_all_row(capsys, args):
    capsys.readouterr()
    assert main(args) == 0
    row = capsys.readouterr().out.splitlines()[-1].split(",")
    return int(row[5]) / int(row[1])


def test_criterion_08_statistics_tool(tmp_path, capsys):
    exact = {
        "seed": 3,
        "num_scenes": 40,
        "scene": {
            "objects_per_image": [10, 10],
            "hardware_error": {"random_shift": 0.0, "motion_skew": 0.0},
            "annotation_error": {"prob": 0.2, "pos_sigma": 4.0, "size_sigma": 4.0, "angle_sigma": 0.1,
                                 "exact": True},
        },
    }
    (tmp_path / "exact.json").write_text(json.dumps(exact))
    assert main(["simulate", str(tmp_path / "exact.json"), str(tmp_path / "exact")]) == 0
    frac_exact = _stats_all_row(capsys, ["stats", str(tmp_path / "exact")])
    (tmp_path / "default.json").write_text(json.dumps({"seed": 0, "num_scenes": 60}))
    assert main(["simulate", str(tmp_path / "default.json"), str(tmp_path / "default")]) == 0
    frac_default = _stats_all_row(capsys, ["stats", str(tmp_path / "default")])
    ok = frac_exact == 0.2 and frac_default > 0.2
    record(8, "statistics tool", ok,
           f"exact-20% dataset reports {frac_exact:.1%}; default config reports {frac_default:.1%}")


def _digests(root):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in (root / "head.bin", root / "head.loss.csv", root / "report.csv", root / "report.aligned.jsonl")}


def test_criterion_09_determinism(tmp_path):
    cfg = {"seed": 11, "num_scenes": 30, "train": {"epochs": 3}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    digests = []
    for run in ("a", "b"):
        root = tmp_path / run
        assert main(["simulate", str(tmp_path / "cfg.json"), str(root / "data")]) == 0
        assert main(["train-align", str(root / "data"), str(tmp_path / "cfg.json"), str(root / "head.bin")]) == 0
        assert main(["eval", str(root / "data"), str(root / "head.bin"), str(root / "report.csv")]) == 0
        digests.append(_digests(root))
    ok = digests[0] == digests[1]
    record(9, "determinism", ok, f"{len(digests[0])} artifacts byte-identical across two runs: {ok}")


def test_criterion_10_jitter_moments():
    mean, std = jitter_moments(100_000, sigma=0.05, seed=0)
    rel = np.abs(std / 0.05 - 1)
    ok = bool(np.all(rel <= 0.02))
    record(10, "jitter moments", ok, "std rel err per channel " + ", ".join(f"{r:.2%}" for r in rel))
