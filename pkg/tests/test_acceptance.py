"""Acceptance criteria, one test each.

Every test appends a PASS/FAIL line (shown in the pytest terminal summary)
and then asserts.  Tolerances and runtime budgets are pinned here.
"""
import csv
import time

import numpy as np
import pytest

from strwkv import bench, gradcheck
from strwkv.block import init_block, run_block
from strwkv.cli import ABLATION_AXES, ABLATION_COLUMNS, main
from strwkv.losses import artfid
from strwkv.model import ModelConfig, StyleTransferModel, adain, param_count
from strwkv.scan import ScanPlan, baseline_order, rotation, s_merge, s_scan
from strwkv.shift import deform_sample, omni_shift
from strwkv.train import toy_pair, train_toy
from strwkv.wkv import WkvSequence, bi_wkv_naive, bi_wkv_scan, random_instance, re_wkv

from conftest import ACCEPTANCE_LINES

TOL_EQUIV_F64 = 1e-10
TOL_EQUIV_F32 = 1e-5
TOL_GRAD = 1e-4
GRAD_TRIALS = 20
R2_MIN = 0.98
NAIVE_RATIO = (3.2, 4.8)
SCAN_LENGTHS = [1024, 2048, 4096, 8192, 16384]
SCAN_CHANNELS = 8
NAIVE_LENGTHS = [1024, 2048, 4096, 8192]
NAIVE_CHANNELS = 4
BENCH_REPEATS = 7
TOL_ADAIN = 1e-6
CONVEX_INSTANCES = 1000
TOY_STEPS = 200
TOY_REDUCTION = 0.5
ARTFID_EXPECTED = 25.193
ARTFID_TOL = 1e-3
PARAM_WINDOW = (14_000_000, 58_000_000)
TINY_TALLY = 251_595


def report(n: int, title: str, ok: bool, detail: str, elapsed: float, budget: float):
    ok = bool(ok) and elapsed < budget
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:>2} {title}: {detail} [{elapsed:.1f}s / {budget:.0f}s]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def rel(a, b):
    return float(np.max(np.abs(np.asarray(a, np.float64) - b)) / np.max(np.abs(b)))


def test_c01_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst64 = worst32 = 0.0
    for _ in range(100):
        T, C = int(rng.integers(1, 257)), int(rng.integers(1, 17))
        seq, p = random_instance(rng, T, C)
        worst64 = max(worst64, rel(bi_wkv_scan(seq, p), bi_wkv_naive(seq, p)))
        s32, _ = random_instance(np.random.default_rng(int(rng.integers(2**31))), T, C, dtype=np.float32)
        y32 = bi_wkv_scan(s32, p)
        assert y32.dtype == np.float32
        # reference: float64 naive on the same float32-rounded inputs
        ref = bi_wkv_naive(WkvSequence(s32.k.astype(np.float64), s32.v.astype(np.float64)), p)
        worst32 = max(worst32, rel(y32, ref))
    report(1, "scan equals naive", worst64 <= TOL_EQUIV_F64 and worst32 <= TOL_EQUIV_F32,
           f"max rel err f64 {worst64:.2e} (<= {TOL_EQUIV_F64:g}), f32 {worst32:.2e} (<= {TOL_EQUIV_F32:g})",
           time.perf_counter() - t0, 10)


def test_c02_gradient_suite():
    t0 = time.perf_counter()
    reports = [gradcheck.check_bi_wkv(GRAD_TRIALS), gradcheck.check_deform_shift(GRAD_TRIALS),
               gradcheck.check_block(GRAD_TRIALS)]
    ok = all(r.max_rel_error <= TOL_GRAD and r.trials >= 20 for r in reports)
    detail = ", ".join(f"{r.name} {r.max_rel_error:.2e}" for r in reports) + f" (<= {TOL_GRAD:g}, {GRAD_TRIALS} trials)"
    report(2, "gradients vs finite differences", ok, detail, time.perf_counter() - t0, 60)


@pytest.mark.slow
def test_c03_linearity():
    t0 = time.perf_counter()
    flops_ok = all(
        bench.count_flops("bi_wkv_scan", 2 * T, 8) == 2 * bench.count_flops("bi_wkv_scan", T, 8)
        and bench.count_flops("bi_wkv_naive", 2 * T, 8) == 4 * bench.count_flops("bi_wkv_naive", T, 8)
        for T in SCAN_LENGTHS)
    scan = bench.sweep(["bi_wkv_scan"], SCAN_LENGTHS, SCAN_CHANNELS, repeats=BENCH_REPEATS)
    r2 = bench.linear_fit_r2([r.T for r in scan], [r.wall_ns for r in scan])
    naive = bench.sweep(["bi_wkv_naive"], NAIVE_LENGTHS, NAIVE_CHANNELS, repeats=BENCH_REPEATS)
    ratios = bench.doubling_ratios(naive)
    ratios_ok = len(ratios) == 3 and all(NAIVE_RATIO[0] <= x <= NAIVE_RATIO[1] for x in ratios)
    detail = (f"flop ratios exact {flops_ok}; scan R^2 {r2:.4f} (>= {R2_MIN}); naive doubling ratios "
              f"{[round(x, 2) for x in ratios]} (in {list(NAIVE_RATIO)})")
    report(3, "linear scan, quadratic naive", flops_ok and r2 >= R2_MIN and ratios_ok, detail,
           time.perf_counter() - t0, 300)


def test_c04_permutations():
    t0 = time.perf_counter()
    checked = 0
    ok = True
    rng = np.random.default_rng(4)
    for H in range(1, 33):
        for W in range(1, 33):
            plans = [ScanPlan(v, H, W) for v in ("identity", "bidirectional", "zigzag")]
            for p in (1, 2, 3, 4):
                if H % p or W % p:
                    with pytest.raises(ValueError):
                        ScanPlan("skip", H, W, p)
                    continue
                plans += [ScanPlan("skip", H, W, p, within_group=g) for g in ("row-major", "reversed", "column-major")]
            x = rng.normal(size=(2, H, W))
            for plan in plans:
                perm = plan.permutation()
                ok &= np.array_equal(np.sort(perm), np.arange(H * W))
                ok &= np.array_equal(s_merge(s_scan(x, plan), plan), x)
                checked += 1
            for v in ("bidirectional", "zigzag"):
                ok &= np.array_equal(np.sort(baseline_order(v, H, W)), np.arange(H * W))
    report(4, "scan permutations are bijections", ok, f"{checked} plans, H,W <= 32, p in 1..4",
           time.perf_counter() - t0, 5)


def test_c05_structural_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    p = init_block(rng, "b", 8, "deform")
    for k in p:
        if ".W_" in k:
            p[k] = np.zeros_like(p[k])
    x = rng.normal(size=(8, 8, 8))
    block_id = np.array_equal(run_block(x, p, "b", "deform", rotation("skip", 8, 8, 2), 2), x)
    k = rng.normal(size=(8, 3, 3))
    deform_omni = np.array_equal(deform_sample(x, np.zeros((18, 8, 8)), k), omni_shift(x, k))
    seq, wp = random_instance(rng, 64, 8)
    q1 = np.array_equal(re_wkv(seq, wp, 1, [np.arange(64)]), bi_wkv_scan(seq, wp))
    f = rng.normal(size=(8, 6, 6)) * 2 + 0.5
    adain_err = float(np.max(np.abs(adain(f, f) - f)))
    ok = block_id and deform_omni and q1 and adain_err <= TOL_ADAIN
    detail = (f"zero block identity {block_id}; zero-offset deform == omni bitwise {deform_omni}; "
              f"re_wkv q=1 == bi_wkv {q1}; adain(x,x) err {adain_err:.1e} (<= {TOL_ADAIN:g})")
    report(5, "structural identities", ok, detail, time.perf_counter() - t0, 5)


def test_c06_convexity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    violations = 0
    for _ in range(CONVEX_INSTANCES):
        T, C = int(rng.integers(1, 129)), int(rng.integers(1, 9))
        seq, p = random_instance(rng, T, C)
        y = bi_wkv_scan(seq, p)
        lo, hi = seq.v.min(axis=0), seq.v.max(axis=0)
        slack = 1e-12 * (1 + hi - lo)
        violations += int(np.any(y < lo - slack) or np.any(y > hi + slack))
    report(6, "convexity bound", violations == 0, f"{violations} violations in {CONVEX_INSTANCES} instances",
           time.perf_counter() - t0, 10)


@pytest.mark.slow
def test_c07_toy_training():
    t0 = time.perf_counter()
    content, style = toy_pair(32)
    first = train_toy(ModelConfig.tiny(), content, style, TOY_STEPS, seed=0).curve
    second = train_toy(ModelConfig.tiny(), content, style, TOY_STEPS, seed=0).curve
    ratio = first[-1] / first[0]
    same = first == second
    ok = ratio <= TOY_REDUCTION and same and all(np.isfinite(first))
    detail = (f"loss {first[0]:.3f} -> {first[-1]:.3f} (ratio {ratio:.3f} <= {TOY_REDUCTION}) "
              f"over {TOY_STEPS} steps; rerun bitwise identical {same}")
    report(7, "toy training", ok, detail, time.perf_counter() - t0, 300)


def test_c08_artfid():
    t0 = time.perf_counter()
    value = artfid(16.362, 0.451)
    report(8, "ArtFID combiner", abs(value - ARTFID_EXPECTED) <= ARTFID_TOL,
           f"(1+0.451)(1+16.362) = {value:.4f} (expect {ARTFID_EXPECTED} +- {ARTFID_TOL:g})",
           time.perf_counter() - t0, 1)


def test_c09_parameter_accounting():
    t0 = time.perf_counter()
    default = param_count(StyleTransferModel.init(ModelConfig()))
    tiny = param_count(StyleTransferModel.init(ModelConfig.tiny()))
    ok = PARAM_WINDOW[0] <= default <= PARAM_WINDOW[1] and tiny == TINY_TALLY
    report(9, "parameter accounting", ok,
           f"default {default:,} in [{PARAM_WINDOW[0]:,}, {PARAM_WINDOW[1]:,}] (reported 28.80M); "
           f"tiny {tiny:,} == hand tally {TINY_TALLY:,}", time.perf_counter() - t0, 30)


@pytest.mark.slow
def test_c10_ablation_harness(tmp_path):
    t0 = time.perf_counter()
    rows = {}
    codes = []
    for axis in ABLATION_AXES:
        out = tmp_path / f"{axis}.csv"
        codes.append(main(["ablate", "--axis", axis, "--size", "64", "--out", str(out)]))
        with out.open(newline="") as fh:
            reader = csv.DictReader(fh)
            header_ok = tuple(reader.fieldnames) == ABLATION_COLUMNS
            rows[axis] = (header_ok, list(reader))
    expected = {"q": ["1", "2", "3"], "shift": ["quad", "omni", "deform"],
                "scan": [("bidirectional", "2"), ("zigzag", "2"), ("skip", "1"), ("skip", "2"), ("skip", "3")]}
    got = {"q": [r["q"] for r in rows["q"][1]], "shift": [r["shift"] for r in rows["shift"][1]],
           "scan": [(r["scan"], r["p"]) for r in rows["scan"][1]]}
    finite = all(np.isfinite(float(r[c])) for _, rs in rows.values() for r in rs
                 for c in ("loss_init", "loss_final", "content", "style", "identity1", "identity2", "forward_ms"))
    ok = codes == [0, 0, 0] and all(h for h, _ in rows.values()) and got == expected and finite
    n = sum(len(rs) for _, rs in rows.values())
    report(10, "ablation harness", ok, f"{n} variant rows over axes {list(ABLATION_AXES)}, well-formed {ok}",
           time.perf_counter() - t0, 600)
