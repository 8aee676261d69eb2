"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from sddelab import cli, fbm, khbound
from sddelab.hspace import check_lemma_ap1, check_lemma_ap2
from sddelab.malliavin import check_early_bounds
from sddelab.nvdensity import check_gf_bracket, density_from_gf, verify_early_bounds
from sddelab.sdde import make_model

CONFIGS = Path(__file__).resolve().parents[1] / "scripts" / "configs"
SEED = 20240101
BIG = 100_000


@pytest.fixture(scope="module")
def gauss():
    return make_model(0.75, 1.0, 1.0, "1", "0", eta="0", steps_per_delay=32)


@pytest.fixture(scope="module")
def tanh():
    return make_model(0.75, 2.0, 1.0, "1 + 0.25*tanh(x)", "0.1*sin(x)", steps_per_delay=128)


@pytest.fixture(scope="module")
def tanh_kh(tanh):
    return khbound.simulate(tanh, 1.5, 1000, SEED)


def test_criterion_1_appendix_identities(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    ok = True
    rng = np.random.default_rng(SEED)
    for h in (0.6, 0.75, 0.9):
        for k in range(20):
            a = float(rng.uniform(0, 5))
            b = a + float(rng.uniform(0.01, 5))
            rep = check_lemma_ap2(a, b, h, n_cells=16, tol=1e-10, seed=k)
            worst = max(worst, rep.extra["rel_error"])
            ok &= rep.passed
    ap1 = check_lemma_ap1(trials=10_000, dim=8, seed=SEED, hurst=0.75, tol=0.0)
    dt = time.perf_counter() - t0
    passed = ok and worst <= 1e-10 and ap1.violations == 0 and dt < 5
    acceptance(1, passed, f"max rel error {worst:.2e}, lemma ap1 violations {ap1.violations}", dt)
    assert passed


def test_criterion_2_fbm_covariance(acceptance):
    t0 = time.perf_counter()
    grid = fbm.Grid.uniform(1.0, 16)
    batch = fbm.sample(grid, 0.75, 10_000, SEED)
    P = batch.paths[:, 1:]
    R = fbm.covariance_matrix(grid.times[1:], 0.75)
    prod = P[:, :, None] * P[:, None, :]
    z = np.abs(prod.mean(axis=0) - R) / (prod.std(axis=0, ddof=1) / math.sqrt(P.shape[0]))
    dt = time.perf_counter() - t0
    passed = bool(z.max() <= 4) and dt < 10
    acceptance(2, passed, f"max |z| over {z.size} entries = {z.max():.2f}", dt)
    assert passed


def test_criterion_3_gaussian_reduction(gauss, acceptance):
    t0 = time.perf_counter()
    t, H = 0.5, 0.75
    s2 = t ** (2 * H)
    rep = verify_early_bounds(gauss, t, BIG, SEED, n_points=101, radius=3.0, n_se=3.0)
    gf = rep.data["gf"]
    X = gf.F + gf.centering.mean
    ks = stats.kstest(X, "norm", args=(gauss.eta0, math.sqrt(s2)))
    dense = gf.counts >= 200
    gf_err = float(np.max(np.abs(gf.gf_values[dense] / s2 - 1)))
    x = rep.data["x"]
    near = (np.abs(x - gauss.eta0) <= 2 * t ** H) & np.isfinite(rep.data["p_nv"])
    exact = stats.norm.pdf(x[near], gauss.eta0, math.sqrt(s2))
    nv_err = float(np.max(np.abs(rep.data["p_nv"][near] / exact - 1)))
    collapsed = rep.extra["collapsed"] and np.array_equal(rep.data["lower"], rep.data["upper"])
    dt = time.perf_counter() - t0
    parts = {"a": ks.pvalue > 0.01, "b": gf_err <= 0.03,
             "c": nv_err <= 0.05 and near.sum() > 50, "d": collapsed and rep.passed}
    passed = all(parts.values()) and dt < 180
    acceptance(3, passed, f"KS p={ks.pvalue:.3f}, g_F rel err {gf_err:.1e}, "
               f"NV sup rel err {nv_err:.3f}, bounds collapsed+bracket={parts['d']}", dt)
    assert passed, parts


def test_criterion_4_der0r(tanh, acceptance):
    t0 = time.perf_counter()
    sol = khbound.simulate(tanh, 1.0, 1000, SEED)
    rep = check_early_bounds(sol, 1.0, tol=0.0)
    dt = time.perf_counter() - t0
    passed = rep.violations == 0 and rep.passed and dt < 60
    acceptance(4, passed, f"{rep.extra['entries']} entries in [{rep.constants['lower']:.4f}, "
               f"{rep.constants['upper']:.4f}], observed [{rep.extra['min']:.4f}, "
               f"{rep.extra['max']:.4f}]", dt)
    assert passed


def test_criterion_5_early_two_sided_bound(tanh, acceptance):
    t0 = time.perf_counter()
    t = 0.5
    rep = verify_early_bounds(tanh, t, BIG, SEED, n_points=101, radius=3.0, n_se=3.0,
                              with_nv=False)
    lam, Lam, M, r = tanh.lam, tanh.Lam, tanh.M, tanh.delay
    smin2 = lam ** 2 * math.exp(-2 * M * r) * t ** 1.5
    smax2 = Lam ** 2 * math.exp(2 * M * r) * t ** 1.5
    consts = (math.isclose(rep.extra["sigma_min2"], smin2, rel_tol=1e-12)
              and math.isclose(rep.extra["sigma_max2"], smax2, rel_tol=1e-12))
    dt = time.perf_counter() - t0
    passed = rep.passed and len(rep.margins) == 101 and consts and dt < 180
    acceptance(5, passed, f"{rep.violations} violations at 101 points, worst margin "
               f"{rep.worst_margin:.3g}", dt)
    assert passed


def test_criterion_6_j1_bracket_and_remainder(tanh_kh, acceptance):
    t0 = time.perf_counter()
    reps = [khbound.j1_variance_bracket(tanh_kh, khbound.Partition(1.5, N, 0.75))
            for N in (8, 16, 32)]
    rn = khbound.rn_smallness(tanh_kh, 1.5, [8, 16, 32], slope_range=(0.9, 1.1))
    dt = time.perf_counter() - t0
    passed = all(r.passed for r in reps) and rn.passed and dt < 120
    acceptance(6, passed, f"J1 violations {sum(r.violations for r in reps)}, "
               f"R_n slope {rn.extra['slope']:.4f}", dt)
    assert passed


def test_criterion_7_nondegeneracy(tanh_kh, acceptance):
    t0 = time.perf_counter()
    rep, N0 = khbound.nondegeneracy_scan(tanh_kh, 1.5, [2, 4, 8, 16, 32])
    dt = time.perf_counter() - t0
    passed = rep.passed and N0 is not None and N0 <= 32 and dt < 60
    acceptance(7, passed, f"N0 = {N0}, worst margin {rep.worst_margin:.3g} (units of sigma_N^2)", dt)
    assert passed


def test_criterion_8_late_positivity(tanh, acceptance):
    t0 = time.perf_counter()
    t = 1.5
    rep = khbound.verify_late_bound(tanh, t, BIG, SEED, radius=3.0, n_points=101, n_se=3.0)
    tH = t ** 0.75
    plans = [khbound.plan_chain(tanh, t, x) for x in tanh.eta0 + np.linspace(-3 * tH, 3 * tH, 13)]
    plans_ok = all(p.feasible for p in plans)
    dt = time.perf_counter() - t0
    passed = (rep.extra["positivity_pass"] and not rep.extra["excluded_points"]
              and rep.extra["feasible_pairs"] > 0 and plans_ok and rep.passed and dt < 300)
    acceptance(8, passed, f"min (p_kde - 3se) / max p = {min(rep.margins[:-2]):.3g}, "
               f"{rep.extra['feasible_pairs']} feasible (c3, c4), defaults feasible={plans_ok}", dt)
    assert passed


def _outputs(d):
    return {f: (d / f).read_bytes() for f in sorted(os.listdir(d)) if f.endswith((".csv", ".json"))}


def test_criterion_9_determinism(tmp_path, acceptance):
    t0 = time.perf_counter()
    runs = [
        ["check-lemmas", "--h", "0.75", "--trials", "10000", "--seed", "1"],
        ["simulate", str(CONFIGS / "tanh_sin.ini"), "--paths", "10000", "--dump-paths", "20"],
        ["verify-early", str(CONFIGS / "gaussian.ini")],
        ["verify-early", str(CONFIGS / "tanh_sin.ini"), "--set", "verification.checks=der0r,early_bound"],
        ["verify-late", str(CONFIGS / "tanh_sin.ini")],
    ]
    same = True
    checked = 0
    for i, argv in enumerate(runs):
        a, b = tmp_path / f"{i}a", tmp_path / f"{i}b"
        rc_a = cli.main(argv + ["--out", str(a)])
        rc_b = cli.main(argv + ["--out", str(b)])
        oa, ob = _outputs(a), _outputs(b)
        same &= rc_a == rc_b == 0 and oa == ob and len(oa) >= 2
        checked += len(oa)
    dt = time.perf_counter() - t0
    acceptance(9, same, f"{checked} CSV/JSON files byte-identical across reruns", dt)
    assert same
