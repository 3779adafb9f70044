"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into the pytest terminal summary. Budgets are
wall-clock limits measured on a single core.
"""

import json
import math
import time

import numpy as np
import pytest
import yaml

from nrmhd.analysis import comparison_sweep
from nrmhd.cli import main
from nrmhd.heat import counterexample_divergence_scan, heat_evolve, log_sum, shell_constant, verify_smoothing
from nrmhd.maxreg import maxreg_ratio, random_forcing, stokes_ensemble
from nrmhd.mhd import mhd_run, monitor_inequalities, orszag_tang, temporal_convergence
from nrmhd.spectral import Grid, random_field

from conftest import ACCEPTANCE_LINES, single_mode


def report(k, ok, text):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {k}: {text}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def test_c1_heat_exactness():
    t0 = time.perf_counter()
    g = Grid(2, 64)
    decay = 0.0
    for m in [(1, 0), (3, 2), (7, -5), (21, 0)]:
        f = single_mode(g, m)
        k2 = m[0] ** 2 + m[1] ** 2
        for t in (1e-3, 0.1, 0.5, 1.0):
            got = heat_evolve(f, t).coeffs[m[0] % g.n, m[1] % g.n]
            decay = max(decay, abs(got - math.exp(-k2 * t)))
    f = random_field(g, np.random.default_rng(1), kmax=20, include_mean=True)
    scale = np.max(np.abs(f.coeffs))
    semi = 0.0
    for t, r in [(0.013, 0.021), (0.25, 0.5), (1e-6, 0.3)]:
        a = heat_evolve(heat_evolve(f, t), r).coeffs
        b = heat_evolve(f, t + r).coeffs
        semi = max(semi, float(np.max(np.abs(a - b))) / scale)
    elapsed = time.perf_counter() - t0
    ok = decay <= 1e-14 and semi <= 1e-14 and elapsed < 1.0
    assert report(1, ok, f"single-mode error {decay:.2e}, semigroup error {semi:.2e} (tol 1e-14), {elapsed:.2f}s")


def test_c2_heat_smoothing_suite():
    t0 = time.perf_counter()
    g = Grid(2, 128)
    worst = {}
    energy = 0.0
    for child in np.random.SeedSequence(2).spawn(50):
        u0 = random_field(g, np.random.default_rng(child), kmax=12)
        r = verify_smoothing(u0, 1.5, 0.5, 0.5)
        for key in ("sup_Hs", "int_Hs1", "int_weighted", "int_weighted_half", "int_Lq"):
            worst[key] = min(worst.get(key, math.inf), r.margins[key])
        energy = max(energy, r.energy_residual)
    elapsed = time.perf_counter() - t0
    ok = min(worst.values()) >= -1e-6 and energy <= 1e-8 and elapsed < 60
    margins = ", ".join(f"{k} {v:+.2e}" for k, v in worst.items())
    assert report(2, ok, f"min margins {margins}; energy residual {energy:.1e}; {elapsed:.1f}s")


def test_c3_counterexample_divergence():
    t0 = time.perf_counter()
    scan = counterexample_divergence_scan(2, 0.25, [1e-3, 1e-5, 1e-7, 1e-9], j_max=50)
    growth = scan.I[-1] - scan.I[0]
    need = 0.2 * math.exp(-1.0) * shell_constant(2)
    chain_ok = all(st.holds() for st in scan.steps)
    step_min = [min(st.margins[k] for st in scan.steps) for k in range(4)]
    # oracle: direct extended-precision summation
    sums = []
    for N in (10**3, 10**6):
        j = np.arange(1, N + 1, dtype=np.longdouble)
        direct = float(np.sum(1 / ((j + 1) * np.log(2 + j))))
        sums.append(abs(log_sum(N, 1) - direct) / direct)
    elapsed = time.perf_counter() - t0
    ok = growth >= need and chain_ok and max(sums) <= 1e-12 and bool(np.all(np.diff(scan.I) > 0)) and elapsed < 60
    assert report(
        3,
        ok,
        f"growth {growth:.4f} >= {need:.4f}; chain j={scan.j0}..50 min step margins "
        + ", ".join(f"{m:.2e}" for m in step_min)
        + f"; S(N) rel errors {sums[0]:.1e}, {sums[1]:.1e}; {elapsed:.1f}s",
    )


def test_c4_maximal_regularity():
    t0 = time.perf_counter()
    g = Grid(2, 64)
    hom, excess = 0.0, -math.inf
    for child in np.random.SeedSequence(4).spawn(100):
        rng = np.random.default_rng(child)
        T = rng.uniform(0.1, 1.0)
        f = random_forcing(g, rng, np.linspace(0.0, T, 7), kmax=10)
        rep = maxreg_ratio(f, rng.uniform(0.0, 2.0), 2.0)
        hom = max(hom, rep.hom_ratio)
        excess = max(excess, rep.l2_inhom - rep.l2_bound)
    elapsed = time.perf_counter() - t0
    ok = hom <= 1 + 1e-6 and excess <= 1e-6 and elapsed < 120
    assert report(4, ok, f"max homogeneous ratio {hom:.6f}; max L2 ratio minus e^T {excess:+.3e}; {elapsed:.1f}s")


def test_c5_stokes_fitted_constants():
    t0 = time.perf_counter()
    s, eps = 1.5, 0.5
    r = (s + eps) / s
    a = stokes_ensemble(Grid(2, 128), 5, 16, s, eps, r, 0.5)
    b = stokes_ensemble(Grid(2, 256), 5, 16, s, eps, r, 0.5)
    drift = max(abs(b.C_eps / a.C_eps - 1), abs(b.C_r / a.C_r - 1))
    elapsed = time.perf_counter() - t0
    ok = a.all_hold() and b.all_hold() and drift <= 0.2 and elapsed < 300
    assert report(5, ok, f"C_eps {a.C_eps:.4f}/{b.C_eps:.4f}, C_r {a.C_r:.4f}/{b.C_r:.4f} (n=128/256), drift {drift:.1e}; {elapsed:.1f}s")


@pytest.fixture(scope="module")
def mhd_campaign():
    t0 = time.perf_counter()
    g = Grid(2, 256)
    u0, B0 = orszag_tang(g)
    ser = mhd_run(u0, B0, 2.0, 0.5, 0.5)
    # below the CFL limit of the peak field speed of the run
    vmax = float(max(ser["u_sup"].max(), ser["B_sup"].max()))
    study = temporal_convergence(u0, B0, 2.0, 0.5, 0.5, 0.8 * 0.4 * g.dx / vmax)
    return ser, study, time.perf_counter() - t0


def test_c6_mhd_run(mhd_campaign):
    ser, study, elapsed = mhd_campaign
    energy = float(np.max(np.abs(ser["energy_residual"]))) / ser.meta["M0"]
    div = float(max(ser["div_u"].max(), ser["div_B"].max()))
    done = ser.completed and ser.times[-1] == 0.5
    ok = done and energy <= 1e-6 and div <= 1e-12 and study.order >= 3 and elapsed < 600
    assert report(
        6,
        ok,
        f"reached t={ser.times[-1]}; energy residual {energy:.1e}; divergence {div:.1e}; "
        f"orders {', '.join(f'{o:.3f}' for o in study.orders)} at dt0={study.dts[0]:.3e}; {elapsed:.0f}s",
    )


def test_c7_closure(mhd_campaign):
    ser = mhd_campaign[0]
    _, k, T_star = monitor_inequalities(ser)
    B = ser["B_H[s]"]
    upto = ser.times <= T_star
    ratio = float(B[upto].max() / B[0])
    ok = T_star > 0 and ratio <= 2
    assert report(7, ok, f"T* = {T_star:.4e} (c1={k.c1:.3g}, c4={k.c4:.4g}, C={k.C_max:.4g}); max ||B||_Hs/||B0||_Hs on [0,T*] = {ratio:.6f}")


def test_c8_ode_comparison():
    t0 = time.perf_counter()
    rows = comparison_sweep()
    excess = max(r.max_excess for r in rows)
    gap = max(r.max_rel_gap for r in rows if r.M2 == 0)
    elapsed = time.perf_counter() - t0
    ok = len(rows) == 81 and excess <= 1e-8 and gap <= 1e-10 and elapsed < 30
    assert report(8, ok, f"{len(rows)} grid points; max excess {excess:.1e}; M2=0 gap {gap:.1e}; {elapsed:.1f}s")


DETERMINISM = {
    "heat-verify": {"n": 64, "count": 5},
    "counterexample": {"t_min": [1.0e-3, 1.0e-6], "j_max": 10},
    "maxreg-verify": {"n": 32, "count": 5, "kmax": 8},
    "stokes-verify": {"n": [32, 64], "count": 3, "kmax": 4},
    "mhd-run": {"n": 32, "T": 0.2},
    "ode-bound": {"eps": [0.5], "T": 0.3},
}


def test_c9_determinism(tmp_path):
    compared, differing = 0, []
    for kind, params in DETERMINISM.items():
        dirs = []
        for i in range(2):
            cfg = tmp_path / f"{kind}-{i}.yaml"
            cfg.write_text(yaml.safe_dump({"experiment": kind, "output": f"{kind}-{i}", "seed": 42, "params": params}))
            assert main([kind, "--config", str(cfg)]) == 0
            dirs.append(tmp_path / f"{kind}-{i}")
        for path in sorted(dirs[0].glob("*.csv")):
            compared += 1
            if path.read_bytes() != (dirs[1] / path.name).read_bytes():
                differing.append(f"{kind}/{path.name}")
        a = json.loads((dirs[0] / "report.json").read_text())["checks"]
        b = json.loads((dirs[1] / "report.json").read_text())["checks"]
        if a != b:
            differing.append(f"{kind}/report.json")
    ok = compared > 0 and not differing
    assert report(9, ok, f"{compared} CSV files over {len(DETERMINISM)} experiments compared byte for byte; differing: {differing or 'none'}")
