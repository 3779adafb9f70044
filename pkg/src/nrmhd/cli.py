"""Command-line experiment runner.

``nrmhd <experiment> --config run.yaml [--jobs N] [--seed S]``

Every run writes into its output directory:

* ``report.json``: the fully resolved configuration (defaults included),
  every check with its tag and margin, and experiment-specific results;
* one or more CSV files with full-precision numbers;
* ``summary.txt``: one line per check;
* a PNG figure beside each CSV.

Exit status is 0 when every check passes, 1 when a check fails and 2 on a
configuration or runtime error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import yaml

from . import __version__
from .analysis import NoExistenceTime, comparison_sweep
from .heat import (
    counterexample_divergence_scan,
    cq_constant,
    heat_evolve,
    log_sum,
    shell_constant,
    verify_smoothing,
)
from .maxreg import maxreg_ratio, random_forcing, stokes_ensemble
from .mhd import (
    BlowUpDetected,
    CflViolation,
    NormSeries,
    initial_data,
    mhd_run,
    monitor_inequalities,
    temporal_convergence,
)
from .plotting import render_directory
from .reports import EstimateReport, summary_lines, write_csv, write_json
from .spectral import Grid, SpectralField, random_field

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


class ConfigError(ValueError):
    """A configuration field is missing, mistyped or violates a precondition."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config field {field!r}: {message}")
        self.field = field


# ---------------------------------------------------------------------------
# configuration


DEFAULTS = {
    "heat-verify": {
        "d": 2,
        "n": 128,
        "count": 50,
        "s": 1.5,
        "T": 0.5,
        "q": 0.5,
        "kmax": 12,
        "margin_tol": 1e-6,
        "energy_rtol": 1e-8,
        "exact_tol": 1e-14,
    },
    "counterexample": {
        "d": 2,
        "T": 0.25,
        "t_min": [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9],
        "j_max": 50,
        "growth_fraction": 0.2,
        "log_sum_N": [1000, 1000000],
        "log_sum_rtol": 1e-12,
        "chain_rtol": 1e-10,
    },
    "maxreg-verify": {
        "d": 2,
        "n": 64,
        "count": 100,
        "r": 2.0,
        "s_range": [0.0, 2.0],
        "T_range": [0.1, 1.0],
        "n_times": 7,
        "kmax": 10,
        "tol": 1e-6,
    },
    "stokes-verify": {
        "d": 2,
        "n": [128, 256],
        "count": 16,
        "s": 1.5,
        "eps": 0.5,
        "r": None,
        "T": 0.5,
        "n_times": 9,
        "kmax": 6,
        "refinement_tol": 0.2,
    },
    "mhd-run": {
        "preset": "orszag-tang-2d",
        "d": 2,
        "n": 128,
        "L": 1.0,
        "s": 2.0,
        "eps": 0.5,
        "T": 0.5,
        "dt": None,
        "cfl": 0.4,
        "blowup_factor": 1e6,
        "kmax": 4,
        "amplitude": 1.0,
        "energy_rtol": 1e-6,
        "div_tol": 1e-12,
        "convergence": True,
        "dt0": None,
        "levels": 3,
        "min_order": 3.0,
    },
    "constants-fit": {
        "series": "series.csv",
        "meta": None,
    },
    "ode-bound": {
        "eps": [0.3, 0.5, 0.7],
        "c1": [0.0, 0.5, 1.0],
        "M1": [0.5, 1.0, 1.5],
        "M2": [0.0, 1.0, 2.0],
        "T": 1.0,
        "dt": 1e-3,
        "min_bracket": 1e-3,
        "excess_tol": 1e-8,
        "equality_tol": 1e-10,
    },
    "report": {
        "runs": [],
    },
}

EXPERIMENTS = tuple(DEFAULTS)

# parameters whose value must not exceed 1
_HORIZONS = {"heat-verify": "T", "counterexample": "T", "stokes-verify": "T", "mhd-run": "T", "ode-bound": "T"}


def _as_float(name, v):
    # YAML 1.1 reads "1e-3" as a string
    try:
        out = float(v)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected a number, got {v!r}") from None
    if math.isnan(out):
        raise ConfigError(name, "NaN is not allowed")
    return out


def _as_int(name, v):
    if isinstance(v, bool):
        raise ConfigError(name, f"expected an integer, got {v!r}")
    f = _as_float(name, v)
    if f != int(f):
        raise ConfigError(name, f"expected an integer, got {v!r}")
    return int(f)


def _coerce(name, default, value):
    if default is None:
        return None if value is None else _as_float(name, value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        return _as_int(name, value)
    if isinstance(default, float):
        return _as_float(name, value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(name, f"expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        items = value if isinstance(value, list) else [value]
        if not items and default:
            raise ConfigError(name, "list must not be empty")
        proto = default[0] if default else ""
        return [_coerce(f"{name}[{i}]", proto, v) for i, v in enumerate(items)]
    raise ConfigError(name, "unsupported type")


def _validate(kind: str, p: dict) -> None:
    def need(cond, field, msg):
        if not cond:
            raise ConfigError(field, msg)

    if "d" in p:
        need(p["d"] in (2, 3), "d", "dimension must be 2 or 3")
    for key in ("n", "count", "kmax", "n_times", "levels", "j_max"):
        if key in p and p[key] is not None:
            vals = p[key] if isinstance(p[key], list) else [p[key]]
            need(all(v >= 1 for v in vals), key, "must be a positive integer")
    if "n" in p and "kmax" in p:
        for n in p["n"] if isinstance(p["n"], list) else [p["n"]]:
            need(p["kmax"] <= n // 3, "kmax", f"must not exceed n/3 = {n // 3}")
    if "s" in p and kind in ("stokes-verify", "mhd-run"):
        need(p["s"] > p["d"] / 2, "s", f"requires s > d/2 = {p['d'] / 2}")
    if "s" in p and kind == "heat-verify":
        need(p["s"] >= 0, "s", "must be nonnegative")
    if "eps" in p and isinstance(p["eps"], float):
        need(0 < p["eps"] < 1, "eps", "requires 0 < eps < 1")
        if kind == "mhd-run":
            need(p["s"] - 1 + p["eps"] > 0, "eps", "requires s - 1 + eps > 0")
    if kind == "ode-bound":
        need(all(0 < e < 1 for e in p["eps"]), "eps", "every value must lie in (0, 1)")
        for key in ("c1", "M1", "M2"):
            need(all(v >= 0 and math.isfinite(v) for v in p[key]), key, "values must be finite and nonnegative")
    if kind in _HORIZONS:
        T = p[_HORIZONS[kind]]
        need(0 < T <= 1, "T", "requires 0 < T <= 1")
    if "q" in p:
        need(0 < p["q"] < 1, "q", "requires 0 < q < 1")
    if kind == "maxreg-verify":
        need(p["r"] > 1, "r", "requires r > 1")
        lo, hi = p["s_range"] if len(p["s_range"]) == 2 else (None, None)
        need(lo is not None and 0 <= lo <= hi, "s_range", "expected [lo, hi] with 0 <= lo <= hi")
        lo, hi = p["T_range"] if len(p["T_range"]) == 2 else (None, None)
        need(lo is not None and 0 < lo <= hi <= 1, "T_range", "expected [lo, hi] with 0 < lo <= hi <= 1")
        need(p["n_times"] >= 2, "n_times", "needs at least two samples")
    if kind == "stokes-verify":
        if p["r"] is None:
            p["r"] = (p["s"] + p["eps"]) / p["s"]
        need(p["r"] > 1, "r", "requires r > 1")
        need(p["n_times"] >= 2, "n_times", "needs at least two samples")
    if kind == "counterexample":
        need(p["d"] == 2 or p["d"] == 3, "d", "dimension must be 2 or 3")
        need(all(0 < t < p["T"] for t in p["t_min"]), "t_min", "values must lie in (0, T)")
        need(all(a > b for a, b in zip(p["t_min"], p["t_min"][1:])), "t_min", "must be strictly decreasing")
    if kind == "mhd-run":
        need(p["preset"] in ("orszag-tang-2d", "random"), "preset", "choose 'orszag-tang-2d' or 'random'")
        need(not (p["preset"] == "orszag-tang-2d" and p["d"] != 2), "d", "the Orszag-Tang preset is two-dimensional")
        for key in ("dt", "dt0"):
            need(p[key] is None or p[key] > 0, key, "must be positive")
        need(0 < p["cfl"], "cfl", "must be positive")
        need(p["L"] > 0, "L", "must be positive")
        need(p["levels"] >= 3, "levels", "an order needs at least three levels")


def load_config(path, kind: str, seed: Optional[int] = None) -> dict:
    """Read a YAML config and return it with every default filled in.

    Layout::

        experiment: mhd-run     # optional, must match the subcommand
        output: runs/ot         # default: out/<experiment>
        seed: 0
        params: {...}           # experiment parameters, see DEFAULTS
    """
    if kind not in DEFAULTS:
        raise ConfigError("experiment", f"unknown experiment {kind!r}")
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}") from None
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    unknown = set(raw) - {"experiment", "output", "seed", "params"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown top-level field")
    if raw.get("experiment", kind) != kind:
        raise ConfigError("experiment", f"config is for {raw['experiment']!r}, not {kind!r}")

    params_in = raw.get("params") or {}
    if not isinstance(params_in, dict):
        raise ConfigError("params", "must be a mapping")
    defaults = DEFAULTS[kind]
    extra = set(params_in) - set(defaults)
    if extra:
        raise ConfigError(f"params.{sorted(extra)[0]}", f"not a parameter of {kind}")
    params = {}
    for key, default in defaults.items():
        value = params_in.get(key, default)
        if kind == "stokes-verify" and key == "n":
            params[key] = _coerce(f"params.{key}", [1], value)
        elif key in ("dt", "dt0", "r", "meta") and value is None:
            params[key] = None
        elif key == "meta":
            params[key] = _coerce(f"params.{key}", "", value)
        else:
            params[key] = _coerce(f"params.{key}", default, value)
    try:
        _validate(kind, params)
    except ConfigError as exc:
        if not exc.field.startswith("params."):
            raise ConfigError(f"params.{exc.field}", str(exc).split(": ", 1)[1]) from None
        raise

    cfg_seed = raw.get("seed", 0) if seed is None else seed
    output = raw.get("output", f"out/{kind}")
    if not isinstance(output, str):
        raise ConfigError("output", "expected a path string")
    base = Path(path).resolve().parent
    return {
        "experiment": kind,
        "seed": _as_int("seed", cfg_seed),
        "output": str((base / output) if not Path(output).is_absolute() else Path(output)),
        "params": params,
    }


# ---------------------------------------------------------------------------
# helpers


def _map(fn: Callable, items: list, jobs: int) -> list:
    """Ordered map; the result does not depend on the worker count."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _children(seed: int, count: int) -> list:
    return [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(count)]


def _worst(name, tag, pairs, atol=0.0, rtol=0.0, **details) -> EstimateReport:
    """Check with the smallest margin among (lhs, rhs) pairs."""
    i = int(np.argmin([r - l for l, r in pairs]))
    lhs, rhs = pairs[i]
    return EstimateReport(name, float(lhs), float(rhs), rtol=rtol, atol=atol, tag=tag, details={"worst_sample": i, **details})


# ---------------------------------------------------------------------------
# experiments
#
# Each returns (checks, results); CSVs go straight into ``out``.


def _heat_sample(job):
    rng, p = job
    g = Grid(p["d"], p["n"])
    u0 = random_field(g, rng, kmax=p["kmax"])
    return verify_smoothing(u0, p["s"], p["T"], p["q"])


def run_heat(p, seed, out: Path, jobs: int):
    g = Grid(p["d"], p["n"])
    checks = []

    # exactness of the semigroup on a single mode and on random data
    m = (3,) + (1,) * (p["d"] - 1)
    c = np.zeros(g.shape, dtype=complex)
    c[m] = c[tuple(-x for x in m)] = 1.0
    mode = SpectralField(g, c)
    k2 = float(sum(x * x for x in m)) / g.L**2
    times = [0.01, 0.1, 0.5, 1.0]
    decay_err = max(abs(heat_evolve(mode, t).coeffs[m] - math.exp(-k2 * t)) for t in times)
    checks.append(EstimateReport("heat.single_mode_decay", decay_err, p["exact_tol"], rtol=0.0, tag="heat semigroup / Fourier multiplier"))
    f = random_field(g, np.random.default_rng(seed), kmax=p["kmax"])
    a = heat_evolve(heat_evolve(f, 0.013), 0.021).coeffs
    b = heat_evolve(f, 0.034).coeffs
    semi = float(np.max(np.abs(a - b)) / np.max(np.abs(f.coeffs)))
    checks.append(EstimateReport("heat.semigroup_law", semi, p["exact_tol"], rtol=0.0, tag="heat semigroup / S(t)S(r) = S(t+r)"))

    reps = _map(_heat_sample, [(r, p) for r in _children(seed, p["count"])], jobs)
    rows = []
    for i, r in enumerate(reps):
        rows.append(
            [
                i,
                r.sup_Hs,
                r.int_Hs1,
                r.int_weighted,
                r.int_Lq,
                r.bound,
                r.Lq_bound,
                r.sup_Hs / r.bound,
                r.int_Hs1 / r.bound,
                r.int_weighted / (0.5 * r.bound),
                r.int_Lq / r.Lq_bound,
                r.energy_residual,
            ]
        )
    header = [
        "sample", "sup_Hs", "int_Hs1", "int_weighted", "int_Lq", "bound", "Lq_bound",
        "ratio_sup", "ratio_int_Hs1", "ratio_weighted", "ratio_Lq", "energy_residual",
    ]
    write_csv(out / "heat_ensemble.csv", header, rows)

    tol = p["margin_tol"]
    checks.append(_worst("heat.sup_Hs", "heat smoothing / sup-in-time H^s bound", [(r.sup_Hs, r.bound) for r in reps], atol=tol))
    checks.append(_worst("heat.int_Hs1", "heat smoothing / time-integrated H^{s+1} bound", [(r.int_Hs1, r.bound) for r in reps], atol=tol))
    checks.append(
        _worst("heat.int_t_Hs2", "heat smoothing / time-weighted H^{s+2} bound", [(r.int_weighted, 0.5 * r.bound) for r in reps], atol=tol)
    )
    checks.append(
        _worst("heat.int_Lq", "heat smoothing / L^q-in-time H^{s+2} bound", [(r.int_Lq, r.Lq_bound) for r in reps], atol=tol, C_q=cq_constant(p["q"]))
    )
    checks.append(
        _worst("heat.weighted_energy", "heat smoothing / weighted energy identity", [(r.weighted_lhs, r.weighted_rhs) for r in reps], atol=tol)
    )
    checks.append(
        EstimateReport(
            "heat.energy_equality",
            max(r.energy_residual for r in reps),
            p["energy_rtol"],
            rtol=0.0,
            tag="heat smoothing / energy equality, relative residual",
        )
    )
    return checks, {"C_q": cq_constant(p["q"]), "samples": [r.to_dict() for r in reps]}


def run_counterexample(p, seed, out: Path, jobs: int):
    scan = counterexample_divergence_scan(p["d"], p["T"], p["t_min"], p["j_max"])
    scan_rows = [[t, i, int(n), s, lb, ra] for t, i, n, s, lb, ra in scan.rows_with_bound()]
    write_csv(out / "scan.csv", ["t_min", "I", "N", "S", "lower_bound", "ratio"], scan_rows)
    chain_rows = []
    for st in scan.steps:
        chain_rows.append(
            [st.j, st.full, st.restricted, st.damped_const, st.interval_bound, st.shell_bound, st.observed_damping, *st.margins]
        )
    write_csv(
        out / "chain.csv",
        ["j", "full", "restricted", "damped_const", "interval_bound", "shell_bound", "observed_damping",
         "margin_restrict", "margin_damp", "margin_interval", "margin_shell"],
        chain_rows,
    )

    checks = []
    tag = "unbounded H^2 integral / "
    steps = np.diff(scan.I)
    checks.append(EstimateReport("counterexample.monotone", float(-steps.min()) if steps.size else 0.0, 0.0, rtol=0.0, tag=tag + "I(t_min) increases as t_min decreases"))
    checks.append(_worst("counterexample.lower_bound", tag + "I(t_min) above e^{-1} sqrt(c_shell) S(N)", list(zip(scan.lower_bound, scan.I)), rtol=1e-12))
    c_shell = shell_constant(p["d"])
    need = p["growth_fraction"] * math.exp(-1.0) * c_shell
    checks.append(
        EstimateReport(
            "counterexample.growth",
            need,
            float(scan.I[-1] - scan.I[0]),
            rtol=0.0,
            tag=tag + f"growth between t_min={scan.t_min[0]:g} and {scan.t_min[-1]:g}",
            details={"c_shell": c_shell, "fraction": p["growth_fraction"]},
        )
    )
    labels = ("restrict", "damp", "interval", "shell")
    for k, label in enumerate(labels):
        pairs = [(-st.margins[k], 0.0) for st in scan.steps]
        rep = _worst(f"counterexample.chain_{label}", tag + f"slice chain step {k + 1}, j={scan.j0}..{p['j_max']}", pairs)
        rep.rtol = p["chain_rtol"]
        rep.atol = p["chain_rtol"] * max(st.full for st in scan.steps)
        checks.append(rep)
    for N in p["log_sum_N"]:
        j = np.arange(scan.j0, N + 1, dtype=np.longdouble)
        direct = float(np.sum(1 / ((j + 1) * np.log(2 + j))))
        got = log_sum(N, scan.j0)
        checks.append(
            EstimateReport(
                f"counterexample.log_sum[N={N}]",
                abs(got - direct),
                p["log_sum_rtol"] * abs(direct),
                rtol=0.0,
                tag=tag + "S(N) against direct extended-precision summation",
                details={"S": got, "direct": direct},
            )
        )
    results = {"j0": scan.j0, "c_shell": c_shell, "I": scan.I.tolist(), "S": scan.S.tolist()}
    return checks, results


def _maxreg_sample(job):
    rng, p = job
    g = Grid(p["d"], p["n"])
    T = rng.uniform(*p["T_range"])
    s = rng.uniform(*p["s_range"])
    f = random_forcing(g, rng, np.linspace(0.0, T, p["n_times"]), kmax=p["kmax"])
    return maxreg_ratio(f, s, p["r"])


def run_maxreg(p, seed, out: Path, jobs: int):
    reps = _map(_maxreg_sample, [(r, p) for r in _children(seed, p["count"])], jobs)
    rows = [[i, r.s, r.T, r.lhs, r.rhs, r.ratio, r.hom_ratio, r.l2_inhom, r.l2_bound, r.l2_inhom / r.l2_bound] for i, r in enumerate(reps)]
    write_csv(
        out / "maxreg_ensemble.csv",
        ["sample", "s", "T", "lhs", "rhs", "ratio", "hom_ratio", "l2_inhom", "l2_bound", "l2_ratio_over_bound"],
        rows,
    )
    tol = p["tol"]
    tag = "maximal regularity / "
    checks = [_worst("maxreg.l2_inhomogeneous", tag + "L^2 ratio against e^T", [(r.l2_inhom, r.l2_bound) for r in reps], atol=tol)]
    if p["r"] == 2:
        checks.append(_worst("maxreg.homogeneous", tag + "homogeneous ratio at r = 2", [(r.hom_ratio, 1.0) for r in reps], atol=tol))
        checks.append(_worst("maxreg.inhomogeneous", tag + "inhomogeneous ratio at r = 2", [(r.ratio, 1.0) for r in reps], atol=tol))
    return checks, {"max_hom_ratio": max(r.hom_ratio for r in reps), "max_ratio": max(r.ratio for r in reps)}


def _stokes_level(job):
    n, p, seed = job
    return stokes_ensemble(Grid(p["d"], n), seed, p["count"], p["s"], p["eps"], p["r"], p["T"], p["n_times"], p["kmax"])


def run_stokes(p, seed, out: Path, jobs: int):
    levels = _map(_stokes_level, [(n, p, seed) for n in p["n"]], jobs)
    rows = []
    checks = []
    tag = "forced Stokes H^{s+1} estimate / "
    for n, ens in zip(p["n"], levels):
        for rep in ens.reports:
            d = rep.details
            # running sample index across levels keeps the figure axis monotone
            rows.append([len(rows), n, rep.lhs, d["C_eps"], d["C_r"], d["M1"], d["f_norm"], ens.fitted_bound(rep)])
        checks.append(
            _worst(f"stokes.fitted_bound[n={n}]", tag + "LHS below fitted C_eps, C_r bound", [(r.lhs, ens.fitted_bound(r)) for r in ens.reports], rtol=1e-12)
        )
        checks.append(
            _worst(
                f"stokes.heat_branch_formula[n={n}]",
                tag + "fitted C_eps below the smoothing-bound constant",
                [(r.details["C_eps"], r.details["C_eps_formula"]) for r in ens.reports],
                rtol=1e-12,
            )
        )
    write_csv(out / "stokes_ensemble.csv", ["sample", "n", "lhs", "C_eps", "C_r", "M1", "f_norm", "fitted_bound"], rows)
    base = levels[0]
    tol = p["refinement_tol"]
    for n, ens in zip(p["n"][1:], levels[1:]):
        for name in ("C_eps", "C_r"):
            a, b = getattr(base, name), getattr(ens, name)
            checks.append(
                EstimateReport(
                    f"stokes.{name}_refinement[{p['n'][0]}->{n}]",
                    abs(b / a - 1) if a > 0 else math.inf,
                    tol,
                    rtol=0.0,
                    tag=tag + f"fitted {name} stable under refinement",
                    details={"coarse": a, "fine": b},
                )
            )
    results = {f"n={n}": {"C_eps": e.C_eps, "C_r": e.C_r} for n, e in zip(p["n"], levels)}
    return checks, results


def _series_checks(ser: NormSeries, T_required: float, p: dict):
    checks = []
    done = ser.completed and ser.times[-1] >= T_required * (1 - 1e-12)
    checks.append(
        EstimateReport(
            "mhd.completed",
            0.0 if done else 1.0,
            0.0,
            rtol=0.0,
            tag="MHD run / reached final time without blow-up flag",
            details={"t_end": float(ser.times[-1]), "blowup_reason": ser.meta.get("blowup_reason")},
        )
    )
    M0 = ser.meta["M0"]
    checks.append(
        EstimateReport(
            "mhd.energy_balance",
            float(np.max(np.abs(ser["energy_residual"]))) / M0 if M0 > 0 else 0.0,
            p.get("energy_rtol", 1e-6),
            rtol=0.0,
            tag="MHD energy balance / relative residual",
        )
    )
    checks.append(
        EstimateReport(
            "mhd.div_free",
            float(max(ser["div_u"].max(), ser["div_B"].max())),
            p.get("div_tol", 1e-12),
            rtol=0.0,
            tag="MHD run / divergence of u and B",
        )
    )
    return checks


def _monitor(ser: NormSeries, out: Path):
    reps, k, T_star = monitor_inequalities(ser)
    tags = {
        "energy": "MHD a priori / energy",
        "div_free": "MHD a priori / divergence",
        "u": "MHD a priori / velocity growth",
        "B": "MHD a priori / magnetic growth",
        "stokes": "MHD a priori / Stokes split along the run",
        "closure": "MHD closure / bounds on [0, T*]",
    }
    for r in reps:
        r.name = "monitor." + r.name
        r.tag = tags.get(r.name.split(".")[1], "MHD a priori")
    # smallest positive double as lhs makes the check strict: T* > 0
    reps.append(
        EstimateReport(
            "closure.T_star_positive",
            math.ulp(0.0),
            T_star,
            rtol=0.0,
            tag="MHD closure / existence time from fitted constants",
        )
    )
    write_json(out / "constants.json", {"constants": k.to_dict(), "T_star": T_star})
    return reps, {"constants": k.to_dict(), "T_star": T_star}


def run_mhd(p, seed, out: Path, jobs: int):
    grid = Grid(p["d"], p["n"], p["L"])
    kw = {"kmax": p["kmax"], "amplitude": p["amplitude"]} if p["preset"] == "random" else {}
    u0, B0 = initial_data(p["preset"], grid, seed, **kw)
    ser = mhd_run(u0, B0, p["s"], p["eps"], p["T"], dt=p["dt"], cfl=p["cfl"], blowup_factor=p["blowup_factor"])
    ser.to_csv(out / "series.csv")
    write_json(out / "series_meta.json", ser.meta)
    checks = _series_checks(ser, p["T"], p)
    results = {"meta": ser.meta}
    if ser.completed:
        reps, extra = _monitor(ser, out)
        checks += reps
        results.update(extra)
    if p["convergence"] and ser.completed:
        dt0 = p["dt0"]
        if dt0 is None:
            # margin under the CFL limit set by the peak field speed of the run
            vmax = float(max(ser["u_sup"].max(), ser["B_sup"].max()))
            dt0 = 0.8 * p["cfl"] * grid.dx / max(vmax, 1e-300)
        study = temporal_convergence(u0, B0, p["s"], p["eps"], p["T"], dt0, levels=p["levels"], cfl=p["cfl"])
        rows = [[dt, e] for dt, e in zip(study.dts, study.errors)]
        write_csv(out / "convergence.csv", ["dt", "error"], rows)
        checks.append(
            EstimateReport(
                "mhd.temporal_order",
                p["min_order"],
                study.order,
                rtol=0.0,
                tag="MHD time stepper / observed order from successive halvings",
                details=study.to_dict(),
            )
        )
        results["convergence"] = study.to_dict()
    return checks, results


def run_constants(p, seed, out: Path, jobs: int, base: Path):
    series = Path(p["series"])
    series = series if series.is_absolute() else base / series
    meta_path = Path(p["meta"]) if p["meta"] else series.with_name("series_meta.json")
    meta_path = meta_path if meta_path.is_absolute() else base / meta_path
    try:
        meta = json.loads(meta_path.read_text())
        ser = NormSeries.from_csv(series, meta)
    except OSError as exc:
        raise ConfigError("params.series", f"cannot read {exc.filename}") from None
    reps, results = _monitor(ser, out)
    return reps, results


def _ode_chunk(job):
    eps, p = job
    return comparison_sweep([eps], p["c1"], p["M1"], p["M2"], T=p["T"], dt=p["dt"], min_bracket=p["min_bracket"])


def run_ode(p, seed, out: Path, jobs: int):
    chunks = _map(_ode_chunk, [(e, p) for e in p["eps"]], jobs)
    rows = [r for chunk in chunks for r in chunk]
    write_csv(
        out / "ode_sweep.csv",
        ["row", "eps", "c1", "M1", "M2", "samples", "max_excess", "max_rel_gap", "blowup_time"],
        [[i, r.eps, r.c1, r.M1, r.M2, r.samples, r.max_excess, r.max_rel_gap, math.nan if r.blowup_time is None else r.blowup_time] for i, r in enumerate(rows)],
    )
    tag = "comparison ODE / "
    checks = [
        _worst("ode.excess", tag + "trajectory never above closed-form bound (relative)", [(r.max_excess, p["excess_tol"]) for r in rows]),
    ]
    eq = [r for r in rows if r.M2 == 0]
    if eq:
        checks.append(_worst("ode.equality_M2_0", tag + "equality on the M2 = 0 slice (relative)", [(r.max_rel_gap, p["equality_tol"]) for r in eq]))
    empty = sum(1 for r in rows if r.samples == 0)
    checks.append(EstimateReport("ode.coverage", float(empty), 0.0, rtol=0.0, tag=tag + "every grid point has samples where the bound is defined"))
    return checks, {"rows": len(rows)}


def run_report(p, seed, out: Path, jobs: int, base: Path):
    checks = []
    runs = {}
    for entry in p["runs"]:
        d = Path(entry)
        d = d if d.is_absolute() else base / d
        rp = d / "report.json"
        try:
            rep = json.loads(rp.read_text())
        except OSError:
            raise ConfigError("params.runs", f"no report.json in {d}") from None
        runs[str(entry)] = {"experiment": rep["experiment"], "passed": rep["passed"], "figures": [str(x.name) for x in render_directory(d)]}
        for c in rep["checks"]:
            checks.append(
                EstimateReport(
                    f"{rep['experiment']}:{c['name']}",
                    float(c["lhs"]),
                    float(c["rhs"]),
                    constant=None if c["constant"] is None else float(c["constant"]),
                    rtol=c["rtol"],
                    atol=c.get("atol", 0.0),
                    tag=c.get("tag", ""),
                )
            )
    return checks, {"runs": runs}


RUNNERS = {
    "heat-verify": run_heat,
    "counterexample": run_counterexample,
    "maxreg-verify": run_maxreg,
    "stokes-verify": run_stokes,
    "mhd-run": run_mhd,
    "ode-bound": run_ode,
}


def run(config: dict, jobs: int = 1) -> tuple:
    """Execute a resolved config; returns ``(passed, checks, out_dir)``."""
    kind = config["experiment"]
    out = Path(config["output"])
    out.mkdir(parents=True, exist_ok=True)
    p, seed = config["params"], config["seed"]
    if kind in RUNNERS:
        checks, results = RUNNERS[kind](p, seed, out, jobs)
    else:
        base = Path(config.get("base", "."))
        fn = run_constants if kind == "constants-fit" else run_report
        checks, results = fn(p, seed, out, jobs, base)
    passed = all(c.passed for c in checks)
    write_json(
        out / "report.json",
        {
            "experiment": kind,
            "version": __version__,
            "config": {k: v for k, v in config.items() if k != "base"},
            "passed": passed,
            "checks": [c.to_dict() for c in checks],
            "results": results,
        },
    )
    lines = summary_lines(checks)
    lines.append(f"{'PASS' if passed else 'FAIL'}  {kind}: {sum(c.passed for c in checks)}/{len(checks)} checks hold")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    if kind != "report":
        render_directory(out)
    return passed, checks, out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nrmhd", description="Verification experiments for the viscous non-resistive MHD system.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="experiment", required=True, metavar="experiment")
    for kind in EXPERIMENTS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", required=True, help="YAML configuration file")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for ensembles and sweeps")
        sp.add_argument("--seed", type=int, default=None, help="override the seed in the config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs", "must be at least 1")
        cfg = load_config(args.config, args.experiment, args.seed)
        cfg["base"] = str(Path(args.config).resolve().parent)
        passed, checks, out = run(cfg, args.jobs)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (CflViolation, BlowUpDetected, NoExistenceTime, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print((out / "summary.txt").read_text(), end="")
    return EXIT_PASS if passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
