"""
Pseudo-spectral integration of the viscous, non-resistive MHD system

    u_t - Laplace u + (u . grad) u + grad p = (B . grad) B
    B_t + (u . grad) B = (B . grad) u,      div u = div B = 0

on the periodic box.  The pressure is never formed: both nonlinear terms are
Leray-projected.  Time stepping is Krogstad's exponential
fourth-order Runge-Kutta method: the viscous factor ``exp(-|k|^2 t)`` and its
phi-function integrals are applied exactly, so stiff modes relax to the right
quasi-steady state and no mode is ever amplified.

Running time-integrals of the tracked norms are carried as extra ODE
components through the same Runge-Kutta stages, so they share the scheme's
fourth-order accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.fft as sfft

from .analysis import existence_time
from .reports import EstimateReport, read_csv, write_csv
from .spectral import (
    Grid,
    VectorField,
    divergence_residual,
    random_field,
)


class CflViolation(RuntimeError):
    pass


class BlowUpDetected(RuntimeError):
    def __init__(self, t: float, reason: str):
        super().__init__(f"blow-up candidate at t={t:.6g}: {reason}")
        self.t = t
        self.reason = reason


class SeriesTooShort(ValueError):
    pass


def check_parameters(d: int, s: float, eps: float) -> None:
    if d not in (2, 3):
        raise ValueError(f"d must be 2 or 3, got {d}")
    if not s > d / 2:
        raise ValueError(f"s must exceed d/2 = {d / 2}, got {s}")
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie strictly inside (0, 1), got {eps}")


@dataclass(frozen=True)
class MhdState:
    u: VectorField
    B: VectorField
    t: float = 0.0

    def __post_init__(self):
        for name in ("u", "B"):
            v = getattr(self, name)
            if not isinstance(v, VectorField):
                raise TypeError(f"{name} must be a VectorField")
            if divergence_residual(v) > 1e-12:
                raise ValueError(f"{name} is not divergence-free")
        if self.u.grid != self.B.grid:
            raise ValueError("u and B live on different grids")

    @property
    def grid(self) -> Grid:
        return self.u.grid


# ----------------------------------------------------------------------------
# spectral kernels on raw coefficient arrays


class _Ops:
    def __init__(self, grid: Grid, s: float = 2.0, eps: float = 0.5):
        self.grid = grid
        self.d = grid.d
        self.k = grid.k
        self.k2 = grid.k2
        self.mask = grid.dealias_mask
        self.vol = grid.volume
        self.k2safe = np.where(self.k2 > 0, self.k2, 1.0)
        self.s = s
        self.eps = eps
        hs = lambda sig: grid.symbol_power(2 * sig) + (1.0 if sig > 0 else 0.0)
        self.w_grad = self.k2
        self.w_se = hs(s + eps)
        self.w_s1 = hs(s + 1)
        self.w_sm1e = hs(s - 1 + eps)
        self.w_sm1 = hs(s - 1)
        self.w_s = hs(s)
        self.w_grad_s = grid.symbol_power(2 * s + 2) + self.k2
        self._factors = {}
        n = grid.n
        self._half = n // 2 + 1
        self._axes = tuple(range(-grid.d, 0))
        self._ntot = n**grid.d
        self._cols = n - np.arange(self._half, n)
        self._flip = (-np.arange(n)) % n

    def _to_phys(self, c: np.ndarray) -> np.ndarray:
        # real inverse transform from the nonnegative half of the last axis
        return sfft.irfftn(c[..., : self._half], s=self.grid.shape, axes=self._axes) * self._ntot

    def _from_phys(self, x: np.ndarray) -> np.ndarray:
        h = sfft.rfftn(x, axes=self._axes) / self._ntot
        full = np.empty(x.shape, dtype=complex)
        full[..., : self._half] = h
        tail = h[..., self._cols]
        for ax in self._axes[:-1]:
            tail = np.take(tail, self._flip, axis=ax)
        full[..., self._half :] = np.conj(tail)
        return full

    def project(self, c: np.ndarray) -> np.ndarray:
        return c - self.k * (np.sum(self.k * c, axis=0) / self.k2safe)

    def factors(self, dt: float):
        if dt not in self._factors:
            z = dt * self.k2
            q1, q2, _ = _phi_functions(0.5 * z)
            p1, p2, p3 = _phi_functions(z)
            self._factors = {
                dt: (
                    np.exp(-0.5 * z),
                    np.exp(-z),
                    0.5 * dt * q1,
                    dt * q2,
                    dt * p1,
                    2.0 * dt * p2,
                    dt * (p1 - 3 * p2 + 4 * p3),
                    dt * (2 * p2 - 4 * p3),
                    dt * (4 * p3 - p2),
                )
            }
        return self._factors[dt]

    def phys(self, c: np.ndarray) -> np.ndarray:
        return self._to_phys(c * self.mask)

    def nonlinear(self, uc, Bc, diagnostics: bool = False):
        """Projected, dealiased right-hand sides and the raw Stokes forcing."""
        up, Bp = self.phys(uc), self.phys(Bc)
        ik = 1j * self.k[:, None]
        gu = self._to_phys(ik * (uc * self.mask)[None])  # gu[j, c] = d_j u_c
        gB = self._to_phys(ik * (Bc * self.mask)[None])
        uu = np.einsum("j...,jc...->c...", up, gu)
        BB = np.einsum("j...,jc...->c...", Bp, gB)
        uB = np.einsum("j...,jc...->c...", up, gB)
        Bu = np.einsum("j...,jc...->c...", Bp, gu)
        f = self._from_phys(BB - uu) * self.mask
        g = self._from_phys(Bu - uB) * self.mask
        out = (self.project(f), self.project(g), f)
        if not diagnostics:
            return out
        diag = {
            "grad_u_sup": float(np.sqrt(np.max(np.sum(gu**2, axis=(0, 1))))),
            "u_sup": float(np.sqrt(np.max(np.sum(up**2, axis=0)))),
            "B_sup": float(np.sqrt(np.max(np.sum(Bp**2, axis=0)))),
        }
        return out, diag

    def sq(self, c: np.ndarray, w: np.ndarray) -> float:
        return float(self.vol * np.sum((c.real**2 + c.imag**2) * w))

    def pair(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(self.vol * np.real(np.vdot(b, a)))

    def integrands(self, uc: np.ndarray) -> np.ndarray:
        mass = np.sum(uc.real**2 + uc.imag**2, axis=0) * self.vol
        return np.array(
            [
                np.sum(mass * self.w_grad),
                np.sum(mass * self.w_se),
                math.sqrt(np.sum(mass * self.w_s1)),
                math.sqrt(np.sum(mass * self.w_grad_s)),
            ]
        )

    def div_residual(self, c: np.ndarray) -> float:
        div = np.abs(np.sum(self.k * c, axis=0))
        scale = np.max(np.sqrt(self.k2) * np.sqrt(np.sum(np.abs(c) ** 2, axis=0)))
        return float(np.max(div) / scale) if scale > 0 else 0.0


@lru_cache(maxsize=8)
def _ops(grid: Grid, s: float, eps: float) -> _Ops:
    return _Ops(grid, s, eps)


def _phi_functions(z: np.ndarray) -> tuple:
    """``phi_j(-z)`` for j = 1, 2, 3, with ``phi_j(x) = sum_m x^m / (m+j)!``."""
    x = -z
    small = z < 1.0
    out = []
    for j in (1, 2, 3):
        ph = np.empty_like(z)
        xs = x[small]
        acc = np.zeros_like(xs)
        term = np.full_like(xs, 1.0 / math.factorial(j))
        for m in range(25):
            acc += term
            term = term * xs / (m + j + 1)
        ph[small] = acc
        out.append(ph)
    xb = x[~small]
    p1 = np.expm1(xb) / xb
    p2 = (p1 - 1.0) / xb
    p3 = (p2 - 0.5) / xb
    for ph, big in zip(out, (p1, p2, p3)):
        ph[~small] = big
    return tuple(out)


def _etd_rk4(ops: _Ops, uc, Bc, dt, first=None):
    """One step of Krogstad's exponential RK4; returns (u, B, integral increments).

    The viscous part is exact; with no linear part (the B equation and the
    running integrals) the scheme is the classical fourth-order method.
    """
    e_half, e_full, A1h, A2h, A1, A2, w1, w23, w4 = ops.factors(dt)
    N1u, N1B = first if first is not None else ops.nonlinear(uc, Bc)[:2]
    g1 = ops.integrands(uc)

    u2 = ops.project(e_half * uc + A1h * N1u)
    B2 = ops.project(Bc + 0.5 * dt * N1B)
    N2u, N2B, _ = ops.nonlinear(u2, B2)
    g2 = ops.integrands(u2)

    u3 = ops.project(e_half * uc + A1h * N1u + A2h * (N2u - N1u))
    B3 = ops.project(Bc + 0.5 * dt * N2B)
    N3u, N3B, _ = ops.nonlinear(u3, B3)
    g3 = ops.integrands(u3)

    u4 = ops.project(e_full * uc + A1 * N1u + A2 * (N3u - N1u))
    B4 = ops.project(Bc + dt * N3B)
    N4u, N4B, _ = ops.nonlinear(u4, B4)
    g4 = ops.integrands(u4)

    un = e_full * uc + w1 * N1u + w23 * (N2u + N3u) + w4 * N4u
    Bn = Bc + dt * (N1B + 2.0 * N2B + 2.0 * N3B + N4B) / 6.0
    return ops.project(un), ops.project(Bn), dt * (g1 + 2.0 * g2 + 2.0 * g3 + g4) / 6.0


def cfl_limit(ops: _Ops, diag: dict, cfl: float) -> float:
    vmax = max(diag["u_sup"], diag["B_sup"])
    return math.inf if vmax == 0 else cfl * ops.grid.dx / vmax


def mhd_step(state: MhdState, dt: float, cfl: float = 0.4) -> MhdState:
    """Advance one exponential RK4 step of size ``dt``.

    Raises :class:`CflViolation` if ``dt`` exceeds the advective limit and
    :class:`BlowUpDetected` if the new state is not finite.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    ops = _ops(state.grid, 2.0, 0.5)
    (N1u, N1B, _), diag = ops.nonlinear(state.u.coeffs, state.B.coeffs, diagnostics=True)
    limit = cfl_limit(ops, diag, cfl)
    if dt > limit * (1 + 1e-12):
        raise CflViolation(f"dt={dt:.4g} exceeds CFL limit {limit:.4g}")
    un, Bn, _ = _etd_rk4(ops, state.u.coeffs, state.B.coeffs, dt, (N1u, N1B))
    t = state.t + dt
    if not (np.all(np.isfinite(un)) and np.all(np.isfinite(Bn))):
        raise BlowUpDetected(t, "non-finite values")
    return MhdState(VectorField(state.grid, un, True), VectorField(state.grid, Bn, True), t)


# ----------------------------------------------------------------------------
# norm series

BASE_COLUMNS = (
    "t",
    "u_L2",
    "B_L2",
    "grad_u_L2",
    "u_H[s-1+eps]",
    "u_H[s+eps]",
    "u_H[s+1]",
    "B_H[s]",
    "grad_u_H[s]",
    "int_grad_u_L2_sq",
    "int_u_H[s+eps]_sq",
    "int_u_H[s+1]",
    "int_grad_u_H[s]",
)
EXTRA_COLUMNS = (
    "v_H[s+1]",
    "w_H[s+1]",
    "f_H[s-1]",
    "grad_u_sup",
    "u_sup",
    "B_sup",
    "ddt_B_L2_sq",
    "div_u",
    "div_B",
    "energy_residual",
)
COLUMNS = BASE_COLUMNS + EXTRA_COLUMNS


@dataclass
class NormSeries:
    """One row per accepted step; columns in :data:`COLUMNS` order."""

    data: np.ndarray
    meta: dict = field(default_factory=dict)
    final: Optional[MhdState] = field(default=None, repr=False, compare=False)

    columns = COLUMNS

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).reshape(-1, len(COLUMNS))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, COLUMNS.index(name)]

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self["t"]

    @property
    def s(self) -> float:
        return self.meta["s"]

    @property
    def eps(self) -> float:
        return self.meta["eps"]

    @property
    def completed(self) -> bool:
        return self.meta.get("blowup_time") is None

    def to_csv(self, path) -> None:
        write_csv(path, COLUMNS, self.data.tolist())

    @classmethod
    def from_csv(cls, path, meta: Optional[dict] = None) -> "NormSeries":
        header, rows = read_csv(path)
        if tuple(header) != COLUMNS:
            raise ValueError("unexpected column layout")
        return cls(np.array(rows), dict(meta or {}))

    def check(self) -> None:
        """Running integrals nondecreasing and every entry finite."""
        if not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite entries in series")
        for c in BASE_COLUMNS[9:]:
            if np.any(np.diff(self[c]) < 0):
                raise ValueError(f"running integral {c} decreases")


def _record(ops: _Ops, t, uc, Bc, u0c, integrals, f, NB, diag, M0) -> list:
    u2 = ops.sq(uc, 1.0)
    B2 = ops.sq(Bc, 1.0)
    grad2 = ops.sq(uc, ops.w_grad)
    vc = u0c * np.exp(-t * ops.k2)
    row = [
        t,
        math.sqrt(u2),
        math.sqrt(B2),
        math.sqrt(grad2),
        math.sqrt(ops.sq(uc, ops.w_sm1e)),
        math.sqrt(ops.sq(uc, ops.w_se)),
        math.sqrt(ops.sq(uc, ops.w_s1)),
        math.sqrt(ops.sq(Bc, ops.w_s)),
        math.sqrt(ops.sq(uc, ops.w_grad_s)),
        *integrals,
        math.sqrt(ops.sq(vc, ops.w_s1)),
        math.sqrt(ops.sq(uc - vc, ops.w_s1)),
        math.sqrt(ops.sq(f, ops.w_sm1)),
        diag["grad_u_sup"],
        diag["u_sup"],
        diag["B_sup"],
        2.0 * ops.pair(NB, Bc),
        ops.div_residual(uc),
        ops.div_residual(Bc),
        u2 + B2 + 2.0 * integrals[0] - M0,
    ]
    return row


def mhd_run(
    u0: VectorField,
    B0: VectorField,
    s: float,
    eps: float,
    T: float,
    dt: Optional[float] = None,
    cfl: float = 0.4,
    blowup_factor: float = 1e6,
) -> NormSeries:
    """Integrate from (u0, B0) to time T, recording a row per accepted step.

    With ``dt`` given the step is uniform (shrunk so that it divides T) and
    the CFL rule is checked each step; otherwise each step takes the CFL
    limit.  A blow-up candidate ends the run early; the series is still
    returned with ``meta["blowup_time"]`` set.

    The initial data are truncated to the dealiased band first, which leaves
    band-limited data unchanged.
    """
    state = MhdState(u0, B0)
    grid = state.grid
    check_parameters(grid.d, s, eps)
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    ops = _ops(grid, float(s), float(eps))
    uc = ops.project(u0.coeffs * ops.mask)
    Bc = ops.project(B0.coeffs * ops.mask)
    u0c = uc.copy()
    M0 = ops.sq(uc, 1.0) + ops.sq(Bc, 1.0)
    B0_norm = math.sqrt(ops.sq(Bc, ops.w_s))

    if dt is not None:
        nsteps = max(1, math.ceil(T / dt - 1e-9))
        dt_fixed = T / nsteps
    else:
        nsteps, dt_fixed = None, None

    integrals = np.zeros(4)
    t = 0.0
    rows = []
    blowup = None
    step = 0
    while True:
        (Nu, NB, f), diag = ops.nonlinear(uc, Bc, diagnostics=True)
        rows.append(_record(ops, t, uc, Bc, u0c, integrals, f, NB, diag, M0))
        if nsteps is not None and step >= nsteps:
            break
        if nsteps is None and t >= T * (1 - 1e-14):
            break
        limit = cfl_limit(ops, diag, cfl)
        if dt_fixed is not None:
            h = dt_fixed
            if h > limit * (1 + 1e-12):
                raise CflViolation(f"dt={h:.4g} exceeds CFL limit {limit:.4g} at t={t:.4g}")
        else:
            h = min(limit, T - t)
        uc, Bc, dI = _etd_rk4(ops, uc, Bc, h, (Nu, NB))
        integrals = integrals + dI
        step += 1
        t = dt_fixed * step if dt_fixed is not None else t + h
        if dt_fixed is None and T - t < 1e-14 * T:
            t = T
        if not (np.all(np.isfinite(uc)) and np.all(np.isfinite(Bc))):
            blowup = (t, "non-finite values")
            break
        if B0_norm > 0 and math.sqrt(ops.sq(Bc, ops.w_s)) > blowup_factor * B0_norm:
            blowup = (t, f"||B||_H^s exceeded {blowup_factor:g} x initial")
            break

    meta = {
        "s": float(s),
        "eps": float(eps),
        "T": float(T),
        "d": grid.d,
        "n": grid.n,
        "L": grid.L,
        "dt": dt_fixed,
        "cfl": cfl,
        "steps": step,
        "M0": M0,
        "blowup_time": None if blowup is None else blowup[0],
        "blowup_reason": None if blowup is None else blowup[1],
    }
    final = None
    if blowup is None:
        final = MhdState(VectorField(grid, uc, True), VectorField(grid, Bc, True), t)
    return NormSeries(np.array(rows), meta, final)


# ----------------------------------------------------------------------------
# presets


def orszag_tang(grid: Grid) -> tuple:
    """Smooth Orszag-Tang-type data: u = (-sin y, sin x), B = (-sin y, sin 2x)."""
    if grid.d != 2:
        raise ValueError("the Orszag-Tang preset is two-dimensional")
    x, y = grid.x / grid.L
    u = VectorField.from_physical(grid, np.stack([-np.sin(y), np.sin(x)]))
    B = VectorField.from_physical(grid, np.stack([-np.sin(y), np.sin(2 * x)]))
    return VectorField(grid, u.coeffs, True), VectorField(grid, B.coeffs, True)


def random_preset(grid: Grid, seed: int, kmax: int = 4, amplitude: float = 1.0) -> tuple:
    """Random band-limited divergence-free pair, each scaled to unit sup norm times ``amplitude``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(2):
        v = random_field(grid, rng, kmax=kmax, vector=True, divergence_free=True)
        peak = np.sqrt(np.max(np.sum(v.to_physical() ** 2, axis=0)))
        out.append(VectorField(grid, v.coeffs * (amplitude / peak), True))
    return tuple(out)


PRESETS = ("orszag-tang-2d", "random")


def initial_data(preset: str, grid: Grid, seed: int = 0, **kw) -> tuple:
    if preset == "orszag-tang-2d":
        return orszag_tang(grid)
    if preset == "random":
        return random_preset(grid, seed, **kw)
    raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")


# ----------------------------------------------------------------------------
# convergence


@dataclass
class ConvergenceStudy:
    dts: list
    errors: list
    orders: list

    @property
    def order(self) -> float:
        return min(self.orders)

    def to_dict(self) -> dict:
        return {"dts": self.dts, "errors": self.errors, "orders": self.orders, "order": self.order}


def temporal_convergence(u0, B0, s, eps, T, dt0, levels: int = 3, cfl: float = 0.4) -> ConvergenceStudy:
    """Runs at dt0, dt0/2, ... and the observed order from successive differences.

    ``dt0`` is first shrunk so that it divides T, making every level an exact
    halving of the previous one.
    """
    finals = []
    dts = []
    base = max(1, math.ceil(T / dt0 - 1e-9))
    for i in range(levels):
        h = T / (base * 2**i)
        ser = mhd_run(u0, B0, s, eps, T, dt=h, cfl=cfl)
        if ser.final is None:
            raise BlowUpDetected(ser.meta["blowup_time"], "during convergence study")
        finals.append(ser.final)
        dts.append(ser.meta["dt"])
    ops = _ops(u0.grid, float(s), float(eps))
    errors = []
    for a, b in zip(finals, finals[1:]):
        du = a.u.coeffs - b.u.coeffs
        dB = a.B.coeffs - b.B.coeffs
        errors.append(math.sqrt(ops.sq(du, 1.0) + ops.sq(dB, 1.0)))
    orders = [math.log2(e1 / e2) if e2 > 0 else math.inf for e1, e2 in zip(errors, errors[1:])]
    return ConvergenceStudy(dts, errors, orders)


# ----------------------------------------------------------------------------
# constants and monitored inequalities


PROVENANCE_FORMULA = "formula"
PROVENANCE_FITTED = "ensemble max"


@dataclass
class MhdConstants:
    """Constant bundle with per-constant provenance.

    Fitted constants are maxima over the recorded run, hence lower bounds for
    the true (existential) constants.  One common value is fitted for
    c1 = c2 = c3.
    """

    s: float
    eps: float
    M0: float
    M1: float
    B0_Hs: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    C_eps: float
    C_r: float
    c_upoor: float = 0.0
    c_Bpoor: float = 0.0
    provenance: dict = field(default_factory=dict)

    @property
    def M2(self) -> float:
        e = self.eps
        return 2 ** (2 * (1 + e)) * self.c2 * self.B0_Hs ** (2 * (1 + e)) + 2**4 * self.c3 * self.B0_Hs**4 + 2 * self.M0

    @property
    def C_max(self) -> float:
        return max(self.C_eps, self.C_r)

    def check(self) -> None:
        for name in ("M0", "M1", "B0_Hs", "c1", "c2", "c3", "c4", "c5", "C_eps", "C_r"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"constant {name}={v} is not a finite nonnegative number")

    def to_dict(self) -> dict:
        names = ("s", "eps", "M0", "M1", "M2", "B0_Hs", "c1", "c2", "c3", "c4", "c5", "C_eps", "C_r", "c_upoor", "c_Bpoor")
        return {"values": {n: getattr(self, n) for n in names}, "provenance": dict(self.provenance)}


def _ratio_max(num: np.ndarray, den: np.ndarray, floor: float = 0.0) -> float:
    """Smallest c >= 0 with num <= c * den wherever num exceeds the noise floor."""
    pos = num > floor
    if not np.any(pos):
        return 0.0
    if np.any(pos & (den <= 0)):
        return math.inf
    return float(np.max(num[pos] / den[pos]))


def _rates(ser: NormSeries) -> dict:
    if len(ser) < 3:
        raise SeriesTooShort("need at least three recorded steps for centered differences")
    t = ser.times
    ddt = lambda y: np.gradient(y, t)
    # centered differences of values that only jitter at rounding level
    noise = lambda y: 64 * np.finfo(float).eps * float(np.max(np.abs(y))) / float(np.min(np.diff(t)))
    s, e = ser.s, ser.eps
    X = ser["u_H[s-1+eps]"] ** 2
    B = ser["B_H[s]"]
    return {
        "noise_X": noise(X),
        "noise_u2": noise(ser["u_L2"] ** 2),
        "noise_B2": noise(ser["B_L2"] ** 2),
        "noise_Bs2": noise(B**2),
        "t": t,
        "X": X,
        "B": B,
        "dX": ddt(X),
        "du2": ddt(ser["u_L2"] ** 2),
        "dB2": ddt(ser["B_L2"] ** 2),
        "dBs2": ddt(B**2),
        "p": (1 + e) / e,
    }


def fit_constants(ser: NormSeries) -> MhdConstants:
    s, e = ser.s, ser.eps
    r = _rates(ser)
    X, B = r["X"], r["B"]
    gu_s = ser["grad_u_H[s]"]
    ulow = ser["u_L2"]

    # (u poor): d/dt ||u||^2 + ||grad u||^2 <= c ||B||_Hs^4
    c_up = _ratio_max(r["du2"] + ser["grad_u_L2"] ** 2, B**4, r["noise_u2"])
    # (B poor): 1/2 d/dt ||B||^2 <= c ||grad u||_Hs ||B||^2
    c_Bp = _ratio_max(0.5 * r["dB2"], gu_s * ser["B_L2"] ** 2, r["noise_B2"])
    c4 = _ratio_max(0.5 * r["dBs2"], gu_s * B**2, r["noise_Bs2"])
    env = X ** r["p"] + B ** (2 * (1 + e)) + B**4
    c123 = _ratio_max(r["dX"] + ser["u_H[s+eps]"] ** 2 - 2 * ulow**2, env, r["noise_X"])

    M0 = ser["u_L2"][0] ** 2 + ser["B_L2"][0] ** 2
    rr = (s + e) / s
    c5 = _ratio_max(ser["f_H[s-1]"] ** rr - B ** (2 * rr), M0 ** (e / s) * ser["u_H[s+eps]"] ** 2)

    C_eps, C_r = _split_constants(ser)
    prov = {n: PROVENANCE_FITTED for n in ("c1", "c2", "c3", "c4", "c5", "C_eps", "C_r", "c_upoor", "c_Bpoor")}
    prov.update({n: PROVENANCE_FORMULA for n in ("M0", "M1", "M2", "B0_Hs")})
    return MhdConstants(
        s=s,
        eps=e,
        M0=M0,
        M1=float(ser["u_H[s-1+eps]"][0]),
        B0_Hs=float(B[0]),
        c1=c123,
        c2=c123,
        c3=c123,
        c4=c4,
        c5=c5,
        C_eps=C_eps,
        C_r=C_r,
        c_upoor=c_up,
        c_Bpoor=c_Bp,
        provenance=prov,
    )


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def _split_constants(ser: NormSeries) -> tuple:
    """Empirical constants of the heat/Duhamel split, max over horizons."""
    s, e = ser.s, ser.eps
    t = ser.times[1:]
    r = (s + e) / s
    heat = _cumtrapz(ser["v_H[s+1]"], ser.times)[1:]
    duh = _cumtrapz(ser["w_H[s+1]"], ser.times)[1:]
    f_lr = _cumtrapz(ser["f_H[s-1]"] ** r, ser.times)[1:] ** (1 / r)
    M1 = ser["u_H[s-1+eps]"][0]
    C_eps = _ratio_max(heat, t ** (e / 2) * M1)
    C_r = _ratio_max(duh, t ** (1 - 1 / r) * f_lr)
    return C_eps, C_r


def _closure_bounds(k: MhdConstants, T: float) -> dict:
    e, s = k.eps, k.s
    p = (1 + e) / e
    base = k.M1**2 + T * k.M2
    bracket = 1 - k.c1 * T * base ** (1 / e) / e
    ub3 = base * bracket ** (-e) if bracket > 0 else math.inf
    ub4 = k.c1 * T * (2 * base) ** p + T * k.M2
    inner = 2 ** (2 * (s + e) / s) * T * k.B0_Hs ** (2 * (s + e) / s) + k.c5 * k.M0 ** (e / s) * ub4
    ub5 = k.C_max * T ** (e / 2) * k.M1 + k.C_max * T ** (e / (s + e)) * inner ** (s / (s + e))
    return {"ubound3": ub3, "ubound3_simple": 2 * base, "ubound4": ub4, "ubound5": ub5}


def monitor_inequalities(ser: NormSeries, rtol: float = 1e-9) -> tuple:
    """Fit constants from the run and re-check every monitored inequality.

    Returns ``(reports, constants, T_star)``.
    """
    ser.check()
    k = fit_constants(ser)
    s, e = ser.s, ser.eps
    r = _rates(ser)
    t = ser.times
    X, B = r["X"], r["B"]
    gu_s = ser["grad_u_H[s]"]
    reps = []

    def rescan(name, num, den, c, floor):
        reps.append(EstimateReport(name, _ratio_max(num, den, floor), c, constant=c, rtol=rtol, details={"fitted": "ensemble max"}))

    M0 = k.M0
    reps.append(
        EstimateReport(
            "energy.balance",
            float(np.max(np.abs(ser["energy_residual"]))),
            1e-6 * M0,
            details={"M0": M0},
        )
    )
    reps.append(
        EstimateReport(
            "energy.B_L2_pairing",
            _ratio_max(0.5 * np.abs(ser["ddt_B_L2_sq"]), ser["B_L2"] ** 2 * ser["grad_u_sup"]),
            1.0,
            details={"note": "|1/2 d/dt ||B||^2| <= ||B||^2 ||grad u||_inf"},
        )
    )
    reps.append(EstimateReport("div_free", float(max(ser["div_u"].max(), ser["div_B"].max())), 1e-12))

    rescan("u.L2_growth", r["du2"] + ser["grad_u_L2"] ** 2, B**4, k.c_upoor, r["noise_u2"])
    rescan("B.L2_growth", 0.5 * r["dB2"], gu_s * ser["B_L2"] ** 2, k.c_Bpoor, r["noise_B2"])
    rescan("B.Hs_growth", 0.5 * r["dBs2"], gu_s * B**2, k.c4, r["noise_Bs2"])
    env = X ** r["p"] + B ** (2 * (1 + e)) + B**4
    rescan("u.Hs-1+eps_growth", r["dX"] + ser["u_H[s+eps]"] ** 2 - 2 * ser["u_L2"] ** 2, env, k.c1, r["noise_X"])

    gron = B[0] ** 2 * np.exp(2 * k.c4 * ser["int_grad_u_H[s]"])
    reps.append(EstimateReport("B.gronwall", _ratio_max(B**2, gron), 1.0, constant=k.c4, rtol=1e-6))

    # heat/Duhamel split of the velocity along the run
    rr = (s + e) / s
    T_all = t[1:]
    lhs = ser["int_u_H[s+1]"][1:]
    inner = _cumtrapz(B ** (2 * rr) + k.c5 * M0 ** (e / s) * ser["u_H[s+eps]"] ** 2, t)[1:]
    rhs = k.C_max * T_all ** (e / 2) * k.M1 + k.C_max * T_all ** (e / (s + e)) * inner ** (1 / rr)
    reps.append(EstimateReport("stokes.run_split", _ratio_max(lhs, rhs), 1.0, constant=k.C_max, rtol=1e-3))

    T_star = existence_time(k, s, e)
    horizon = min(T_star, t[-1])
    upto = t <= horizon * (1 + 1e-12)
    b = _closure_bounds(k, horizon)
    reps.append(EstimateReport("closure.B_bound", float(np.max(B[upto]) / B[0]) if B[0] > 0 else 0.0, 2.0, details={"T_star": T_star, "horizon": horizon}))
    reps.append(EstimateReport("closure.u_bound", float(np.max(X[upto])), b["ubound3"], details={"simple": b["ubound3_simple"]}))
    reps.append(EstimateReport("closure.int_u_H[s+eps]_sq", float(np.interp(horizon, t, ser["int_u_H[s+eps]_sq"])), b["ubound4"]))
    limit = math.log(4) / (2 * k.c4) if k.c4 > 0 else math.inf
    reps.append(
        EstimateReport(
            "closure.int_u_H[s+1]",
            float(np.interp(horizon, t, ser["int_u_H[s+1]"])),
            b["ubound5"],
            details={"log4_over_2c4": limit},
        )
    )
    return reps, k, T_star
