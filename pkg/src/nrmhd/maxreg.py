"""
Forced heat/Stokes problems with zero or nonzero initial data.

The forcing is a time series of fields, interpolated linearly between the
sample times. Against that interpolant the Duhamel integral

    u(k, t) = int_0^t exp(-|k|^2 (t - s)) f(k, s) ds

is evaluated exactly segment by segment, so the only error in the measured
norms comes from the Gauss-Legendre rules in time.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .heat import cq_constant, gauss_rule
from .reports import EstimateReport
from .spectral import (
    Field,
    Grid,
    SpectralField,
    VectorField,
    divergence_residual,
    leray_project,
    random_field,
    sobolev_norm,
)


@dataclass(frozen=True, eq=False)
class ForcingTrace:
    """Samples of a scalar or vector field at increasing times starting at 0.

    ``coeffs`` has shape ``(len(times),) + field shape``.
    """

    grid: Grid
    times: np.ndarray
    coeffs: np.ndarray
    vector: bool = False

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if times.size == 0:
            raise ValueError("empty trace")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValueError("trace times must start at 0 and increase strictly")
        fshape = ((self.grid.d,) if self.vector else ()) + self.grid.shape
        if self.coeffs.shape != (times.size,) + fshape:
            raise ValueError(f"trace coefficients have shape {self.coeffs.shape}, expected {(times.size,) + fshape}")

    @classmethod
    def from_fields(cls, times: Sequence[float], fields: Sequence[Field]) -> "ForcingTrace":
        grid = fields[0].grid
        vector = isinstance(fields[0], VectorField)
        return cls(grid, np.asarray(times, dtype=float), np.stack([f.coeffs for f in fields]), vector)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def samples(self) -> list:
        if self.vector:
            return [VectorField(self.grid, c) for c in self.coeffs]
        return [SpectralField(self.grid, c) for c in self.coeffs]

    def project(self) -> "ForcingTrace":
        if not self.vector:
            raise ValueError("Leray projection needs a vector trace")
        out = np.stack([leray_project(VectorField(self.grid, c)).coeffs for c in self.coeffs])
        return ForcingTrace(self.grid, self.times, out, True)


def _phi1(z: np.ndarray) -> np.ndarray:
    # (1 - e^{-z}) / z
    out = np.ones_like(z)
    nz = z > 1e-12
    out[nz] = -np.expm1(-z[nz]) / z[nz]
    return out


def _psi(z: np.ndarray) -> np.ndarray:
    # int_0^1 theta e^{-z theta} d theta = (1 - (1+z) e^{-z}) / z^2
    out = np.empty_like(z)
    small = z < 0.1
    zs = z[small]
    acc = np.zeros_like(zs)
    term = np.ones_like(zs)
    for n in range(16):
        acc += term / (n + 2)
        term = term * (-zs) / (n + 1)
    out[small] = acc
    zb = z[~small]
    out[~small] = (-np.expm1(-zb) - zb * np.exp(-zb)) / zb**2
    return out


def exponential_step(u, f0, f1, lam, h):
    """Advance ``u' = -lam u + f`` by h with f linear from f0 to f1 (exact)."""
    z = lam * h
    # weight of f0 is psi; f1 carries the remainder of phi1
    w_start = _psi(z)
    w_end = _phi1(z) - w_start
    return np.exp(-z) * u + h * (w_start * f0 + w_end * f1)


class _Modes:
    """Compressed view keeping only wavenumbers that carry data."""

    def __init__(self, grid: Grid, *arrays: np.ndarray, ncomp: int):
        lead = [a.reshape(-1, ncomp, grid.n**grid.d) for a in arrays]
        active = np.zeros(grid.n**grid.d, dtype=bool)
        for a in lead:
            active |= np.any(a != 0, axis=(0, 1))
        self.grid = grid
        self.active = active
        self.k2 = grid.k2.ravel()[active]
        self.data = [a[..., active] for a in lead]

    def weight(self, s: float, homogeneous: bool = False) -> np.ndarray:
        """Per-mode multiplier of the squared (H^s or Hdot^s) norm, times the volume."""
        if s == 0:
            w = np.ones_like(self.k2)
        else:
            w = np.where(self.k2 > 0, self.k2**s, 0.0)
            if not homogeneous:
                w = w + 1.0
        return self.grid.volume * w


def _march(modes_k2, u_start, times, fvals, nodes):
    """Exact Duhamel values at ``nodes`` for forcing linear between ``times``.

    ``fvals`` has shape (nt, c, M); returns (len(nodes), c, M).
    """
    out = np.empty((len(nodes),) + u_start.shape, dtype=complex)
    u = u_start.copy()
    t = 0.0
    seg = 0
    for i, tn in enumerate(nodes):
        while seg < len(times) - 1 and times[seg + 1] <= tn:
            u = exponential_step(u, _interp(times, fvals, t, seg), fvals[seg + 1], modes_k2, times[seg + 1] - t)
            t = times[seg + 1]
            seg += 1
        if tn > t:
            f_t = _interp(times, fvals, t, seg)
            f_n = _interp(times, fvals, tn, seg)
            u = exponential_step(u, f_t, f_n, modes_k2, tn - t)
            t = tn
        out[i] = u
    return out


def _interp(times, fvals, t, seg):
    if seg >= len(times) - 1:
        return fvals[-1]
    a, b = times[seg], times[seg + 1]
    th = (t - a) / (b - a)
    return (1 - th) * fvals[seg] + th * fvals[seg + 1]


def time_rule(times: np.ndarray, stiffness: float, start_levels: int = 14, order: int = 12):
    """Composite Gauss rule on the sample segments.

    Every segment is graded geometrically toward its left end, where a kink in
    the forcing launches a transient of width ``1/stiffness``; the first
    segment gets extra levels because u(0) = 0 is far from equilibrium.
    """
    breaks = [0.0]
    for i, (a, b) in enumerate(zip(times[:-1], times[1:])):
        h = b - a
        base = max(0, int(math.ceil(math.log2(max(stiffness * h, 1.0))))) + 2
        levels = base + (start_levels if i == 0 else 0)
        inner = a + h * 2.0 ** -np.arange(levels, 0, -1)
        breaks.extend(inner.tolist())
        breaks.append(b)
    return gauss_rule(np.asarray(breaks), order)


def duhamel_solve(f: ForcingTrace) -> ForcingTrace:
    """Solution of ``u_t - Laplace u = f``, ``u(0) = 0``, at the sample times."""
    ncomp = f.grid.d if f.vector else 1
    modes = _Modes(f.grid, f.coeffs, ncomp=ncomp)
    fvals = modes.data[0]
    u = np.zeros((ncomp, modes.k2.size), dtype=complex)
    out = np.zeros((f.times.size, ncomp, f.grid.n**f.grid.d), dtype=complex)
    for i in range(1, f.times.size):
        u = exponential_step(u, fvals[i - 1], fvals[i], modes.k2, f.times[i] - f.times[i - 1])
        out[i][..., modes.active] = u
    return ForcingTrace(f.grid, f.times, out.reshape(f.coeffs.shape), f.vector)


@dataclass
class MaxRegReport:
    r: float
    s: float
    T: float
    lhs: float
    rhs: float
    ratio: float
    hom_ratio: float
    l2_inhom: float
    l2_bound: float

    def passed(self, tol: float = 1e-6) -> bool:
        ok = self.l2_inhom <= self.l2_bound + tol
        if self.r == 2:
            ok = ok and self.hom_ratio <= 1 + tol and self.ratio <= 1 + tol
        return ok

    def to_dict(self) -> dict:
        return asdict(self)


def _lr_norm(weights, values, r):
    return float(weights @ values**r) ** (1.0 / r)


def maxreg_ratio(f: ForcingTrace, s: float, r: float) -> MaxRegReport:
    """Both sides of the L^r(0,T; Hdot^{s+2}) maximal-regularity bound."""
    if r <= 1:
        raise ValueError(f"r must exceed 1, got {r}")
    if s < 0:
        raise ValueError(f"s must be nonnegative, got {s}")
    T = f.T
    if T > 1:
        raise ValueError(f"horizon T={T} exceeds 1")
    ncomp = f.grid.d if f.vector else 1
    modes = _Modes(f.grid, f.coeffs, ncomp=ncomp)
    fvals = modes.data[0]
    stiff = float(modes.k2.max()) if modes.k2.size else 0.0
    nodes, weights = time_rule(f.times, stiff)
    u = _march(modes.k2, np.zeros(fvals.shape[1:], dtype=complex), f.times, fvals, nodes)
    fn = _interp_all(f.times, fvals, nodes)

    sq = lambda a, w: np.sqrt(np.einsum("ncm,m->n", np.abs(a) ** 2, w))
    u_top = sq(u, modes.weight(s + 2, homogeneous=True))
    f_hs = sq(fn, modes.weight(s))
    f_hom = sq(fn, modes.weight(s, homogeneous=True))
    u_l2 = sq(u, modes.weight(0))
    f_l2 = sq(fn, modes.weight(0))

    lhs = _lr_norm(weights, u_top, r)
    rhs = _lr_norm(weights, f_hs, r)
    hom = _lr_norm(weights, f_hom, r)
    l2f = _lr_norm(weights, f_l2, 2)
    return MaxRegReport(
        r=r,
        s=s,
        T=T,
        lhs=lhs,
        rhs=rhs,
        ratio=lhs / rhs if rhs > 0 else 0.0,
        hom_ratio=lhs / hom if hom > 0 else 0.0,
        l2_inhom=_lr_norm(weights, u_l2, 2) / l2f if l2f > 0 else 0.0,
        l2_bound=math.exp(T),
    )


def random_forcing(
    grid: Grid,
    rng: np.random.Generator,
    times: Sequence[float],
    kmax: int = 6,
    vector: bool = False,
) -> ForcingTrace:
    """Independent random band-limited samples, linear in between."""
    fields = [random_field(grid, rng, kmax=kmax, vector=vector, include_mean=True) for _ in times]
    return ForcingTrace.from_fields(times, fields)


def stokes_ic_estimate(
    u0: VectorField,
    f: ForcingTrace,
    s: float,
    eps: float,
    r: float,
) -> EstimateReport:
    """Split the forced Stokes flow into heat part and Duhamel part and measure both.

    Returns the L^1-in-time H^{s+1} estimate with the empirical constants of
    each branch (``C_eps``, ``C_r``), the constant predicted by the smoothing
    bounds for the heat branch, and every intermediate quantity of the
    interpolation/Holder chain for the heat branch.
    """
    if not (isinstance(u0, VectorField) and f.vector):
        raise ValueError("Stokes problem needs vector initial data and vector forcing")
    if divergence_residual(u0) > 1e-12:
        raise ValueError("initial velocity is not divergence-free")
    if s <= 1:
        raise ValueError(f"s must exceed 1, got {s}")
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if r <= 1:
        raise ValueError(f"r must exceed 1, got {r}")
    T = f.T
    if T > 1:
        raise ValueError(f"horizon T={T} exceeds 1")

    pf = f.project()
    d = f.grid.d
    modes = _Modes(f.grid, pf.coeffs, u0.coeffs[None], ncomp=d)
    fvals, v0 = modes.data[0], modes.data[1][0]
    fraw = _Modes(f.grid, f.coeffs, ncomp=d)
    stiff = float(max(modes.k2.max(initial=0.0), fraw.k2.max(initial=0.0)))
    nodes, weights = time_rule(f.times, stiff, start_levels=40)

    w = _march(modes.k2, np.zeros_like(v0), f.times, fvals, nodes)
    v = v0[None] * np.exp(-np.outer(nodes, modes.k2))[:, None, :]
    u = v + w

    sq = lambda a, wt: np.sqrt(np.einsum("ncm,m->n", np.abs(a) ** 2, wt))
    v_s1 = sq(v, modes.weight(s + 1))
    lhs = float(weights @ sq(u, modes.weight(s + 1)))
    heat_part = float(weights @ v_s1)
    w_s1 = sq(w, modes.weight(s + 1))
    forcing_part = float(weights @ w_s1)

    q = 2 * (1 - eps) / (2 - eps)
    v_top = sq(v, modes.weight(s + 1 + eps))
    v_mid = sq(v, modes.weight(s + eps))
    interp_integrand = float(weights @ (v_top ** (1 - eps) * v_mid**eps))
    holder = float(weights @ v_top**q) ** ((2 - eps) / 2) * float(weights @ v_mid**2) ** (eps / 2)

    M1 = sobolev_norm(u0, s - 1 + eps)
    c_eps_formula = cq_constant(q) ** ((2 - eps) / 2)
    heat_bound = c_eps_formula * T ** (eps / 2) * M1

    fn = _interp_all(f.times, fraw.data[0], nodes)
    f_norm = _lr_norm(weights, sq(fn, fraw.weight(s - 1)), r)
    pf_norm = _lr_norm(weights, sq(_interp_all(f.times, fvals, nodes), modes.weight(s - 1)), r)
    w_lr = _lr_norm(weights, w_s1, r)
    rprime = r / (r - 1)

    c_eps = heat_part / (T ** (eps / 2) * M1) if M1 > 0 else 0.0
    c_r = forcing_part / (T ** (1 / rprime) * f_norm) if f_norm > 0 else 0.0
    rhs = c_eps * T ** (eps / 2) * M1 + c_r * T ** (1 / rprime) * f_norm
    return EstimateReport(
        name="stokes.L1_Hs1",
        lhs=lhs,
        rhs=rhs,
        constant=max(c_eps, c_r),
        details={
            "T": T,
            "s": s,
            "eps": eps,
            "r": r,
            "M1": M1,
            "f_norm": f_norm,
            "Pf_norm": pf_norm,
            "heat_part": heat_part,
            "forcing_part": forcing_part,
            "C_eps": c_eps,
            "C_r": c_r,
            "C_eps_formula": c_eps_formula,
            "heat_bound_formula": heat_bound,
            "interp_integrand": interp_integrand,
            "holder_product": holder,
            "forcing_holder": T ** (1 / rprime) * w_lr,
        },
    )


def _interp_all(times, fvals, nodes):
    return np.stack(
        [_interp(times, fvals, t, min(np.searchsorted(times, t, "right") - 1, len(times) - 2)) for t in nodes]
    )


@dataclass
class StokesEnsemble:
    """Ensemble-max constants for the Stokes estimate (lower bounds, not suprema)."""

    reports: list = field(default_factory=list)

    @property
    def C_eps(self) -> float:
        return max(r.details["C_eps"] for r in self.reports)

    @property
    def C_r(self) -> float:
        return max(r.details["C_r"] for r in self.reports)

    def fitted_bound(self, rep: EstimateReport) -> float:
        d = rep.details
        return self.C_eps * d["T"] ** (d["eps"] / 2) * d["M1"] + self.C_r * d["T"] ** (1 - 1 / d["r"]) * d["f_norm"]

    def all_hold(self, rtol: float = 1e-12) -> bool:
        return all(rep.lhs <= self.fitted_bound(rep) * (1 + rtol) for rep in self.reports)


def stokes_ensemble(
    grid: Grid,
    seed: int,
    count: int,
    s: float,
    eps: float,
    r: float,
    T: float,
    n_times: int = 9,
    kmax: int = 6,
) -> StokesEnsemble:
    """Random (u0, f) pairs; the draws depend on the seed only, not on n."""
    ss = np.random.SeedSequence(seed)
    out = StokesEnsemble()
    times = np.linspace(0.0, T, n_times)
    for child in ss.spawn(count):
        rng = np.random.default_rng(child)
        u0 = random_field(grid, rng, kmax=kmax, vector=True, divergence_free=True)
        f = random_forcing(grid, rng, times, kmax=kmax, vector=True)
        out.reports.append(stokes_ic_estimate(u0, f, s, eps, r))
    return out
