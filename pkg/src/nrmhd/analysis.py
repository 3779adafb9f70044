"""Functional inequalities, the blow-up ODE comparison and the existence time."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .spectral import (
    Grid,
    SpectralField,
    VectorField,
    _fft,
    _ifft,
    advect,
    divergence_residual,
    homogeneous_norm,
    inner,
    lambda_pow,
    random_field,
    sobolev_norm,
    gradient_sobolev_norm,
)


# ----------------------------------------------------------------------------
# Sobolev interpolation


@dataclass(frozen=True)
class InterpolationRatio:
    theta: float
    homogeneous: float
    inhomogeneous: float


def interpolation_check(f, s0: float, s: float, s1: float) -> InterpolationRatio:
    """``||f||_s / (||f||_{s0}^{1-theta} ||f||_{s1}^theta)`` for both norm families."""
    if not s0 < s < s1:
        raise ValueError(f"need s0 < s < s1, got {s0}, {s}, {s1}")
    theta = (s - s0) / (s1 - s0)

    def ratio(norm):
        top = norm(f, s)
        if top == 0:
            return 0.0
        return top / (norm(f, s0) ** (1 - theta) * norm(f, s1) ** theta)

    return InterpolationRatio(theta, ratio(homogeneous_norm), ratio(sobolev_norm))


# ----------------------------------------------------------------------------
# algebra and commutator constants


def exact_product(f: SpectralField, g: SpectralField) -> SpectralField:
    """Alias-free pointwise product; both factors must fit in a quarter band."""
    grid = f.grid
    band = grid.n // 4
    for h in (f, g):
        if np.any(h.coeffs[np.any(np.abs(grid.m) >= band, axis=0)] != 0):
            raise ValueError("factors must be supported on |m_j| < n/4 for an exact product")
    vals = _ifft(f.coeffs, grid.d).real * _ifft(g.coeffs, grid.d).real
    return SpectralField(grid, _fft(vals, grid.d))


def algebra_ratio(f: SpectralField, g: SpectralField, s: float) -> float:
    den = sobolev_norm(f, s) * sobolev_norm(g, s)
    return sobolev_norm(exact_product(f, g), s) / den if den > 0 else 0.0


def algebra_constant_estimate(grid: Grid, seed: int, count: int, s: float, kmax: Optional[int] = None) -> np.ndarray:
    """Running maximum of ``||fg||_s / (||f||_s ||g||_s)`` over a random ensemble.

    The last entry is the ensemble max, a lower bound for the algebra constant.
    """
    if not s > grid.d / 2:
        raise ValueError(f"H^s is an algebra only for s > d/2 = {grid.d / 2}; got {s}")
    kmax = kmax if kmax is not None else grid.n // 4 - 1
    rng = np.random.default_rng(seed)
    vals = np.empty(count)
    for i in range(count):
        f = random_field(grid, rng, kmax=kmax, include_mean=True)
        g = random_field(grid, rng, kmax=kmax, include_mean=True)
        vals[i] = algebra_ratio(f, g, s)
    return np.maximum.accumulate(vals)


def commutator_estimate_check(u: VectorField, B: VectorField, s: float) -> float:
    """``|<Lambda^s[(u.grad)B], Lambda^s B>| / (||grad u||_s ||B||_s^2)``.

    Inputs must live in the dealiased band; the pairing then sees the exact
    product because the test function ``Lambda^s B`` is band-limited too.
    """
    grid = u.grid
    if not s > grid.d / 2:
        raise ValueError(f"commutator estimate needs s > d/2 = {grid.d / 2}; got {s}")
    if divergence_residual(u) > 1e-12:
        raise ValueError("u must be divergence-free")
    mask = grid.dealias_mask
    if np.any(u.coeffs[:, ~mask] != 0) or np.any(B.coeffs[:, ~mask] != 0):
        raise ValueError("fields must be supported in the dealiased band")
    lhs = abs(inner(lambda_pow(advect(u, B), s), lambda_pow(B, s)))
    rhs = gradient_sobolev_norm(u, s) * sobolev_norm(B, s) ** 2
    if lhs == 0:
        return 0.0
    return lhs / rhs


def commutator_ensemble(grid: Grid, seed: int, count: int, s: float, kmax: int = 6) -> np.ndarray:
    """Running max of the commutator ratio over random (u, B) pairs."""
    rng = np.random.default_rng(seed)
    vals = np.empty(count)
    for i in range(count):
        u = random_field(grid, rng, kmax=kmax, vector=True, divergence_free=True)
        B = random_field(grid, rng, kmax=kmax, vector=True, divergence_free=True)
        vals[i] = commutator_estimate_check(u, B, s)
    return np.maximum.accumulate(vals)


# ----------------------------------------------------------------------------
# Young exponents


def young_exponents(eps: float) -> tuple:
    return (1 + eps, 2 * (1 + eps) / (eps * (1 - eps)), 2 / eps)


def check_young_exponents(eps: float, tol: float = 1e-14) -> float:
    """Return the reciprocal sum; raise if it is not 1."""
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    total = math.fsum(1 / a for a in young_exponents(eps))
    if abs(total - 1) > tol:
        raise ValueError(f"Young exponents do not sum to 1 (got {total!r})")
    return total


# ----------------------------------------------------------------------------
# ODE comparison


class BeyondComparisonHorizon(ValueError):
    pass


class OdeBlowUp(RuntimeError):
    def __init__(self, t_est: float, trajectory: "OdeTrajectory"):
        super().__init__(f"solution blows up near t={t_est:.12g}")
        self.t_est = t_est
        self.trajectory = trajectory


@dataclass(frozen=True)
class OdeParams:
    """Parameters of ``Y' = c1 Y^p + M2``, ``Y(0) = M1^2``, ``p = (1+eps)/eps``."""

    eps: float
    c1: float
    M1: float
    M2: float
    T: float = 1.0

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        for name in ("c1", "M1", "M2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def p(self) -> float:
        return (1 + self.eps) / self.eps


def comparison_bracket(p: OdeParams, t: float) -> float:
    return 1 - p.c1 * t * (p.M1**2 + t * p.M2) ** (1 / p.eps) / p.eps


def ode_comparison_bound(p: OdeParams, t: float) -> float:
    """``(M1^2 + t M2) (1 - c1 t (M1^2 + t M2)^{1/eps} / eps)^{-eps}``."""
    br = comparison_bracket(p, t)
    if not br > 0:
        raise BeyondComparisonHorizon(f"bracket {br:.3g} <= 0 at t={t}")
    return (p.M1**2 + t * p.M2) * br ** (-p.eps)


@dataclass
class OdeTrajectory:
    t: np.ndarray
    Y: np.ndarray
    blowup_time: Optional[float] = None


def ode_integrate(p: OdeParams, dt: float, rtol: float = 1e-13, raise_on_blowup: bool = True) -> OdeTrajectory:
    """Sample the solution every ``dt`` on [0, T] (or until blow-up).

    The equation is integrated for ``Z = Y^{-1/eps}``, which solves
    ``Z' = -c1/eps - (M2/eps) Z^{1+eps}``: smooth right up to blow-up
    (Z = 0), and linear when M2 = 0.  A zero start is first moved off the
    origin in the Y variable.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    e = p.eps
    nsamp = int(math.floor(p.T / dt + 1e-9)) + 1
    grid = np.minimum(dt * np.arange(nsamp), p.T)
    if grid[-1] < p.T:
        grid = np.append(grid, p.T)
    Y0 = p.M1**2
    t0 = 0.0
    pre_t, pre_Y = [], []
    if Y0 == 0:
        if p.M2 == 0:
            return OdeTrajectory(grid, np.zeros_like(grid))
        # leave the origin in Y; Y' > 0 so Y reaches 1e-3 quickly
        hit = lambda t, y: y[0] - 1e-3
        hit.terminal = True
        sol = solve_ivp(
            lambda t, y: [p.c1 * max(y[0], 0.0) ** p.p + p.M2],
            (0.0, p.T), [0.0], method="DOP853", rtol=rtol, atol=1e-16,
            events=hit, dense_output=True,
        )
        t_switch = float(sol.t_events[0][0]) if sol.t_events[0].size else p.T
        take = grid[grid <= t_switch]
        pre_t, pre_Y = list(take), list(sol.sol(take)[0])
        if t_switch >= p.T:
            return OdeTrajectory(np.array(pre_t), np.array(pre_Y))
        t0, Y0 = t_switch, 1e-3

    rhs = lambda t, z: [-p.c1 / e - (p.M2 / e) * max(z[0], 0.0) ** (1 + e)]
    zero = lambda t, z: z[0]
    zero.terminal = True
    zero.direction = -1
    Z0 = Y0 ** (-1 / e)
    sol = solve_ivp(
        rhs, (t0, p.T), [Z0], method="DOP853", rtol=rtol, atol=Z0 * 1e-300,
        events=zero, dense_output=True,
    )
    blow = float(sol.t_events[0][0]) if sol.t_events[0].size else None
    end = blow if blow is not None else p.T
    take = grid[(grid > t0 if pre_t else grid >= t0) & (grid < end if blow is not None else grid <= end)]
    Z = sol.sol(take)[0]
    ts = np.array(pre_t + list(take))
    Ys = np.array(pre_Y + list(Z ** (-e)))
    traj = OdeTrajectory(ts, Ys, blow)
    if blow is not None and raise_on_blowup:
        raise OdeBlowUp(blow, traj)
    return traj


@dataclass
class ComparisonRow:
    eps: float
    c1: float
    M1: float
    M2: float
    samples: int
    max_excess: float
    max_rel_gap: float
    blowup_time: Optional[float]


def comparison_sweep(
    eps_values=(0.3, 0.5, 0.7),
    c1_values=(0.0, 0.5, 1.0),
    M1_values=(0.5, 1.0, 1.5),
    M2_values=(0.0, 1.0, 2.0),
    T: float = 1.0,
    dt: float = 1e-3,
    min_bracket: float = 1e-3,
) -> list:
    """Trajectory versus closed-form bound on a parameter grid.

    ``max_excess`` is the largest relative amount by which the trajectory
    exceeds the bound, over sample times where the bracket is at least
    ``min_bracket``; ``max_rel_gap`` is the largest relative gap either way.
    """
    rows = []
    for e in eps_values:
        for c1 in c1_values:
            for M1 in M1_values:
                for M2 in M2_values:
                    p = OdeParams(e, c1, M1, M2, T)
                    traj = ode_integrate(p, dt, raise_on_blowup=False)
                    excess, gap, n = 0.0, 0.0, 0
                    for t, y in zip(traj.t, traj.Y):
                        if comparison_bracket(p, t) < min_bracket:
                            continue
                        b = ode_comparison_bound(p, t)
                        excess = max(excess, (y - b) / b)
                        gap = max(gap, abs(y - b) / b)
                        n += 1
                    rows.append(ComparisonRow(e, c1, M1, M2, n, excess, gap, traj.blowup_time))
    return rows


# ----------------------------------------------------------------------------
# existence time


class NoExistenceTime(ValueError):
    pass


def tstar_conditions(k, s: float, eps: float, T: float) -> tuple:
    """Left sides minus limits of the two smallness conditions (negative = holds)."""
    e = eps
    base = k.M1**2 + T * k.M2
    g1 = k.c1 * T * base ** (1 / e) / e - (1 - 2 ** (-1 / e))
    ub4 = k.c1 * T * (2 * base) ** ((1 + e) / e) + T * k.M2
    inner = 2 ** (2 * (s + e) / s) * T * k.B0_Hs ** (2 * (s + e) / s) + k.c5 * k.M0 ** (e / s) * ub4
    C = max(k.C_eps, k.C_r)
    lhs2 = C * T ** (e / 2) * k.M1 + C * T ** (e / (s + e)) * inner ** (s / (s + e))
    limit = math.log(4) / (2 * k.c4) if k.c4 > 0 else math.inf
    return g1, lhs2 - limit


def existence_time(k, s: float, eps: float, t_max: float = 1.0) -> float:
    """Largest ``T* <= t_max`` with both conditions holding on (0, T*).

    ``k`` needs the attributes M0, M1, M2, B0_Hs, c1, c4, c5, C_eps, C_r.
    Both left sides increase with T, so each threshold is found by bisection
    down to adjacent floating-point numbers.
    """
    for name in ("M0", "M1", "M2", "B0_Hs", "c1", "c4", "c5", "C_eps", "C_r"):
        v = getattr(k, name)
        if not (math.isfinite(v) and v >= 0):
            raise NoExistenceTime(f"constant {name}={v} is not finite and nonnegative")

    def ok(T):
        g1, g2 = tstar_conditions(k, s, eps, T)
        return g1 < 0 and g2 < 0

    if ok(t_max):
        return t_max
    lo, hi = 0.0, t_max
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if ok(mid):
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise NoExistenceTime("no positive T* satisfies the smallness conditions")
    return lo
