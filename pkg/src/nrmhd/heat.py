"""
Heat semigroup on the lattice and the radial counterexample on R^d.

On the grid the semigroup is the exact multiplier ``exp(-|k|^2 t)``, so all
time integrals of Sobolev norms reduce to one-dimensional quadratures in t.
The counterexample with unbounded frequency support cannot live on a lattice;
it is evaluated with radial quadrature in ``rho = |xi|``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .spectral import Field, Grid, mode_mass, sobolev_norm

GAUSS_NODES = 12


class QuadratureTailError(RuntimeError):
    """The neglected radial tail is not below the requested tolerance."""


def heat_evolve(u0: Field, t: float) -> Field:
    """Exact heat flow: multiply each coefficient by ``exp(-|k|^2 t)``."""
    if t < 0:
        raise ValueError(f"heat_evolve needs t >= 0, got {t}")
    damp = np.exp(-u0.grid.k2 * t)
    coeffs = u0.coeffs * damp
    if hasattr(u0, "divergence_free"):
        return u0.with_coeffs(coeffs, u0.divergence_free)
    return u0.with_coeffs(coeffs)


def graded_mesh(T: float, stiffness: float = 0.0, levels: int = 48, ratio: float = 2.0) -> np.ndarray:
    """Breakpoints on [0, T] graded geometrically toward t = 0.

    Each geometric cell is further split so that ``width * stiffness <= 2``,
    which keeps Gauss-Legendre accurate on ``exp(-stiffness * t)``.
    """
    geo = T * ratio ** -np.arange(levels + 1, dtype=float)
    pts = [0.0]
    edges = np.concatenate([[0.0], geo[::-1]])
    for a, b in zip(edges[:-1], edges[1:]):
        pieces = max(1, int(math.ceil((b - a) * stiffness / 2.0)))
        pts.extend(np.linspace(a, b, pieces + 1)[1:])
    return np.asarray(pts)


def gauss_rule(breaks: np.ndarray, order: int = GAUSS_NODES):
    """Composite Gauss-Legendre nodes and weights for the given breakpoints."""
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = breaks[:-1, None], breaks[1:, None]
    nodes = 0.5 * (b - a) * x + 0.5 * (b + a)
    weights = 0.5 * (b - a) * w
    return nodes.ravel(), weights.ravel()


def _radial_spectrum(u0: Field):
    """Collapse the lattice to distinct |k|^2 with summed L^2 mass."""
    mass = mode_mass(u0).ravel()
    k2 = u0.grid.k2.ravel()
    keep = mass > 0
    uniq, inv = np.unique(k2[keep], return_inverse=True)
    return uniq, np.bincount(inv, weights=mass[keep])


def _sobolev_weight(k2: np.ndarray, s: float) -> np.ndarray:
    # multiplier |k|^s + 1 of the squared H^{s/2} norm; plain L^2 at s = 0
    if s == 0:
        return np.ones_like(k2)
    return np.where(k2 > 0, k2 ** (0.5 * s), 0.0) + 1.0


def norm_history(u0: Field, s: float, times: np.ndarray, homogeneous: bool = False) -> np.ndarray:
    """``||u(t)||_{H^s}^2`` (or the homogeneous version) at each time."""
    k2, mass = _radial_spectrum(u0)
    if homogeneous:
        w = np.where(k2 > 0, k2**s, 0.0) if s else np.ones_like(k2)
    else:
        w = _sobolev_weight(k2, 2 * s)
    decay = np.exp(-2.0 * np.outer(times, k2))
    return decay @ (w * mass)


def cq_constant(q: float) -> float:
    """Constant C_q in the L^q-in-time bound for two extra derivatives.

    Product of the Holder factor ``((2-q)/(2-2q))^((2-q)/2)`` (the t-power
    integral with T pulled out) and ``2^(-q/2)`` from the weighted bound
    ``int t ||u||_{H^{s+2}}^2 <= ||u0||_{H^s}^2 / 2``.
    """
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    return ((2 - q) / (2 - 2 * q)) ** ((2 - q) / 2) * 2 ** (-q / 2)


@dataclass
class SmoothingReport:
    s: float
    T: float
    q: float
    sup_Hs: float
    int_Hs1: float
    int_weighted: float
    int_Lq: float
    int_L1: float
    bound: float
    Lq_bound: float
    energy_lhs: float
    energy_rhs: float
    weighted_lhs: float
    weighted_rhs: float
    margins: dict = field(default_factory=dict)

    @property
    def energy_residual(self) -> float:
        return abs(self.energy_lhs - self.energy_rhs) / max(self.energy_rhs, 1e-300)

    def passed(self, tol: float = 1e-6) -> bool:
        return all(m >= -tol * max(self.bound, 1.0) for m in self.margins.values())

    def to_dict(self) -> dict:
        out = asdict(self)
        out["energy_residual"] = self.energy_residual
        return out


def verify_smoothing(
    u0: Field, s: float, T: float, q: float, time_grid: Optional[np.ndarray] = None
) -> SmoothingReport:
    """Measure the four heat-flow quantities and compare them with their bounds.

    ``time_grid`` holds quadrature breakpoints on [0, T]; by default a mesh
    graded toward t = 0 and refined against the fastest decay rate present.
    """
    if T > 1 or T <= 0:
        raise ValueError(f"T must lie in (0, 1], got {T}")
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    k2, mass = _radial_spectrum(u0)
    if time_grid is None:
        time_grid = graded_mesh(T, stiffness=2.0 * (k2.max() if k2.size else 0.0))
    time_grid = np.asarray(time_grid, dtype=float)
    if time_grid[0] != 0 or not np.isclose(time_grid[-1], T) or np.any(np.diff(time_grid) <= 0):
        raise ValueError("time_grid must increase strictly from 0 to T")
    nodes, weights = gauss_rule(time_grid)
    decay = np.exp(-2.0 * np.outer(nodes, k2))

    lam = lambda sig: np.where(k2 > 0, k2**sig, 0.0) if sig else np.ones_like(k2)
    hs = lambda sig: (lam(sig) + 1.0) if sig else np.ones_like(k2)

    u0_hs2 = float(np.sum(mass * hs(s)))
    hs1 = decay @ (mass * hs(s + 1))
    hs2 = decay @ (mass * hs(s + 2))
    hs_at = np.exp(-2.0 * np.outer(time_grid, k2)) @ (mass * hs(s))

    int_Hs1 = float(weights @ hs1)
    int_weighted = float(weights @ (nodes * hs2))
    int_Lq = float(weights @ hs2 ** (q / 2))
    int_L1 = float(weights @ np.sqrt(hs2))
    Lq_bound = cq_constant(q) * T ** (1 - q) * u0_hs2 ** (q / 2)

    # energy equality for Lambda^s: int ||Lambda^{s+1}u||^2 + 1/2 ||Lambda^s u(T)||^2
    lam_s1 = decay @ (mass * lam(s + 1))
    energy_lhs = float(weights @ lam_s1) + 0.5 * float(np.sum(mass * lam(s) * np.exp(-2 * k2 * T)))
    energy_rhs = 0.5 * float(np.sum(mass * lam(s)))
    weighted_lhs = 0.5 * T * float(np.sum(mass * lam(s + 1) * np.exp(-2 * k2 * T))) + float(
        weights @ (nodes * (decay @ (mass * lam(s + 2))))
    )
    weighted_rhs = 0.25 * float(np.sum(mass * lam(s)))

    margins = {
        "sup_Hs": u0_hs2 - float(hs_at.max()),
        "int_Hs1": u0_hs2 - int_Hs1,
        "int_weighted": u0_hs2 - int_weighted,
        "int_weighted_half": 0.5 * u0_hs2 - int_weighted,
        "int_Lq": Lq_bound - int_Lq,
        "weighted_energy": weighted_rhs - weighted_lhs,
    }
    return SmoothingReport(
        s=s,
        T=T,
        q=q,
        sup_Hs=float(hs_at.max()),
        int_Hs1=int_Hs1,
        int_weighted=int_weighted,
        int_Lq=int_Lq,
        int_L1=int_L1,
        bound=u0_hs2,
        Lq_bound=Lq_bound,
        energy_lhs=energy_lhs,
        energy_rhs=energy_rhs,
        weighted_lhs=weighted_lhs,
        weighted_rhs=weighted_rhs,
        margins=margins,
    )


# ---------------------------------------------------------------------------
# radial counterexample on R^d
# ---------------------------------------------------------------------------


def sphere_measure(d: int) -> float:
    """Surface measure of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def shell_constant(d: int) -> float:
    """``c`` with ``int_{|xi| <= j} |xi|^{4-d} dxi = c j^4``."""
    return sphere_measure(d) / 4.0


def counterexample_profile(rho, d: int):
    """Fourier profile ``1 / (rho^{d/2} log(2 + rho))``."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("profile is defined for rho > 0 only")
    out = 1.0 / (rho ** (d / 2) * np.log(2.0 + rho))
    return float(out) if out.ndim == 0 else out


def _radial_h2_density(x, t):
    # integrand after x = rho * sqrt(2t): x^3 exp(-x^2) / log^2(2 + x / sqrt(2t))
    return x**3 * np.exp(-x * x) / np.log(2.0 + x / math.sqrt(2.0 * t)) ** 2


def _tail_bound(X: float, t: float) -> float:
    return 0.5 * (X * X + 1.0) * math.exp(-X * X) / math.log(2.0 + X / math.sqrt(2.0 * t)) ** 2


def counterexample_H2_norm(
    t: float, d: int = 2, rho_max: Optional[float] = None, tol: float = 1e-10
) -> float:
    """``||u(t)||_{Hdot^2}`` for the radial counterexample data.

    ``rho_max`` is the radial cutoff; when omitted it is chosen from the
    Gaussian tail bound so that the neglected part is below ``tol`` of the
    retained integral. An explicit cutoff with a larger tail raises
    :class:`QuadratureTailError`.
    """
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")
    scale = math.sqrt(2.0 * t)
    if rho_max is None:
        X = 4.0
        while _tail_bound(X, t) > tol * 1e-3:
            X += 0.5
    else:
        X = rho_max * scale
    val, _ = integrate.quad(
        _radial_h2_density, 0.0, X, args=(t,), epsabs=0.0, epsrel=1e-13, limit=400,
        points=[math.sqrt(1.5)] if X > math.sqrt(1.5) else None,
    )
    if _tail_bound(X, t) > tol * val:
        raise QuadratureTailError(
            f"tail bound {_tail_bound(X, t):.3e} exceeds {tol:g} of retained {val:.3e}"
        )
    return math.sqrt(sphere_measure(d) * val / (4.0 * t * t))


def restricted_H2_squared(t: float, d: int, j: float) -> float:
    """``int_{|xi| <= j} |xi|^4 |u0^(xi)|^2 exp(-2|xi|^2 t) dxi``."""
    f = lambda r: r**3 * math.exp(-2.0 * r * r * t) / math.log(2.0 + r) ** 2
    val, _ = integrate.quad(f, 0.0, j, epsabs=0.0, epsrel=1e-13, limit=200)
    return sphere_measure(d) * val


def ball_H2_squared(d: int, j: float) -> float:
    """``int_{|xi| <= j} |xi|^4 |u0^(xi)|^2 dxi`` (no heat damping)."""
    return restricted_H2_squared(0.0, d, j)


def _time_integral(func, a: float, b: float, order: int = 10) -> float:
    nodes, weights = gauss_rule(np.array([a, b]), order)
    return float(sum(w * func(x) for x, w in zip(nodes, weights)))


def log_sum(N: int, j0: int = 1) -> float:
    """``S(N) = sum_{j=j0}^N 1 / ((j+1) log(2+j))``, correctly rounded summation."""
    if N < j0:
        return 0.0
    j = np.arange(j0, N + 1, dtype=float)
    return math.fsum(1.0 / ((j + 1.0) * np.log(2.0 + j)))


def first_index(T: float) -> int:
    """Smallest j0 with ``j0^{-2} <= T``."""
    j0 = int(math.ceil(T ** -0.5))
    while j0 > 1 and (j0 - 1) ** -2 <= T:
        j0 -= 1
    while j0 ** -2 > T:
        j0 += 1
    return j0


def last_index(t_min: float) -> int:
    """Largest N with ``(N+1)^{-2} >= t_min`` (slices fully inside [t_min, T])."""
    N = int(math.floor(t_min ** -0.5)) - 1
    while (N + 2) ** -2 >= t_min:
        N += 1
    while N >= 0 and (N + 1) ** -2 < t_min:
        N -= 1
    return N


@dataclass
class ChainStep:
    """One slice ``t in [(j+1)^{-2}, j^{-2}]`` of the lower-bound chain."""

    j: int
    full: float
    restricted: float
    damped_const: float
    interval_bound: float
    shell_bound: float
    observed_damping: float

    @property
    def margins(self) -> tuple:
        return (
            self.full - self.restricted,
            self.restricted - self.damped_const,
            self.damped_const - self.interval_bound,
            self.interval_bound - self.shell_bound,
        )

    def holds(self, rtol: float = 1e-10) -> bool:
        return all(m >= -rtol * self.full for m in self.margins)


def chain_step(j: int, d: int) -> ChainStep:
    """Evaluate every inequality of the slice-by-slice lower bound at index j.

    The damping constant after the square root is ``e^{-1}``: on the slice
    ``|xi| <= j``, ``t <= j^{-2}`` the weight ``exp(-2|xi|^2 t)`` is at least
    ``e^{-2}``. ``observed_damping`` is the sharp ratio restricted / undamped.
    """
    a, b = (j + 1.0) ** -2, float(j) ** -2
    full = _time_integral(lambda t: counterexample_H2_norm(t, d), a, b)
    restricted = _time_integral(lambda t: math.sqrt(restricted_H2_squared(t, d, j)), a, b)
    ball = ball_H2_squared(d, j)
    damped_const = math.exp(-1.0) * (b - a) * math.sqrt(ball)
    interval_bound = math.exp(-1.0) * math.sqrt(ball) / (j * j * (j + 1.0))
    shell_bound = math.exp(-1.0) * math.sqrt(shell_constant(d)) / ((j + 1.0) * math.log(2.0 + j))
    return ChainStep(
        j=j,
        full=full,
        restricted=restricted,
        damped_const=damped_const,
        interval_bound=interval_bound,
        shell_bound=shell_bound,
        observed_damping=restricted / ((b - a) * math.sqrt(ball)),
    )


def divergence_integral(t_mins: Sequence[float], T: float, d: int = 2, order: int = 10) -> np.ndarray:
    """``I(t_min) = int_{t_min}^T ||u(t)||_{Hdot^2} dt`` for each requested t_min.

    Integrates on a dyadic mesh (ratio 2 toward 0) with the requested lower
    limits inserted as breakpoints, accumulating from T downward.
    """
    t_mins = np.asarray(t_mins, dtype=float)
    if np.any(t_mins <= 0) or np.any(t_mins >= T):
        raise ValueError("each t_min must lie in (0, T)")
    lo = t_mins.min()
    levels = int(math.ceil(math.log2(T / lo)))
    breaks = np.unique(np.concatenate([T * 2.0 ** -np.arange(levels + 1), t_mins]))
    breaks = breaks[breaks >= lo]
    cum = {}
    total = 0.0
    for a, b in zip(breaks[::-1][1:], breaks[::-1][:-1]):
        total += _time_integral(lambda t: counterexample_H2_norm(t, d), a, b, order)
        cum[a] = total
    return np.array([cum[t] for t in t_mins])


@dataclass
class DivergenceScan:
    d: int
    T: float
    j0: int
    t_min: np.ndarray
    I: np.ndarray
    N: np.ndarray
    S: np.ndarray
    steps: list

    @property
    def lower_bound(self) -> np.ndarray:
        return math.exp(-1.0) * math.sqrt(shell_constant(self.d)) * self.S

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.lower_bound > 0, self.I / self.lower_bound, np.inf)

    def rows(self):
        for row in zip(self.t_min, self.I, self.N, self.S, self.ratio):
            yield row

    def rows_with_bound(self):
        yield from zip(self.t_min, self.I, self.N, self.S, self.lower_bound, self.ratio)


def counterexample_divergence_scan(
    d: int, T: float, t_min_list: Sequence[float], j_max: int = 50
) -> DivergenceScan:
    """Tabulate I(t_min) against the log-sum lower bound and the slice chain."""
    t_min = np.asarray(t_min_list, dtype=float)
    if np.any(np.diff(t_min) >= 0):
        raise ValueError("t_min_list must be strictly decreasing")
    j0 = first_index(T)
    I = divergence_integral(t_min, T, d)
    N = np.array([last_index(t) for t in t_min])
    S = np.array([log_sum(int(n), j0) for n in N])
    steps = [chain_step(j, d) for j in range(j0, j_max + 1)]
    return DivergenceScan(d=d, T=T, j0=j0, t_min=t_min, I=I, N=N, S=S, steps=steps)
