import math

import mpmath
import numpy as np
import pytest

from nrmhd.maxreg import (
    ForcingTrace,
    duhamel_solve,
    exponential_step,
    maxreg_ratio,
    random_forcing,
    stokes_ensemble,
    stokes_ic_estimate,
)
from nrmhd.spectral import Grid, VectorField, leray_project, random_field



def constant_mode_trace(grid, K, times):
    c = np.zeros((len(times),) + grid.shape, dtype=complex)
    c[:, K, 0] = c[:, -K, 0] = 1.0
    return ForcingTrace(grid, times, c)


class TestExponentialStep:
    @pytest.mark.parametrize("lam", [0.0, 1e-9, 0.05, 1.0, 30.0, 1e4])
    def test_linear_forcing_exact(self, lam):
        # oracle: closed form of u' = -lam u + a + b t, u(0) = u0
        u0, a, b, h = 0.3, 1.1, -0.7, 0.4
        with mpmath.workdps(40):
            L = mpmath.mpf(lam)
            g = lambda t: mpmath.exp(-L * (h - t)) * (a + b * t)
            exact = float(mpmath.exp(-L * h) * u0 + mpmath.quad(g, [0, h]))
        got = exponential_step(np.array([u0]), np.array([a]), np.array([a + b * h]), np.array([lam]), h)[0]
        assert got == pytest.approx(exact, rel=1e-12, abs=1e-15)


class TestDuhamel:
    def test_zero_forcing(self, grid2):
        times = np.linspace(0, 1, 5)
        u = duhamel_solve(ForcingTrace(grid2, times, np.zeros((5,) + grid2.shape, dtype=complex)))
        assert not np.any(u.coeffs)

    def test_constant_single_mode(self, grid2):
        times = np.linspace(0, 1, 11)
        u = duhamel_solve(constant_mode_trace(grid2, 3, times))
        exact = (1 - np.exp(-9 * times)) / 9
        assert np.max(np.abs(u.coeffs[:, 3, 0] - exact)) < 1e-15

    def test_steady_state(self, rng, grid2):
        g = random_field(grid2, rng, vector=True)
        times = np.array([0.0, 5.0, 50.0])
        f = ForcingTrace.from_fields(times, [g] * 3)
        u = duhamel_solve(f)
        k2 = np.where(grid2.k2 > 0, grid2.k2, 1.0)
        steady = np.where(grid2.k2 > 0, g.coeffs / k2, 0.0)
        assert np.max(np.abs(u.coeffs[-1] - steady)) < 1e-12

    def test_linear_ramp_single_mode(self, grid2):
        # forcing t on mode (2, 0): exact u = t/lam - (1 - e^{-lam t})/lam^2
        times = np.array([0.0, 0.1, 0.35, 0.9])
        c = np.zeros((4,) + grid2.shape, dtype=complex)
        c[:, 2, 0] = c[:, -2, 0] = times
        u = duhamel_solve(ForcingTrace(grid2, times, c)).coeffs[:, 2, 0]
        exact = times / 4 + np.expm1(-4 * times) / 16
        assert np.max(np.abs(u - exact)) < 1e-15

    def test_mode_ode_residual(self, rng, grid2):
        base = random_field(grid2, rng, kmax=2)
        times = np.linspace(0, 1, 801)
        f = ForcingTrace.from_fields(times, [base * math.sin(3 * t) for t in times])
        u = duhamel_solve(f).coeffs
        h = times[1] - times[0]
        dudt = (u[2:] - u[:-2]) / (2 * h)
        resid = dudt + grid2.k2 * u[1:-1] - f.coeffs[1:-1]
        assert np.max(np.abs(resid)) < 1e-4 * np.max(np.abs(f.coeffs))

    def test_projection_commutes(self, rng, grid2):
        f = random_forcing(grid2, rng, np.linspace(0, 0.5, 6), vector=True)
        a = duhamel_solve(f.project()).coeffs
        b = np.stack([leray_project(VectorField(grid2, c)).coeffs for c in duhamel_solve(f).coeffs])
        assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))

    def test_bad_trace(self, grid2):
        with pytest.raises(ValueError):
            ForcingTrace(grid2, np.array([]), np.zeros((0,) + grid2.shape, dtype=complex))
        with pytest.raises(ValueError):
            ForcingTrace(grid2, np.array([0.1, 0.2]), np.zeros((2,) + grid2.shape, dtype=complex))


class TestMaxRegRatio:
    @pytest.mark.parametrize("K,T,nt", [(1, 1.0, 3), (3, 1.0, 9), (20, 0.3, 4)])
    def test_closed_form(self, K, T, nt):
        g = Grid(2, 64)
        rep = maxreg_ratio(constant_mode_trace(g, K, np.linspace(0, T, nt)), 0.0, 2.0)
        lam = K * K
        integral = T + 2 * math.expm1(-lam * T) / lam - math.expm1(-2 * lam * T) / (2 * lam)
        assert rep.hom_ratio == pytest.approx(math.sqrt(integral / T), rel=1e-12)
        assert rep.hom_ratio < 1

    def test_random_r2(self, rng):
        g = Grid(2, 32)
        worst = 0.0
        for _ in range(25):
            f = random_forcing(g, rng, np.linspace(0, rng.uniform(0.1, 1.0), 7), kmax=10)
            rep = maxreg_ratio(f, rng.uniform(0, 2), 2.0)
            worst = max(worst, rep.hom_ratio)
            assert rep.l2_inhom <= rep.l2_bound
            assert rep.ratio <= rep.hom_ratio * (1 + 1e-14)
        assert worst <= 1 + 1e-6

    @pytest.mark.parametrize("r", [1.25, 1.5, 3.0, 4.0])
    def test_other_exponents_finite(self, rng, r):
        g = Grid(2, 32)
        rep = maxreg_ratio(random_forcing(g, rng, np.linspace(0, 1, 5)), 1.0, r)
        assert math.isfinite(rep.ratio) and rep.ratio > 0

    def test_rejects(self, rng, grid2):
        f = random_forcing(grid2, rng, np.linspace(0, 1, 3))
        with pytest.raises(ValueError):
            maxreg_ratio(f, 0.0, 1.0)
        with pytest.raises(ValueError):
            maxreg_ratio(random_forcing(grid2, rng, np.linspace(0, 2, 3)), 0.0, 2.0)


class TestStokes:
    def setup_method(self):
        self.grid = Grid(2, 32)
        self.times = np.linspace(0, 0.5, 5)

    def test_heat_branch_chain(self, rng):
        u0 = random_field(self.grid, rng, vector=True, divergence_free=True)
        f = ForcingTrace(self.grid, self.times, np.zeros((5, 2) + self.grid.shape, dtype=complex), True)
        rep = stokes_ic_estimate(u0, f, 1.5, 0.5, 4 / 3)
        d = rep.details
        assert d["forcing_part"] == 0
        assert rep.lhs == pytest.approx(d["heat_part"], rel=1e-14)
        assert d["heat_part"] <= d["interp_integrand"] * (1 + 1e-12)
        assert d["interp_integrand"] <= d["holder_product"] * (1 + 1e-12)
        assert d["holder_product"] <= d["heat_bound_formula"] * (1 + 1e-12)

    def test_forcing_branch(self, rng):
        f = random_forcing(self.grid, rng, self.times, vector=True)
        rep = stokes_ic_estimate(VectorField.zeros(self.grid), f, 1.5, 0.5, 4 / 3)
        d = rep.details
        assert d["heat_part"] == 0
        assert rep.lhs == pytest.approx(d["forcing_part"], rel=1e-14)
        assert d["forcing_part"] <= d["forcing_holder"] * (1 + 1e-12)
        assert d["Pf_norm"] <= d["f_norm"]

    def test_rejects(self, rng):
        f = random_forcing(self.grid, rng, self.times, vector=True)
        bad = random_field(self.grid, rng, vector=True)
        good = leray_project(bad)
        with pytest.raises(ValueError):
            stokes_ic_estimate(bad, f, 1.5, 0.5, 1.5)
        for s, eps, r in [(1.0, 0.5, 1.5), (1.5, 1.0, 1.5), (1.5, 0.5, 1.0)]:
            with pytest.raises(ValueError):
                stokes_ic_estimate(good, f, s, eps, r)

    def test_ensemble_refinement(self):
        a = stokes_ensemble(Grid(2, 32), 7, 4, 1.5, 0.5, 4 / 3, 0.5)
        b = stokes_ensemble(Grid(2, 64), 7, 4, 1.5, 0.5, 4 / 3, 0.5)
        assert a.all_hold() and b.all_hold()
        assert b.C_eps == pytest.approx(a.C_eps, rel=0.2)
        assert b.C_r == pytest.approx(a.C_r, rel=0.2)
        assert a.C_eps <= a.reports[0].details["C_eps_formula"]
