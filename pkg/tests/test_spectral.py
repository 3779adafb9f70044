import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nrmhd.spectral import (
    Grid,
    GridMismatch,
    NegativeOrderOnZeroMode,
    SpectralField,
    VectorField,
    advect,
    divergence_residual,
    embed,
    homogeneous_norm,
    inner,
    l2_norm,
    lambda_pow,
    leray_project,
    load_snapshot,
    mode_mass,
    random_field,
    save_snapshot,
    sobolev_norm,
)

from conftest import shear_mode, single_mode


class TestGrid:
    def test_lattice(self):
        g = Grid(2, 8, L=2.0)
        m0 = g.m[0][:, 0]
        assert sorted(m0.tolist()) == list(range(-4, 4))
        assert np.sum(np.all(g.m == 0, axis=0)) == 1
        assert np.allclose(g.k, g.m / 2.0)

    @pytest.mark.parametrize("d,n,L", [(1, 8, 1.0), (4, 8, 1.0), (2, 7, 1.0), (2, 0, 1.0), (2, 8, 0.0)])
    def test_invalid(self, d, n, L):
        with pytest.raises(ValueError):
            Grid(d, n, L)

    def test_dealias_mask(self):
        g = Grid(2, 12)
        kept = np.unique(np.abs(g.m[0][g.dealias_mask]))
        assert kept.max() == 4


class TestParseval:
    @pytest.mark.parametrize("d,n,L", [(2, 32, 1.0), (2, 16, 2.5), (3, 16, 1.0)])
    def test_physical_equals_fourier(self, rng, d, n, L):
        g = Grid(d, n, L)
        f = random_field(g, rng, kmax=4)
        phys = f.to_physical()
        lhs = np.sqrt(np.sum(phys**2) * g.dx**d)
        assert abs(lhs - l2_norm(f)) <= 1e-10 * l2_norm(f)

    def test_round_trip_real(self, rng, grid2):
        f = random_field(grid2, rng)
        g = SpectralField.from_physical(grid2, f.to_physical())
        assert np.max(np.abs(g.coeffs - f.coeffs)) < 1e-15
        assert g.is_real()


class TestLambdaPow:
    def test_single_mode_s1(self, grid2):
        f = single_mode(grid2, (2, 0), 0.3 + 0.1j)
        out = lambda_pow(f, 1.0)
        assert np.allclose(out.coeffs, 2 * f.coeffs, atol=0, rtol=1e-15)

    def test_identity(self, rng, grid2):
        f = random_field(grid2, rng, include_mean=True)
        assert np.array_equal(lambda_pow(f, 0).coeffs, f.coeffs)

    def test_zero_mode_dropped(self, grid2):
        f = SpectralField(grid2, np.ones(grid2.shape, dtype=complex))
        out = lambda_pow(f, 0.5)
        assert out.coeffs[0, 0] == 0

    def test_negative_order_needs_zero_mean(self, rng, grid2):
        f = random_field(grid2, rng, include_mean=True)
        with pytest.raises(NegativeOrderOnZeroMode):
            lambda_pow(f, -1.0)
        g = random_field(grid2, rng)
        back = lambda_pow(lambda_pow(g, -1.0), 1.0)
        assert np.max(np.abs(back.coeffs - g.coeffs)) < 1e-14

    @given(s1=st.floats(-2, 3), s2=st.floats(-2, 3))
    @settings(max_examples=50, deadline=None)
    def test_composition(self, s1, s2):
        g = Grid(2, 16)
        f = random_field(g, np.random.default_rng(5), kmax=5)
        direct = lambda_pow(f, s1 + s2)
        composed = lambda_pow(lambda_pow(f, s1), s2)
        scale = np.max(np.abs(direct.coeffs))
        assert np.max(np.abs(composed.coeffs - direct.coeffs)) <= 1e-12 * scale

    def test_half_then_three_halves(self, rng, grid2):
        f = random_field(grid2, rng, kmax=10)
        # oracle: multiplier |k|^2 evaluated directly
        direct = f.coeffs * grid2.k2
        composed = lambda_pow(lambda_pow(f, 0.5), 1.5).coeffs
        assert np.max(np.abs(composed - direct)) <= 1e-12 * np.max(np.abs(direct))


class TestNorms:
    def test_single_mode_h1(self, grid2):
        f = single_mode(grid2, (1, 0))
        mass = l2_norm(f) ** 2
        assert sobolev_norm(f, 1.0) ** 2 == pytest.approx(2 * mass, rel=1e-14)

    def test_h0_is_l2(self, rng, grid2):
        f = random_field(grid2, rng)
        assert sobolev_norm(f, 0.0) == l2_norm(f)
        assert homogeneous_norm(f, 0.0) == pytest.approx(l2_norm(f), rel=1e-15)

    def test_homogeneous_single_mode(self, grid2):
        f = single_mode(grid2, (3, 0), 0.7)
        assert homogeneous_norm(f, 2.0) ** 2 == pytest.approx(81 * l2_norm(f) ** 2, rel=1e-14)
        assert homogeneous_norm(f, 2.0) == pytest.approx(9 * l2_norm(f), rel=1e-14)

    def test_negative_s_rejected(self, rng, grid2):
        with pytest.raises(ValueError):
            sobolev_norm(random_field(grid2, rng), -0.5)

    def test_inequalities_random(self, rng, grid2):
        for _ in range(100):
            f = random_field(grid2, rng, kmax=8, include_mean=True)
            s = rng.uniform(0.1, 3.0)
            hs = sobolev_norm(f, s)
            assert hs >= homogeneous_norm(f, s)
            assert hs >= l2_norm(f)
            assert homogeneous_norm(f, s) ** 2 + l2_norm(f) ** 2 == pytest.approx(hs**2, rel=1e-13)

    @given(s_lo=st.floats(0.0, 2.0), ds=st.floats(0.0, 2.0))
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_s(self, s_lo, ds):
        g = Grid(2, 16, L=1.0)
        f = random_field(g, np.random.default_rng(1), kmax=5)
        assert sobolev_norm(f, s_lo + ds) >= sobolev_norm(f, s_lo) * (1 - 1e-14)


class TestLeray:
    def test_divergence_free_unchanged(self, grid2):
        v = shear_mode(grid2, (2, 1), 0.4)
        p = leray_project(v)
        assert np.max(np.abs(p.coeffs - v.coeffs)) < 1e-14
        assert p.divergence_free

    def test_gradient_killed(self, rng, grid2):
        g = random_field(grid2, rng)
        grad = VectorField(grid2, 1j * grid2.k * g.coeffs)
        p = leray_project(grad)
        assert np.max(np.abs(p.coeffs)) < 1e-14 * np.max(np.abs(grad.coeffs))

    def test_self_adjoint_and_idempotent(self, rng, grid2):
        for _ in range(20):
            v = random_field(grid2, rng, vector=True)
            w = random_field(grid2, rng, vector=True)
            pv, pw = leray_project(v), leray_project(w)
            scale = l2_norm(v) * l2_norm(w)
            assert abs(inner(pv, w) - inner(v, pw)) <= 1e-12 * scale
            assert np.max(np.abs(leray_project(pv).coeffs - pv.coeffs)) <= 1e-12 * np.max(np.abs(pv.coeffs))
            assert divergence_residual(pv) <= 1e-12

    def test_flag_enforced(self, rng, grid2):
        v = random_field(grid2, rng, vector=True)
        with pytest.raises(ValueError):
            VectorField(grid2, v.coeffs, divergence_free=True)


class TestAdvect:
    def test_constant_velocity(self, grid2):
        u = VectorField(grid2, np.zeros((2,) + grid2.shape, dtype=complex), divergence_free=True)
        u.coeffs[0, 0, 0] = 1.0
        out = advect(u, single_mode(grid2, (3, 2))).coeffs
        assert out[3, 2] == pytest.approx(3j, abs=1e-13)
        assert out[-3, -2] == pytest.approx(-3j, abs=1e-13)
        out[3, 2] = out[-3, -2] = 0
        assert np.max(np.abs(out)) < 1e-14

    def test_constant_w(self, rng, grid2):
        u = random_field(grid2, rng, vector=True, divergence_free=True)
        w = SpectralField(grid2, np.zeros(grid2.shape, dtype=complex))
        w.coeffs[0, 0] = 2.0
        assert np.max(np.abs(advect(u, w).coeffs)) < 1e-15

    def test_skew_symmetry(self, rng):
        g = Grid(2, 48)
        for _ in range(10):
            u = random_field(g, rng, kmax=12, vector=True, divergence_free=True)
            w = random_field(g, rng, kmax=14)
            wv = random_field(g, rng, kmax=14, vector=True)
            assert abs(inner(advect(u, w), w)) <= 1e-10 * l2_norm(u) * l2_norm(w) ** 2
            assert abs(inner(advect(u, wv), wv)) <= 1e-10 * l2_norm(u) * l2_norm(wv) ** 2

    def test_cross_pairing_cancels(self, rng):
        g = Grid(2, 48)
        for _ in range(10):
            b = random_field(g, rng, kmax=12, vector=True, divergence_free=True)
            u = random_field(g, rng, kmax=12, vector=True, divergence_free=True)
            total = inner(advect(b, u), b) + inner(advect(b, b), u)
            scale = abs(inner(advect(b, u), b)) + abs(inner(advect(b, b), u))
            assert abs(total) <= 1e-9 * scale

    def test_matches_physical_product(self, rng):
        # band-limited inputs to n/6 make the collocation product exact
        g = Grid(2, 48)
        u = random_field(g, rng, kmax=6, vector=True, divergence_free=True)
        w = random_field(g, rng, kmax=6)
        up = u.to_physical()
        x, y = g.x
        # oracle: differentiate the trigonometric sum analytically
        grad = [np.zeros(g.shape), np.zeros(g.shape)]
        for idx in zip(*np.nonzero(w.coeffs)):
            kx, ky = g.k[0][idx], g.k[1][idx]
            phase = np.exp(1j * (kx * x + ky * y)) * w.coeffs[idx]
            grad[0] = grad[0] + (1j * kx * phase).real
            grad[1] = grad[1] + (1j * ky * phase).real
        expected = up[0] * grad[0] + up[1] * grad[1]
        got = advect(u, w).to_physical()
        assert np.max(np.abs(got - expected)) < 1e-12 * np.max(np.abs(expected))

    def test_grid_mismatch(self, rng):
        u = random_field(Grid(2, 16), rng, kmax=4, vector=True)
        w = random_field(Grid(2, 32), rng, kmax=4)
        with pytest.raises(GridMismatch):
            advect(u, w)


class TestSnapshot:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        g = Grid(3, 8, L=1.5)
        v = random_field(g, rng, kmax=2, vector=True, divergence_free=True)
        p = tmp_path / "v.npz"
        save_snapshot(p, v)
        back = load_snapshot(p)
        assert back.grid == g and back.divergence_free
        assert np.array_equal(back.coeffs, v.coeffs)
        f = random_field(Grid(2, 16), rng, kmax=4)
        save_snapshot(p, f)
        assert np.array_equal(load_snapshot(p).coeffs, f.coeffs)


def test_embed_preserves_norms(rng):
    f = random_field(Grid(2, 32), rng, kmax=8)
    big = embed(f, Grid(2, 64))
    assert sobolev_norm(big, 1.7) == pytest.approx(sobolev_norm(f, 1.7), rel=1e-14)
    assert np.allclose(np.sum(mode_mass(big)), np.sum(mode_mass(f)), rtol=1e-14)


def test_random_field_grid_independent():
    a = random_field(Grid(2, 32), np.random.default_rng(3), kmax=6)
    b = random_field(Grid(2, 64), np.random.default_rng(3), kmax=6)
    assert sobolev_norm(a, 2.0) == pytest.approx(sobolev_norm(b, 2.0), rel=1e-14)
