"""
Periodic Fourier field algebra on the box [0, 2*pi*L)^d.

Fields are stored as Fourier amplitudes ``c_m`` of the expansion

    f(x) = sum_m c_m exp(i k_m . x),    k_m = m / L,

on the full complex lattice ``m in {-n/2, ..., n/2-1}^d`` (FFT ordering).
L^2 norms are computed Fourier-side with the box volume ``(2*pi*L)^d`` so
that they coincide with the physical-space integrals.

Conventions:
    * ``Lambda^s`` is the multiplier ``|k|^s``; the zero mode is sent to 0
      for ``s > 0`` and left alone for ``s == 0``.
    * ``||f||_{H^s}^2 = ||Lambda^s f||^2 + ||f||^2`` for ``s > 0`` and
      ``||f||_{H^0} = ||f||_{L^2}``.
    * Dealiasing uses the 2/3 rule: every mode with some ``|m_j| > n/3`` is
      zeroed, both on the inputs and on the output of quadratic products.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import scipy.fft as sfft

SNAPSHOT_FORMAT = "nrmhd-snapshot-v1"


class NegativeOrderOnZeroMode(ValueError):
    """Raised when a negative-order multiplier meets a nonzero mean."""


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Periodic lattice with ``n`` modes per axis in ``d`` dimensions.

    The box is ``[0, 2*pi*L)^d`` so wavenumbers are integer multiples of
    ``1/L``.
    """

    d: int
    n: int
    L: float = 1.0

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"d must be 2 or 3, got {self.d}")
        if self.n <= 0 or self.n % 2:
            raise ValueError(f"n must be a positive even integer, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def volume(self) -> float:
        return (2.0 * np.pi * self.L) ** self.d

    @property
    def dx(self) -> float:
        return 2.0 * np.pi * self.L / self.n

    @cached_property
    def m(self) -> np.ndarray:
        """Integer lattice indices, shape (d, n, ..., n), FFT ordering."""
        m1 = np.fft.fftfreq(self.n, d=1.0 / self.n).round().astype(np.int64)
        return np.stack(np.meshgrid(*([m1] * self.d), indexing="ij"))

    @cached_property
    def k(self) -> np.ndarray:
        return self.m / self.L

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.k**2, axis=0)

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        return np.all(np.abs(self.m) <= self.n / 3.0, axis=0)

    @cached_property
    def x(self) -> np.ndarray:
        """Physical collocation points, shape (d, n, ..., n)."""
        x1 = self.dx * np.arange(self.n)
        return np.stack(np.meshgrid(*([x1] * self.d), indexing="ij"))

    def symbol_power(self, s: float) -> np.ndarray:
        return _symbol_power(self, float(s))


@lru_cache(maxsize=64)
def _symbol_power(grid: Grid, s: float) -> np.ndarray:
    if s == 0.0:
        return np.ones(grid.shape)
    out = np.zeros(grid.shape)
    nz = grid.k2 > 0
    out[nz] = grid.k2[nz] ** (0.5 * s)
    return out


def _fft(values: np.ndarray, d: int) -> np.ndarray:
    n_total = np.prod(values.shape[-d:])
    return sfft.fftn(values, axes=tuple(range(-d, 0))) / n_total


def _ifft(coeffs: np.ndarray, d: int) -> np.ndarray:
    n_total = np.prod(coeffs.shape[-d:])
    return sfft.ifftn(coeffs, axes=tuple(range(-d, 0))) * n_total


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Scalar field held as Fourier amplitudes on ``grid``."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != self.grid.shape:
            raise ValueError(
                f"coefficient shape {self.coeffs.shape} does not match grid {self.grid.shape}"
            )

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @classmethod
    def from_physical(cls, grid: Grid, values: np.ndarray) -> "SpectralField":
        return cls(grid, _fft(np.asarray(values, dtype=float), grid.d).astype(complex))

    def to_physical(self) -> np.ndarray:
        return _ifft(self.coeffs, self.grid.d).real

    def is_real(self, tol: float = 1e-12) -> bool:
        """Conjugate symmetry ``c(-m) = conj(c(m))`` (Nyquist planes excluded)."""
        return _hermitian_defect(self.coeffs, self.grid) <= tol * max(
            np.max(np.abs(self.coeffs)), 1e-300
        )

    def with_coeffs(self, coeffs: np.ndarray) -> "SpectralField":
        return SpectralField(self.grid, coeffs)

    def __add__(self, other):
        _check_grid(self, other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_grid(self, other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, a: float):
        return self.with_coeffs(self.coeffs * a)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class VectorField:
    """``d``-component field; ``coeffs`` has shape ``(d, n, ..., n)``.

    ``divergence_free`` is an assertion: construction fails if it is set and
    the spectral divergence is not at rounding level.
    """

    grid: Grid
    coeffs: np.ndarray
    divergence_free: bool = False

    def __post_init__(self):
        if self.coeffs.shape != (self.grid.d,) + self.grid.shape:
            raise ValueError(
                f"coefficient shape {self.coeffs.shape} does not match "
                f"{(self.grid.d,) + self.grid.shape}"
            )
        if self.divergence_free and divergence_residual(self) > 1e-12:
            raise ValueError(
                f"field flagged divergence-free has residual {divergence_residual(self):.3e}"
            )

    @classmethod
    def _projected(cls, grid: Grid, coeffs: np.ndarray) -> "VectorField":
        # output of an exact projection; skip the relative check, which is
        # meaningless for fields at rounding level
        out = cls(grid, coeffs)
        object.__setattr__(out, "divergence_free", True)
        return out

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((grid.d,) + grid.shape, dtype=complex), True)

    @classmethod
    def from_components(
        cls, components: Sequence[SpectralField], divergence_free: bool = False
    ) -> "VectorField":
        grid = components[0].grid
        for c in components:
            if c.grid != grid:
                raise GridMismatch("components live on different grids")
        return cls(grid, np.stack([c.coeffs for c in components]), divergence_free)

    @classmethod
    def from_physical(
        cls, grid: Grid, values: np.ndarray, divergence_free: bool = False
    ) -> "VectorField":
        return cls(grid, _fft(np.asarray(values, dtype=float), grid.d).astype(complex), divergence_free)

    @property
    def components(self) -> tuple:
        return tuple(SpectralField(self.grid, c) for c in self.coeffs)

    def to_physical(self) -> np.ndarray:
        return _ifft(self.coeffs, self.grid.d).real

    def with_coeffs(self, coeffs: np.ndarray, divergence_free: bool = False) -> "VectorField":
        return VectorField(self.grid, coeffs, divergence_free)

    def __add__(self, other):
        _check_grid(self, other)
        return self.with_coeffs(
            self.coeffs + other.coeffs, self.divergence_free and other.divergence_free
        )

    def __sub__(self, other):
        _check_grid(self, other)
        return self.with_coeffs(
            self.coeffs - other.coeffs, self.divergence_free and other.divergence_free
        )

    def __mul__(self, a: float):
        return self.with_coeffs(self.coeffs * a, self.divergence_free)

    __rmul__ = __mul__


Field = Union[SpectralField, VectorField]


def _check_grid(a: Field, b: Field) -> None:
    if a.grid != b.grid:
        raise GridMismatch(f"grid mismatch: {a.grid} vs {b.grid}")


def _hermitian_defect(coeffs: np.ndarray, grid: Grid) -> float:
    flipped = np.conj(_flip(coeffs, grid))
    interior = np.all(np.abs(grid.m) < grid.n // 2, axis=0)
    return float(np.max(np.abs(coeffs - flipped)[..., interior], initial=0.0))


def _flip(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """Return ``c(-m)`` in FFT ordering."""
    out = coeffs
    for ax in range(-grid.d, 0):
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return out


def divergence_residual(v: VectorField) -> float:
    """max_k |k . v(k)| relative to max_k |k| |v(k)|."""
    div = np.abs(np.sum(v.grid.k * v.coeffs, axis=0))
    scale = np.max(v.grid.kabs * np.sqrt(np.sum(np.abs(v.coeffs) ** 2, axis=0)))
    if scale == 0.0:
        return 0.0
    return float(np.max(div) / scale)


def lambda_pow(f: Field, s: float):
    """Apply the fractional derivative ``Lambda^s`` (multiplier ``|k|^s``)."""
    s = float(s)
    if s < 0:
        zero = f.coeffs[(Ellipsis,) + (0,) * f.grid.d]
        if np.any(zero != 0):
            raise NegativeOrderOnZeroMode(
                f"Lambda^{s} is undefined on a field with nonzero mean"
            )
    coeffs = f.coeffs * f.grid.symbol_power(s)
    if isinstance(f, VectorField):
        return f.with_coeffs(coeffs, f.divergence_free)
    return f.with_coeffs(coeffs)


def mode_mass(f: Field) -> np.ndarray:
    """Per-wavenumber L^2 mass ``vol * sum_components |c(k)|^2``."""
    a2 = np.abs(f.coeffs) ** 2
    if isinstance(f, VectorField):
        a2 = a2.sum(axis=0)
    return f.grid.volume * a2


def l2_norm(f: Field) -> float:
    return float(np.sqrt(np.sum(mode_mass(f))))


def inner(f: Field, g: Field) -> float:
    """Real L^2 inner product of two real fields."""
    _check_grid(f, g)
    return float(f.grid.volume * np.real(np.vdot(g.coeffs, f.coeffs)))


def homogeneous_norm(f: Field, s: float) -> float:
    """``||Lambda^s f||_{L^2}``."""
    s = float(s)
    if s < 0:
        lambda_pow(f, s)  # zero-mode check
    return float(np.sqrt(np.sum(mode_mass(f) * f.grid.symbol_power(2 * s))))


def sobolev_norm(f: Field, s: float) -> float:
    if s < 0:
        raise ValueError(f"sobolev_norm needs s >= 0, got {s}")
    if s == 0:
        return l2_norm(f)
    mass = mode_mass(f)
    return float(np.sqrt(np.sum(mass * (f.grid.symbol_power(2 * s) + 1.0))))


def sobolev_norm_from_mass(mass: np.ndarray, grid: Grid, s: float) -> float:
    """Same as :func:`sobolev_norm` but from a precomputed :func:`mode_mass`."""
    if s == 0:
        return float(np.sqrt(np.sum(mass)))
    return float(np.sqrt(np.sum(mass * (grid.symbol_power(2 * s) + 1.0))))


def gradient_sobolev_norm(f: Field, s: float) -> float:
    """``||grad f||_{H^s}`` summed over all derivative components."""
    mass = mode_mass(f)
    w = f.grid.symbol_power(2 * s + 2) + f.grid.k2 if s > 0 else f.grid.k2
    return float(np.sqrt(np.sum(mass * w)))


def leray_project(v: VectorField) -> VectorField:
    """Orthogonal projection onto divergence-free fields."""
    k = v.grid.k
    k2 = np.where(v.grid.k2 > 0, v.grid.k2, 1.0)
    kdotv = np.sum(k * v.coeffs, axis=0)
    return VectorField._projected(v.grid, v.coeffs - k * (kdotv / k2))


def dealias(f: Field):
    coeffs = f.coeffs * f.grid.dealias_mask
    if isinstance(f, VectorField):
        return f.with_coeffs(coeffs, f.divergence_free)
    return f.with_coeffs(coeffs)


def _advect_coeffs(u_phys: np.ndarray, w_coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    # w_coeffs: (c, n..); returns (c, n..) coefficients of sum_j u_j d_j w_c
    d = grid.d
    mask = grid.dealias_mask
    out = np.empty_like(w_coeffs)
    for c in range(w_coeffs.shape[0]):
        wc = w_coeffs[c] * mask
        acc = np.zeros(grid.shape)
        for j in range(d):
            acc += u_phys[j] * _ifft(1j * grid.k[j] * wc, d).real
        out[c] = _fft(acc, d) * mask
    return out


def advect(u: VectorField, w: Field) -> Field:
    """Dealiased pseudo-spectral ``(u . grad) w``."""
    _check_grid(u, w)
    grid = u.grid
    u_phys = _ifft(u.coeffs * grid.dealias_mask, grid.d).real
    if isinstance(w, VectorField):
        return VectorField(grid, _advect_coeffs(u_phys, w.coeffs, grid))
    return SpectralField(grid, _advect_coeffs(u_phys, w.coeffs[None], grid)[0])


def multiply(f: SpectralField, g: SpectralField) -> SpectralField:
    """Pointwise product on the collocation grid.

    Exact (alias-free) when the two bands sum to less than n/2 per axis.
    """
    _check_grid(f, g)
    return SpectralField.from_physical(f.grid, f.to_physical() * g.to_physical())


def sup_norm(f: Field) -> float:
    """Max of the pointwise magnitude on the collocation grid."""
    vals = f.to_physical()
    if isinstance(f, VectorField):
        return float(np.sqrt(np.max(np.sum(vals**2, axis=0))))
    return float(np.max(np.abs(vals)))


def random_field(
    grid: Grid,
    rng: np.random.Generator,
    kmax: int = 8,
    slope: float = 2.0,
    vector: bool = False,
    divergence_free: bool = False,
    include_mean: bool = False,
) -> Field:
    """Random real band-limited field supported on ``|m_j| <= kmax``.

    The coefficients are drawn on the fixed box ``[-kmax, kmax]^d`` before
    being embedded, so the same generator state produces the same continuous
    field on every grid that resolves the band.
    """
    if kmax > grid.n // 3:
        raise ValueError(f"kmax={kmax} exceeds the dealiased band n/3 of n={grid.n}")
    ncomp = grid.d if vector else 1
    side = 2 * kmax + 1
    shape = (ncomp,) + (side,) * grid.d
    a = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    mm = np.stack(np.meshgrid(*([np.arange(-kmax, kmax + 1)] * grid.d), indexing="ij"))
    a *= (1.0 + np.sum(mm**2, axis=0)) ** (-slope / 2.0)
    # hermitian part: a(m) <- (a(m) + conj(a(-m))) / 2
    rev = a[(slice(None),) + (slice(None, None, -1),) * grid.d]
    a = 0.5 * (a + np.conj(rev))
    if not include_mean:
        a[(slice(None),) + (kmax,) * grid.d] = 0.0
    coeffs = np.zeros((ncomp,) + grid.shape, dtype=complex)
    idx = np.arange(-kmax, kmax + 1) % grid.n
    coeffs[(slice(None),) + np.ix_(*([idx] * grid.d))] = a
    if vector:
        v = VectorField(grid, coeffs)
        return leray_project(v) if divergence_free else v
    return SpectralField(grid, coeffs[0])


def embed(f: Field, grid: Grid) -> Field:
    """Re-sample a band-limited field on another grid with the same L and d."""
    if grid.d != f.grid.d or grid.L != f.grid.L:
        raise GridMismatch("embedding requires matching d and L")
    band = min(f.grid.n, grid.n) // 2 - 1
    src_idx = np.arange(-band, band + 1) % f.grid.n
    dst_idx = np.arange(-band, band + 1) % grid.n
    lead = f.coeffs.shape[: f.coeffs.ndim - f.grid.d]
    dropped = f.coeffs.copy()
    dropped[(Ellipsis,) + np.ix_(*([src_idx] * grid.d))] = 0.0
    if np.any(dropped != 0):
        raise ValueError("field has content outside the band shared by both grids")
    out = np.zeros(lead + grid.shape, dtype=complex)
    out[(Ellipsis,) + np.ix_(*([dst_idx] * grid.d))] = f.coeffs[
        (Ellipsis,) + np.ix_(*([src_idx] * grid.d))
    ]
    if isinstance(f, VectorField):
        return VectorField(grid, out, f.divergence_free)
    return SpectralField(grid, out)


def save_snapshot(path: Union[str, Path], f: Field) -> None:
    """Write a field as ``.npz``: JSON header plus lattice-ordered coefficients.

    Coefficients are stored with the lattice index ascending from ``-n/2`` on
    every axis (row-major), components first for vector fields.
    """
    grid = f.grid
    header = {
        "format": SNAPSHOT_FORMAT,
        "d": grid.d,
        "n": grid.n,
        "L": grid.L,
        "components": grid.d if isinstance(f, VectorField) else 1,
        "complex": True,
        "divergence_free": bool(getattr(f, "divergence_free", False)),
    }
    coeffs = f.coeffs if isinstance(f, VectorField) else f.coeffs[None]
    ordered = np.fft.fftshift(coeffs, axes=tuple(range(1, grid.d + 1)))
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), coeffs=ordered)


def load_snapshot(path: Union[str, Path]) -> Field:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        ordered = data["coeffs"]
    if header.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"unknown snapshot format {header.get('format')!r}")
    grid = Grid(header["d"], header["n"], header["L"])
    coeffs = np.fft.ifftshift(ordered, axes=tuple(range(1, grid.d + 1)))
    if header["components"] == 1:
        return SpectralField(grid, coeffs[0])
    return VectorField(grid, coeffs, header["divergence_free"])
