"""Mollified Gaussian noise on a periodic lattice.

An increment over ``dt`` is ``g^eps * W`` with ``W`` lattice white noise of
variance ``dt / cell^d``. Its covariance is ``dt h(x - y)`` with ``h`` the
periodic lattice self-convolution of ``g^eps``; the spectrum ``|g_hat|^2`` is
nonnegative by construction, so no factorization of ``h`` is ever needed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .lattice import LatticeField, LatticeSpec, ResolutionError, irfft, rfft
from .special import mollified_g, riesz_constant

__all__ = [
    "RadialKernel",
    "NoiseKernels",
    "NoiseIncrement",
    "build_kernels",
    "sample_noise_increment",
    "empirical_covariance",
    "CovarianceRow",
    "write_snapshot",
    "read_snapshot",
]


@dataclass(frozen=True)
class RadialKernel:
    radii: np.ndarray
    values: np.ndarray
    epsilon: float


@dataclass(frozen=True)
class NoiseKernels:
    """Lattice tables of ``g^eps`` and ``h^eps``.

    ``h0`` is ``h^eps(0)``, the constant in the Ito correction of the
    geometric update.
    """

    lattice: LatticeSpec
    epsilon: float
    g_grid: np.ndarray
    g_hat: np.ndarray
    h_grid: np.ndarray
    h0: float
    g: RadialKernel
    h: RadialKernel

    def __iter__(self):
        yield self.g
        yield self.h

    def h_at(self, lag) -> float:
        """Periodic ``h^eps`` at an integer lattice vector."""
        idx = tuple(int(k) % self.lattice.n_per_side for k in lag)
        return float(self.h_grid[idx])


def build_kernels(params, epsilon: float, lattice: LatticeSpec, n_radii: int = 200) -> NoiseKernels:
    """Tabulate ``g^eps`` and its periodic lattice self-convolution ``h^eps``.

    ``g`` is exact on a log grid; ``h`` is reported along the first lattice
    axis out to ``L/2``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    d = params.d
    if lattice.d != d:
        raise ValueError(f"lattice dimension {lattice.d} != model dimension {d}")
    if lattice.cell >= epsilon / 2.0:
        raise ResolutionError(
            f"cell {lattice.cell:.4g} >= epsilon/2 = {epsilon / 2:.4g}: mollifier under-resolved"
        )
    g_grid = mollified_g(d, epsilon, lattice.radius())
    g_hat = rfft(g_grid)
    spec = g_hat.real**2 + g_hat.imag**2  # |g_hat|^2 >= 0 structurally
    h_grid = irfft(spec, lattice.shape) * lattice.cell_volume
    h0 = float(h_grid[(0,) * d])

    r_lo = 1e-3 * (riesz_constant(d) * epsilon) ** (2.0 / (d + 2))
    radii = np.geomspace(r_lo, lattice.box_length, n_radii)
    g_tab = RadialKernel(radii, mollified_g(d, epsilon, radii), epsilon)
    half = lattice.n_per_side // 2
    axis_idx = (slice(0, half + 1),) + (0,) * (d - 1)
    h_tab = RadialKernel(np.arange(half + 1) * lattice.cell, h_grid[axis_idx].copy(), epsilon)
    return NoiseKernels(lattice, float(epsilon), g_grid, g_hat, h_grid, h0, g_tab, h_tab)


@dataclass(frozen=True)
class NoiseIncrement:
    field: LatticeField
    dt: float
    epsilon: float
    h0: float


def sample_noise_increment(kernels: NoiseKernels, dt: float, rng: np.random.Generator) -> NoiseIncrement:
    """One increment ``g^eps * W``; ``W`` has variance ``dt / cell^d`` per cell."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    lat = kernels.lattice
    w = rng.standard_normal(lat.shape)
    w *= math.sqrt(dt / lat.cell_volume)
    values = irfft(kernels.g_hat * rfft(w), lat.shape) * lat.cell_volume
    return NoiseIncrement(LatticeField(lat, values), dt, kernels.epsilon, kernels.h0)


@dataclass(frozen=True)
class CovarianceRow:
    lag: tuple
    estimate: float
    std_error: float


def empirical_covariance(increments, lags) -> list[CovarianceRow]:
    """Spatially averaged ``E[dF(x) dF(x + lag)]`` per lag, jackknife errors over increments.

    The mean is known to be zero, so the per-increment spatial averages are
    unbiased. ``increments`` may be any iterable and is consumed once.
    """
    lags = [tuple(int(k) for k in lag) for lag in lags]
    if not lags:
        raise ValueError("no lags requested")
    per_inc = []
    for inc in increments:
        v = inc.field.values
        if len(lags[0]) != v.ndim:
            raise ValueError("lag dimension does not match the lattice")
        axes = tuple(range(v.ndim))
        per_inc.append([float(np.mean(v * np.roll(v, [-k for k in lag], axis=axes))) for lag in lags])
    if not per_inc:
        raise ValueError("empty increment sequence")
    n = len(per_inc)
    if n < 100:
        raise ValueError(f"empirical covariance needs >= 100 increments, got {n}")
    s = np.array(per_inc)  # (n, n_lags)
    total = s.sum(axis=0)
    mean = total / n
    loo = (total - s) / (n - 1)
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return [CovarianceRow(lag, float(m), float(e)) for lag, m, e in zip(lags, mean, se)]


# Snapshot layout, little endian: int64 d, int64 n_per_side, float64 box_length,
# float64 dt, float64 epsilon, then n_per_side**d float64 values in row-major order.
_HEADER = struct.Struct("<qqddd")


def write_snapshot(path, field: LatticeField, dt: float, epsilon: float) -> None:
    lat = field.lattice
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(lat.d, lat.n_per_side, lat.box_length, dt, epsilon))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_snapshot(path) -> tuple[LatticeField, float, float]:
    """Inverse of :func:`write_snapshot`; returns ``(field, dt, epsilon)``."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError("truncated snapshot header")
        d, n, L, dt, eps = _HEADER.unpack(head)
        lat = LatticeSpec(int(d), int(n), L)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n**d:
        raise ValueError(f"snapshot holds {data.size} values, expected {n ** d}")
    return LatticeField(lat, data.reshape(lat.shape).copy()), dt, eps
