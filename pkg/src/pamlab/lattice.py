"""Periodic lattices, lattice fields and spectral helpers shared by the simulators."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

try:  # FFTW is ~4x faster than pocketfft at 64^3; optional
    import pyfftw
except ImportError:  # pragma: no cover - depends on the environment
    pyfftw = None

# Plans use FFTW_ESTIMATE: deterministic, so results never depend on timing.
FFT_BACKEND = "fftw" if pyfftw is not None and os.environ.get("PAMLAB_FFT", "") != "scipy" else "scipy"
_PLANS: dict = {}


class ResolutionError(ValueError):
    """Lattice too coarse for the requested length scale."""


@dataclass(frozen=True)
class LatticeSpec:
    """``n_per_side**d`` cells on the torus ``[-L/2, L/2)^d``; index 0 sits at the origin."""

    d: int
    n_per_side: int
    box_length: float

    def __post_init__(self):
        n = self.n_per_side
        if n < 8 or n & (n - 1):
            raise ValueError(f"n_per_side={n} must be a power of two >= 8")
        if self.box_length <= 0:
            raise ValueError("box_length must be positive")

    @property
    def cell(self) -> float:
        return self.box_length / self.n_per_side

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_per_side,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.cell**self.d

    @property
    def rshape(self) -> tuple[int, ...]:
        return self.shape[:-1] + (self.n_per_side // 2 + 1,)

    def axis(self) -> np.ndarray:
        n = self.n_per_side
        j = np.arange(n)
        return ((j + n // 2) % n - n // 2) * self.cell

    def coords(self) -> list[np.ndarray]:
        """Open-grid minimum-image coordinates, one broadcastable array per axis."""
        ax = self.axis()
        out = []
        for i in range(self.d):
            shp = [1] * self.d
            shp[i] = self.n_per_side
            out.append(ax.reshape(shp))
        return out

    def points(self) -> np.ndarray:
        """All cell positions, shape ``shape + (d,)``."""
        return np.stack(np.broadcast_arrays(*self.coords()), axis=-1)

    def displacement(self, center) -> list[np.ndarray]:
        """Minimum-image displacement of every cell from ``center``."""
        center = np.asarray(center, dtype=float).reshape(self.d)
        L = self.box_length
        return [(c - x0 + L / 2) % L - L / 2 for c, x0 in zip(self.coords(), center)]

    def radius(self, center=None) -> np.ndarray:
        comps = self.coords() if center is None else self.displacement(center)
        r2 = sum(np.broadcast_to(c, self.shape) ** 2 for c in comps)
        return np.sqrt(r2)

    def wavenumbers(self) -> list[np.ndarray]:
        """Angular wavenumbers on the rfft grid, broadcastable."""
        n = self.n_per_side
        out = []
        for i in range(self.d):
            if i == self.d - 1:
                k = 2 * math.pi * np.fft.rfftfreq(n, d=self.cell)
            else:
                k = 2 * math.pi * np.fft.fftfreq(n, d=self.cell)
            shp = [1] * self.d
            shp[i] = k.size
            out.append(k.reshape(shp))
        return out

    def laplacian_symbol(self) -> np.ndarray:
        """Fourier symbol of the nearest-neighbour Laplacian, ``-sum (4/h^2) sin^2(k h/2)``."""
        h = self.cell
        return -sum((4.0 / h**2) * np.sin(k * h / 2.0) ** 2 for k in self.wavenumbers())

    def heat_multiplier(self, s: float) -> np.ndarray:
        """Symbol of ``exp((s/2) Delta_h)``: the lattice heat semigroup at time ``s``."""
        return np.exp(0.5 * s * self.laplacian_symbol())

    def scaled(self, factor: float) -> "LatticeSpec":
        return LatticeSpec(self.d, self.n_per_side, self.box_length * factor)


def _plan(kind: str, shape: tuple):
    key = (kind, shape)
    plan = _PLANS.get(key)
    if plan is None:
        if kind == "r2c":
            buf = pyfftw.empty_aligned(shape, dtype="float64")
            plan = pyfftw.builders.rfftn(buf, threads=1, planner_effort="FFTW_ESTIMATE")
        else:
            cshape = shape[:-1] + (shape[-1] // 2 + 1,)
            buf = pyfftw.empty_aligned(cshape, dtype="complex128")
            plan = pyfftw.builders.irfftn(buf, s=shape, threads=1, planner_effort="FFTW_ESTIMATE")
        _PLANS[key] = plan
    return plan


def _run(plan, a):
    # copy into the plan's own buffer: c2r transforms destroy their input
    plan.input_array[...] = a
    return plan().copy()


def rfft(a):
    if FFT_BACKEND == "fftw":
        return _run(_plan("r2c", a.shape), a)
    return sfft.rfftn(a, workers=1)


def irfft(a, shape):
    if FFT_BACKEND == "fftw":
        return _run(_plan("c2r", tuple(shape)), a)
    return sfft.irfftn(a, s=shape, workers=1)


@dataclass
class LatticeField:
    """Nonnegative density on a lattice; ``u(A) = sum_A values * cell^d``."""

    lattice: LatticeSpec
    values: np.ndarray

    def total_mass(self) -> float:
        return float(self.values.sum() * self.lattice.cell_volume)

    def integrate(self, f_values: np.ndarray) -> float:
        return float(np.vdot(f_values, self.values) * self.lattice.cell_volume)

    def copy(self) -> "LatticeField":
        return LatticeField(self.lattice, self.values.copy())


def heat_flow(values: np.ndarray, lattice: LatticeSpec, s: float) -> np.ndarray:
    """Lattice heat semigroup ``exp((s/2) Delta_h)`` applied spectrally."""
    return irfft(rfft(values) * lattice.heat_multiplier(s), lattice.shape)


def periodic_convolve(a: np.ndarray, b: np.ndarray, lattice: LatticeSpec) -> np.ndarray:
    """Circular convolution ``sum_y a(x - y) b(y) cell^d``."""
    return irfft(rfft(a) * rfft(b), lattice.shape) * lattice.cell_volume


class SpectralWorkspace:
    """Preallocated transform buffers for time stepping.

    One real-to-complex transform ``real -> spec`` and ``channels``
    complex-to-real transforms ``cin[i] -> cout[i]``. Inverse transforms are
    unnormalized (callers fold ``1/N`` into their multipliers). Fresh
    allocations cost as much as a transform at 64^3, so the stepper works
    in place on these buffers.
    """

    def __init__(self, lattice: LatticeSpec, channels: int = 2):
        self.lattice = lattice
        self.n_total = lattice.n_per_side**lattice.d
        shape, rshape = lattice.shape, lattice.rshape
        if FFT_BACKEND == "fftw":
            self.real = pyfftw.empty_aligned(shape, dtype="float64")
            self.spec = pyfftw.empty_aligned(rshape, dtype="complex128")
            self._fwd = pyfftw.FFTW(self.real, self.spec, axes=tuple(range(lattice.d)),
                                    direction="FFTW_FORWARD", flags=("FFTW_ESTIMATE",), threads=1)
            self.cin, self.cout, self._inv = [], [], []
            for _ in range(channels):
                ci = pyfftw.empty_aligned(rshape, dtype="complex128")
                co = pyfftw.empty_aligned(shape, dtype="float64")
                self._inv.append(pyfftw.FFTW(ci, co, axes=tuple(range(lattice.d)),
                                             direction="FFTW_BACKWARD",
                                             flags=("FFTW_ESTIMATE", "FFTW_DESTROY_INPUT"), threads=1))
                self.cin.append(ci)
                self.cout.append(co)
        else:
            self.real = np.empty(shape)
            self.spec = np.empty(rshape, dtype=complex)
            self.cin = [np.empty(rshape, dtype=complex) for _ in range(channels)]
            self.cout = [np.empty(shape) for _ in range(channels)]
            self._inv = None

    def forward(self) -> None:
        """``spec <- rfft(real)``."""
        if self._inv is not None:
            self._fwd.execute()
        else:
            self.spec[...] = sfft.rfftn(self.real, workers=1)

    def inverse(self, channel: int) -> None:
        """``cout[channel] <- N * irfft(cin[channel])``; ``cin[channel]`` is destroyed."""
        if self._inv is not None:
            self._inv[channel].execute()
        else:
            self.cout[channel][...] = sfft.irfftn(self.cin[channel], s=self.lattice.shape, workers=1)
            self.cout[channel] *= self.n_total
