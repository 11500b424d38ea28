"""Radial test functions ``f(x) = phi(|x - c|)`` used as observables and in the moment oracles."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from .lattice import LatticeSpec
from .special import bessel_transition_density

__all__ = ["RadialFunction", "GaussianBump", "SmoothBall", "BallIndicator", "smooth_step"]


def smooth_step(x):
    """C-infinity step: 0 for ``x <= 0``, 1 for ``x >= 1``."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


class RadialFunction:
    """Base class; subclasses define ``profile(r)`` and ``support`` (``inf`` if unbounded)."""

    support = math.inf

    def __init__(self, center):
        self.center = np.asarray(center, dtype=float).reshape(-1)

    @property
    def d(self) -> int:
        return self.center.size

    def profile(self, r):
        raise NotImplementedError

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.profile(np.sqrt(np.sum((x - self.center) ** 2, axis=-1)))

    def on_lattice(self, lattice: LatticeSpec) -> np.ndarray:
        """Values on the lattice using minimum-image distances to the center."""
        return self.profile(lattice.radius(self.center))

    def _breaks(self):
        return []

    def integral(self) -> float:
        d = self.d
        omega = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
        hi = self.support if math.isfinite(self.support) else math.inf
        pts = [b for b in self._breaks() if 0 < b < hi]
        edges = [0.0] + pts + [hi]
        total = 0.0
        for lo, up in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(lambda r: float(self.profile(r)) * r ** (d - 1), lo, up,
                                    epsabs=0.0, epsrel=1e-12, limit=200)
            total += val
        return omega * total

    def heat_smoothed(self, t: float, x) -> float:
        """``(G_t f)(x) = E[f(x + B_t)]`` as a 1-d integral against the Bessel density.

        ``|x - c + B_t|`` has the transition density of a ``d``-dimensional
        Bessel process started at ``|x - c|``.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        a = float(np.sqrt(np.sum((x - self.center) ** 2)))
        if t == 0.0:
            return float(self.profile(a))
        d = self.d
        if a == 0.0:
            lognorm = -(d / 2.0) * math.log(2.0 * t) - math.lgamma(d / 2.0) + math.log(2.0)

            def dens(r):
                return math.exp(lognorm + (d - 1) * math.log(r) - r * r / (2.0 * t)) if r > 0 else 0.0
        else:

            def dens(r):
                return bessel_transition_density(d, t, a, r) if r > 0 else 0.0

        sd = math.sqrt(t)
        lo = max(0.0, a - 12.0 * sd)
        hi = a + 12.0 * sd
        if math.isfinite(self.support):
            hi = min(hi, self.support)
        if hi <= lo:
            return 0.0
        pts = sorted({p for p in self._breaks() + [a] if lo < p < hi})
        edges = [lo] + pts + [hi]
        total = 0.0
        for e0, e1 in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(lambda r: float(self.profile(r)) * dens(r), e0, e1,
                                    epsabs=1e-15, epsrel=1e-11, limit=200)
            total += val
        return total


class GaussianBump(RadialFunction):
    """``height * exp(-|x - c|^2 / (2 width^2))``."""

    def __init__(self, center, width: float, height: float = 1.0):
        super().__init__(center)
        if width <= 0:
            raise ValueError("width must be positive")
        self.width = float(width)
        self.height = float(height)

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        out = self.height * np.exp(-0.5 * (r / self.width) ** 2)
        return float(out) if out.ndim == 0 else out

    def __repr__(self):
        return f"GaussianBump(center={self.center.tolist()}, width={self.width}, height={self.height})"


class SmoothBall(RadialFunction):
    """Smooth indicator of ``B(c, radius)``: 1 inside ``radius - softness``, 0 outside ``radius``."""

    def __init__(self, center, radius: float, softness: float):
        super().__init__(center)
        if not 0 < softness <= radius:
            raise ValueError("need 0 < softness <= radius")
        self.radius = float(radius)
        self.softness = float(softness)
        self.support = self.radius

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        out = smooth_step((self.radius - r) / self.softness)
        return float(out) if out.ndim == 0 else out

    def _breaks(self):
        return [self.radius - self.softness]

    def __repr__(self):
        return f"SmoothBall(center={self.center.tolist()}, radius={self.radius}, softness={self.softness})"


class BallIndicator(RadialFunction):
    """Sharp indicator of the closed ball; ball masses ``u(B)`` on the lattice."""

    def __init__(self, center, radius: float):
        super().__init__(center)
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.support = self.radius

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        out = (r <= self.radius).astype(float)
        return float(out) if out.ndim == 0 else out

    def __repr__(self):
        return f"BallIndicator(center={self.center.tolist()}, radius={self.radius})"
