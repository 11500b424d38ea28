r"""Closed-form quantities of the model.

Everything here is a deterministic, pure function of its arguments:
the intermittency exponent :math:`\alpha(\eta)`, the Gaussian heat kernel,
the modified Bessel function :math:`I_\nu`, Bessel transition densities,
the exact Bessel-bridge exponential moment and its envelope, and the Riesz
constant :math:`c_7` with :math:`(c_7|\cdot|^{-(d+2)/2})^{*2} = |\cdot|^{-2}`.

Bessel functions are evaluated in log space so that ratios of densities at
large ``ab/t`` never hit ``inf/inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

__all__ = [
    "ModelParams",
    "EtaParam",
    "alpha_of_eta",
    "heat_kernel",
    "log_bessel_i",
    "bessel_i",
    "log_bessel_transition_density",
    "bessel_transition_density",
    "bridge_exp_moment_exact",
    "bridge_exp_moment_bound",
    "calibrate_bound_constant",
    "riesz_constant",
    "riesz_self_convolution",
    "cap_radius",
    "mollified_g",
    "mollified_h",
    "SERIES_SWITCH_OFFSET",
]

# I_nu(z) uses the power series for z <= nu + SERIES_SWITCH_OFFSET and the
# large-argument expansion beyond.
SERIES_SWITCH_OFFSET = 20.0

_EPS = np.finfo(float).eps


class DomainError(ValueError):
    """Argument outside the region where a formula applies."""


def _eta_max(d: float) -> float:
    return (d - 2.0) ** 2 / 8.0


def alpha_of_eta(d: float, eta: float) -> float:
    """Exponent ``(d-2)/2 - sqrt(((d-2)/2)**2 - 2*eta)``.

    Valid for ``0 <= eta <= (d-2)**2/8``; beyond that the exponential moment
    of the inverse squared radius is infinite.
    """
    if d < 3:
        raise DomainError(f"dimension d={d} must be >= 3")
    if not 0.0 <= eta <= _eta_max(d) * (1.0 + 1e-14):
        raise DomainError(
            f"eta={eta} outside [0, (d-2)^2/8={_eta_max(d)}]: "
            "no finite exponential moment regime"
        )
    lam = (d - 2.0) / 2.0
    return lam - math.sqrt(max(lam * lam - 2.0 * eta, 0.0))


@dataclass(frozen=True)
class EtaParam:
    d: int
    eta: float
    alpha_eta: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "alpha_eta", alpha_of_eta(self.d, self.eta))

    @property
    def alpha(self) -> float:
        return self.alpha_eta


@dataclass(frozen=True)
class ModelParams:
    """Dimension ``d >= 3`` and coupling ``0 < kappa < (d-2)/2``.

    ``alpha`` is derived, never supplied.
    """

    d: int
    kappa: float
    alpha: float = field(init=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 3:
            raise DomainError(f"d={self.d}: the model needs an integer dimension d >= 3")
        if not 0.0 < self.kappa < (self.d - 2) / 2.0:
            raise DomainError(
                f"kappa={self.kappa} violates 0 < kappa < (d-2)/2 = {(self.d - 2) / 2} "
                "(finite second moments)"
            )
        lam = (self.d - 2) / 2.0
        object.__setattr__(self, "alpha", lam - math.sqrt(lam * lam - self.kappa**2))

    @classmethod
    def unchecked(cls, d: int, kappa: float) -> "ModelParams":
        """Build without the ``kappa > 0`` check; used for kappa=0 null runs."""
        if kappa == 0.0:
            obj = object.__new__(cls)
            object.__setattr__(obj, "d", int(d))
            object.__setattr__(obj, "kappa", 0.0)
            object.__setattr__(obj, "alpha", 0.0)
            return obj
        return cls(d, kappa)

    @property
    def eta(self) -> float:
        """Pair-functional coefficient on the normalized difference bridge."""
        return self.kappa**2 / 2.0

    def eta_param(self) -> EtaParam:
        return EtaParam(self.d, self.eta)


def heat_kernel(d: int, t: float, x) -> np.ndarray | float:
    """Gaussian kernel ``(2 pi t)^(-d/2) exp(-|x|^2/2t)``; ``x`` has shape (..., d)."""
    if t <= 0:
        raise DomainError("heat kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    out = (2.0 * math.pi * t) ** (-d / 2.0) * np.exp(-r2 / (2.0 * t))
    return float(out) if out.ndim == 0 else out


def _log_i_series(nu: float, z: float) -> float:
    q = 0.25 * z * z
    term = 1.0
    total = 1.0
    k = 0
    while True:
        k += 1
        term *= q / (k * (k + nu))
        total += term
        if term < _EPS * 1e-2 * total and k > 0.5 * z:
            break
    return nu * math.log(0.5 * z) - math.lgamma(nu + 1.0) + math.log(total)


def _log_i_asymptotic(nu: float, z: float) -> float:
    mu4 = 4.0 * nu * nu
    term = 1.0
    total = 1.0
    prev = math.inf
    k = 0
    while True:
        k += 1
        term *= -(mu4 - (2 * k - 1) ** 2) / (8.0 * k * z)
        if term == 0.0:
            break
        if abs(term) >= prev:  # expansion started diverging
            break
        total += term
        prev = abs(term)
        if prev < _EPS * 1e-2 * abs(total):
            break
    return z - 0.5 * math.log(2.0 * math.pi * z) + math.log(total)


def log_bessel_i(nu: float, z: float) -> float:
    """``log I_nu(z)`` for ``nu >= 0``, ``z >= 0``.

    Power series (all terms positive) for ``z <= nu + 20``; Hankel's
    large-argument expansion, truncated at its smallest term, beyond. At the
    switchover the neglected remainder is below ``exp(-2z) <= 4e-18``.
    """
    if nu < 0 or z < 0:
        raise DomainError("log_bessel_i needs nu >= 0 and z >= 0")
    if z == 0.0:
        return 0.0 if nu == 0 else -math.inf
    if z <= nu + SERIES_SWITCH_OFFSET:
        return _log_i_series(nu, z)
    return _log_i_asymptotic(nu, z)


def bessel_i(nu: float, z: float) -> float:
    """Modified Bessel function of the first kind, ``I_nu(z)``."""
    return math.exp(log_bessel_i(nu, z))


def log_bessel_transition_density(d: float, t: float, a: float, b: float) -> float:
    if t <= 0 or a <= 0 or b <= 0:
        raise DomainError("Bessel transition density needs t, a, b > 0")
    if d < 2:
        raise DomainError("Bessel dimension must be >= 2")
    nu = d / 2.0 - 1.0
    return (
        -math.log(t)
        - nu * math.log(a)
        + (d / 2.0) * math.log(b)
        - (a * a + b * b) / (2.0 * t)
        + log_bessel_i(nu, a * b / t)
    )


def bessel_transition_density(d: float, t: float, a: float, b: float) -> float:
    """Transition density ``q_t^{(d)}(a, b)`` of the ``d``-dimensional Bessel process.

    ``d`` may be any real ``>= 2``; non-integer dimensions appear in the
    dimension-shift identity.
    """
    return math.exp(log_bessel_transition_density(d, t, a, b))


def bridge_exp_moment_exact(d: float, eta: float, a: float, b: float, t: float) -> float:
    """Bessel-bridge moment ``E_{a,b,t}^{(d)}[exp(eta * int_0^t ds / R_s^2)]``.

    Evaluates ``a^-alpha b^alpha q^{(2 mu + 2)}_t(a,b) / q^{(d)}_t(a,b)`` with
    ``mu = sqrt(((d-2)/2)^2 - 2 eta)`` entirely in log space.
    """
    alpha = alpha_of_eta(d, eta)
    if a <= 0 or b <= 0 or t <= 0:
        raise DomainError("bridge moment needs a, b, t > 0")
    if eta == 0.0:
        return 1.0
    mu = (d - 2.0) / 2.0 - alpha
    log_val = (
        alpha * (math.log(b) - math.log(a))
        + log_bessel_transition_density(2.0 * mu + 2.0, t, a, b)
        - log_bessel_transition_density(d, t, a, b)
    )
    return math.exp(log_val)


def _exponent(params) -> float:
    if isinstance(params, ModelParams):
        return params.alpha
    if isinstance(params, EtaParam):
        return params.alpha_eta
    raise TypeError("params must be ModelParams or EtaParam")


def bridge_exp_moment_bound(params, x, y, t: float, c_eta: float) -> float:
    """Envelope ``C(eta) * (1 + t/(|x||y|))^alpha(eta)`` for the bridge moment.

    ``ModelParams`` is read at ``eta = kappa^2/2``. Returns ``inf`` when either
    endpoint sits at the origin.
    """
    if c_eta <= 0:
        raise DomainError("C(eta) must be positive")
    alpha = _exponent(params)
    rx = float(np.linalg.norm(np.atleast_1d(x)))
    ry = float(np.linalg.norm(np.atleast_1d(y)))
    if alpha == 0.0:
        return float(c_eta)
    if rx == 0.0 or ry == 0.0:
        return math.inf
    return c_eta * (1.0 + t / (rx * ry)) ** alpha


def calibrate_bound_constant(d: float, eta: float, log10_range=(-3.0, 3.0), points=25) -> float:
    """Smallest ``C(eta)`` making the envelope dominate the exact moment on a log grid of (a, b, t)."""
    alpha = alpha_of_eta(d, eta)
    grid = np.logspace(log10_range[0], log10_range[1], points)
    best = 0.0
    for a in grid:
        for b in grid:
            for t in grid[:: max(points // 7, 1)]:
                ratio = bridge_exp_moment_exact(d, eta, a, b, t) / (1.0 + t / (a * b)) ** alpha
                best = max(best, ratio)
    return best


def riesz_constant(d: int) -> float:
    """``c_7`` with ``(c_7 |x|^{-(d+2)/2}) * (c_7 |x|^{-(d+2)/2}) = |x|^{-2}``.

    From the Riesz composition formula for ``|x|^{-a} * |x|^{-b}`` with
    ``a = b = (d+2)/2``.
    """
    if d < 3:
        raise DomainError("riesz_constant needs d >= 3")
    lg = math.lgamma
    log_c2 = (
        2.0 * lg((d + 2) / 4.0)
        + lg((d - 2) / 2.0)
        - (d / 2.0) * math.log(math.pi)
        - 2.0 * lg((d - 2) / 4.0)
    )
    return math.exp(0.5 * log_c2)


def _bipolar_self_convolution(d: int, g, rho: float, kinks=()) -> float:
    """``(g * g)(z)`` at ``|z| = rho`` for a radial ``g``, by planar quadrature.

    Bipolar coordinates ``(r, s) = (|x|, |z - x|)`` turn the d-dimensional
    integral into a planar one with weight ``omega_{d-2} w^{d-3} r s / rho``,
    ``w`` the distance of ``x`` from the axis. The integrand is symmetric in
    ``r <-> s`` so only ``r <= s`` is integrated; ``r = u^2`` removes the
    ``r -> 0`` singularity of Riesz-type kernels.
    """
    omega = 2.0 * math.pi ** ((d - 1) / 2.0) / math.gamma((d - 1) / 2.0)

    def inner(s, r):
        x1 = (r * r - s * s + rho * rho) / (2.0 * rho)
        w2 = max(r * r - x1 * x1, 0.0)
        wfac = 1.0 if d == 3 else w2 ** ((d - 3) / 2.0)
        return omega * wfac * r * s / rho * g(r) * g(s)

    def outer(u):
        r = u * u
        lo, hi = (rho - r, rho + r) if r < rho / 2.0 else (r, r + rho)
        pts = [k for k in kinks if lo < k < hi]
        val, _ = integrate.quad(
            inner, lo, hi, args=(r,), epsabs=0.0, epsrel=1e-11, limit=200, points=pts or None
        )
        return 2.0 * u * val

    breaks = {0.0, math.sqrt(rho / 2.0), math.sqrt(rho), 4.0 * math.sqrt(rho)}
    breaks.update(math.sqrt(k) for k in kinks if k > 0)
    for k in kinks:
        if k > 0:
            breaks.update(math.sqrt(v) for v in (abs(rho - k), rho + k) if v > 0)
    edges = sorted(b for b in breaks if b <= 4.0 * math.sqrt(rho) or b in {math.sqrt(k) for k in kinks})
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(outer, lo, hi, epsabs=0.0, epsrel=1e-10, limit=200)
        total += val
    val, _ = integrate.quad(outer, edges[-1], math.inf, epsabs=0.0, epsrel=1e-10, limit=200)
    return 2.0 * (total + val)


def riesz_self_convolution(d: int, rho: float, c: float | None = None) -> float:
    """Numerical ``(g * g)(z)`` at ``|z| = rho`` for ``g = c |x|^{-(d+2)/2}``.

    Independent quadrature route to :func:`riesz_constant`.
    """
    if c is None:
        c = riesz_constant(d)
    p = (d + 2) / 2.0
    return _bipolar_self_convolution(d, lambda r: c * r ** (-p), rho)


def cap_radius(d: int, epsilon: float) -> float:
    """Radius where ``c_7 |x|^{-(d+2)/2}`` reaches the cap ``1/epsilon``."""
    return (riesz_constant(d) * epsilon) ** (2.0 / (d + 2))


def mollified_g(d: int, epsilon: float, r):
    """``min(c_7 r^{-(d+2)/2}, 1/epsilon)``; equals the cap at ``r = 0``."""
    c = riesz_constant(d)
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.minimum(c * r ** (-(d + 2) / 2.0), 1.0 / epsilon)
    return float(out) if out.ndim == 0 else out


def _mollified_h_d3(epsilon: float, rho: float, rc: float) -> float:
    # d = 3: the inner bipolar integral int s g(s) ds has the closed
    # antiderivative Q below, leaving one radial quadrature.
    c = riesz_constant(3)
    q_rc = rc * rc / (2.0 * epsilon)

    def Q(s):
        if s <= rc:
            return s * s / (2.0 * epsilon)
        return q_rc + 2.0 * c * (rc ** -0.5 - s ** -0.5)

    def integrand(r):
        g = 1.0 / epsilon if r <= rc else c * r ** -2.5
        return r * g * (Q(rho + r) - Q(abs(rho - r)))

    pts = sorted({p for p in (rc, rho, rho + rc, abs(rho - rc)) if p > 0})
    edges = [0.0] + pts
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=1e-12, limit=200)[0]
    total += integrate.quad(integrand, edges[-1], math.inf, epsabs=0.0, epsrel=1e-12, limit=200)[0]
    return 2.0 * math.pi / rho * total


def mollified_h(d: int, epsilon: float, rho: float, method: str = "auto") -> float:
    """Continuum ``h^eps = g^eps * g^eps`` at radius ``rho`` (free space, no lattice).

    ``method``: 'bipolar' (planar quadrature, any ``d``), 'radial' (one
    quadrature with a closed inner antiderivative, ``d = 3`` only) or 'auto'.
    """
    rc = cap_radius(d, epsilon)
    if rho == 0.0:
        omega = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
        inner = rc**d / d / epsilon**2
        c = riesz_constant(d)
        tail = c * c * rc ** (-2.0) / 2.0  # int_rc^inf c^2 r^{-(d+2)} r^{d-1} dr
        return omega * (inner + tail)
    if method == "radial" or (method == "auto" and d == 3):
        if d != 3:
            raise DomainError("the radial route is implemented for d = 3")
        return _mollified_h_d3(epsilon, rho, rc)
    g = lambda r: float(mollified_g(d, epsilon, r))  # noqa: E731
    return _bipolar_self_convolution(d, g, rho, kinks=(rc,))
