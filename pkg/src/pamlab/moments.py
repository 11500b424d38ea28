"""Reference values for the first and second moments.

Deterministic oracles (first moment, the second-moment envelope, the
weighted ``alpha``-norm, the Gaussian smoothing inequality) plus the Monte
Carlo bridge representation of the second moment. In the bridge
representation the pair ``(X^1, X^2)`` is replaced by the normalized
difference ``D = (X^1 - X^2) / sqrt(2)``, a single bridge on which
``kappa^2 / |X^1 - X^2|^2 = (kappa^2 / 2) / |D|^2``: the coefficient is
``eta = kappa^2 / 2`` and ``alpha(eta)`` is the model's ``alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache, partial

import numpy as np
from scipy import integrate, special as sps

from . import stats
from .paths import DEFAULT_BLOCK, DEFAULT_CLIP, kernels
from .special import (
    DomainError,
    alpha_of_eta,
    bessel_transition_density,
    mollified_h,
)
from .stats import MCEstimate
from .streams import as_stream, parallel_map

__all__ = [
    "DiscreteMeasure",
    "h_alpha_norm",
    "first_moment_exact",
    "second_moment_bridge_rhs",
    "second_moment_bound_rhs",
    "gaussian_convolution_bound_check",
    "fit_envelope_constant",
    "mollified_pair_table",
]


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely many atoms, optionally plus Lebesgue measure of some intensity on a box."""

    atoms: tuple = ()
    intensity: float = 0.0
    box: tuple | None = None  # (low corner, high corner)

    def __post_init__(self):
        for _, w in self.atoms:
            if w <= 0:
                raise ValueError("atom weights must be strictly positive")
        if self.intensity < 0:
            raise ValueError("intensity must be nonnegative")
        if self.intensity > 0 and self.box is not None:
            lo, hi = (np.asarray(c, dtype=float) for c in self.box)
            if np.any(hi <= lo):
                raise ValueError("box high corner must exceed the low corner")

    @classmethod
    def from_atoms(cls, atoms) -> "DiscreteMeasure":
        return cls(tuple((tuple(float(c) for c in p), float(w)) for p, w in atoms))

    @classmethod
    def lebesgue_box(cls, low, high, intensity: float = 1.0) -> "DiscreteMeasure":
        return cls((), float(intensity), (tuple(map(float, low)), tuple(map(float, high))))

    @classmethod
    def lebesgue(cls, intensity: float = 1.0) -> "DiscreteMeasure":
        """Lebesgue measure on all of R^d."""
        return cls((), float(intensity), None)

    @property
    def points(self) -> np.ndarray:
        return np.array([p for p, _ in self.atoms], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms], dtype=float)

    @property
    def box_volume(self) -> float:
        lo, hi = (np.asarray(c, dtype=float) for c in self.box)
        return float(np.prod(hi - lo))

    @property
    def total_mass(self) -> float:
        m = math.fsum(w for _, w in self.atoms)
        if self.intensity > 0:
            if self.box is None:
                return math.inf
            m += self.intensity * self.box_volume
        return m


def _gl(n: int, lo: float, hi: float):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def _graded_half_axis(ell: float, levels: int = 4, nodes: int = 8):
    """Gauss-Legendre on ``[0, ell]`` with geometric grading toward 0."""
    edges = [0.0] + [ell * 2.0 ** (-k) for k in range(levels - 1, -1, -1)]
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = _gl(nodes, a, b)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def _box_pair_integral(lo, hi, alpha: float, a: float) -> float:
    """``int_box int_box (1 + |x - y|^-alpha) e^{-a|x|} e^{-a|y|} dx dy``.

    Written as ``int dz (1 + |z|^-alpha) A(z)`` with
    ``A(z) = int 1_box(y) 1_box(y + z) e^{-a|y|-a|y+z|} dy``; ``z`` uses
    Gauss-Legendre graded toward the singularity at 0. For ``a = 0``,
    ``A(z) = prod (ell_i - |z_i|)`` exactly; otherwise ``A`` is itself a
    Gauss-Legendre integral over the overlap box.
    """
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    d = lo.size
    ell = hi - lo
    axes = []
    for i in range(d):
        x, w = _graded_half_axis(ell[i])
        axes.append((np.concatenate([-x[::-1], x]), np.concatenate([w[::-1], w])))
    grids = np.meshgrid(*[ax[0] for ax in axes], indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=-1)
    wz = np.prod(np.stack(np.meshgrid(*[ax[1] for ax in axes], indexing="ij")), axis=0).ravel()
    if a == 0.0:
        A = np.prod(np.maximum(ell - np.abs(z), 0.0), axis=1)
    else:
        gx, gw = np.polynomial.legendre.leggauss(8)
        ref = np.stack([m.ravel() for m in np.meshgrid(*([gx] * d), indexing="ij")], axis=-1)
        wref = np.prod(np.stack(np.meshgrid(*([gw] * d), indexing="ij")), axis=0).ravel()
        A = np.empty(z.shape[0])
        for c0 in range(0, z.shape[0], 512):
            zc = z[c0:c0 + 512]
            ylo = np.maximum(lo, lo - zc)
            yhi = np.minimum(hi, hi - zc)
            half = np.maximum(0.5 * (yhi - ylo), 0.0)  # empty overlap -> zero weight
            y = 0.5 * (yhi + ylo)[:, None, :] + half[:, None, :] * ref[None]
            val = np.exp(-a * np.linalg.norm(y, axis=2) - a * np.linalg.norm(y + zc[:, None, :], axis=2))
            A[c0:c0 + 512] = np.prod(half, axis=1) * (val @ wref)
    r = np.linalg.norm(z, axis=1)
    return float(np.dot(wz, (1.0 + r ** (-alpha)) * A))


def h_alpha_norm(mu: DiscreteMeasure, alpha: float, a: float = 0.0, d: int | None = None,
                 include_self: bool = True) -> float:
    """``|| mu(dx) e^{-a|x|} ||_alpha``, the square root of ``int int (1 + |x-y|^-alpha) dnu dnu``.

    An atom paired with itself contributes ``|0|^-alpha = inf``, so any
    measure with atoms has infinite norm; ``include_self=False`` drops those
    diagonal terms and returns the distinct-pair value. Atoms and the box
    part are not mixed.
    """
    if a < 0:
        raise ValueError("tilt a must be nonnegative")
    if mu.atoms and mu.intensity > 0:
        raise NotImplementedError("mixed atom and Lebesgue measures")
    if mu.atoms:
        pts = mu.points
        d = pts.shape[1]
        if not 0 < alpha < d:
            raise DomainError(f"alpha={alpha} outside (0, d={d})")
        w = mu.weights * np.exp(-a * np.linalg.norm(pts, axis=1))
        n = len(w)
        total = []
        for i in range(n):
            for j in range(n):
                dist = float(np.linalg.norm(pts[i] - pts[j]))
                if i == j or dist == 0.0:
                    if include_self or i != j:
                        return math.inf
                    continue
                total.append(w[i] * w[j] * (1.0 + dist ** (-alpha)))
        return math.sqrt(math.fsum(total))
    if mu.box is None:
        return math.inf
    d = len(mu.box[0])
    if not 0 < alpha < d:
        raise DomainError(f"alpha={alpha} outside (0, d={d})")
    return mu.intensity * math.sqrt(_box_pair_integral(mu.box[0], mu.box[1], alpha, a))


def _box_hit_probability(x, lo, hi, t: float):
    """``P(x + B_t in box)``, separable over coordinates."""
    s = math.sqrt(t)
    x = np.asarray(x, dtype=float)
    return np.prod(sps.ndtr((hi - x) / s) - sps.ndtr((lo - x) / s), axis=-1)


def first_moment_exact(mu: DiscreteMeasure, f, t: float) -> float:
    """``int int G_t(x - x') f(x') mu(dx) dx'``.

    Atoms use the one-dimensional Bessel-density integral of
    :meth:`RadialFunction.heat_smoothed`; Lebesgue measure on R^d gives
    ``c int f``; on a box, ``int f(x') P(x' + B_t in box) dx'`` by
    Gauss-Legendre over the support of ``f``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    total = [w * f.heat_smoothed(t, p) for p, w in mu.atoms]
    if mu.intensity > 0:
        if mu.box is None:
            total.append(mu.intensity * f.integral())
        else:
            lo, hi = (np.asarray(c, dtype=float) for c in mu.box)
            if t == 0.0:
                raise NotImplementedError("box indicator at t=0")
            reach = f.support if math.isfinite(f.support) else 12.0 * getattr(f, "width", 1.0)
            axes = [_gl(48, c - reach, c + reach) for c in f.center]
            mesh = np.meshgrid(*[a[0] for a in axes], indexing="ij")
            x = np.stack([m.ravel() for m in mesh], axis=-1)
            wt = np.prod(np.stack(np.meshgrid(*[a[1] for a in axes], indexing="ij")), axis=0).ravel()
            total.append(mu.intensity * float(np.dot(wt, f(x) * _box_hit_probability(x, lo, hi, t))))
    return math.fsum(total)


def gaussian_convolution_bound_check(d: int, r: float, t: float, x, y) -> tuple[float, float]:
    """``(lhs, envelope)`` with ``lhs = E|x - y + B_{2t}|^{-r}`` and ``envelope = min(|x-y|^{-r}, t^{-r/2})``.

    ``lhs`` equals ``int int G_t(x-x') G_t(y-y') |x'-y'|^{-r} dx' dy'``; the
    norm of the shifted Gaussian has the Bessel transition density of time
    ``2t``, so it is a 1-d integral.
    """
    if not 0 <= r < d:
        raise DomainError(f"r={r} must lie in [0, d={d}): the integral diverges otherwise")
    if t <= 0:
        raise DomainError("t must be positive")
    dist = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))
    env = min(dist ** (-r) if dist > 0 else math.inf, t ** (-r / 2.0))
    if r == 0:
        return 1.0, env
    s = 2.0 * t
    sd = math.sqrt(s)
    if dist == 0.0:
        lognorm = -(d / 2.0) * math.log(2.0 * s) - math.lgamma(d / 2.0) + math.log(2.0)

        def integrand(rho):
            return math.exp(lognorm + (d - 1 - r) * math.log(rho) - rho * rho / (2.0 * s)) if rho > 0 else 0.0
    else:

        def integrand(rho):
            return rho ** (-r) * bessel_transition_density(d, s, dist, rho) if rho > 0 else 0.0

    lo = max(0.0, dist - 14.0 * sd)
    hi = dist + 14.0 * sd
    pts = sorted({p for p in (dist, sd) if lo < p < hi})
    edges = [lo] + pts + [hi]
    total = 0.0
    for a_, b_ in zip(edges[:-1], edges[1:]):
        val, err = integrate.quad(integrand, a_, b_, epsabs=0.0, epsrel=1e-11, limit=200)
        total += val
    return total, env


def fit_envelope_constant(d: int, r: float, dists, times) -> float:
    """Smallest ``C`` with ``lhs <= C * envelope`` on the given grid."""
    ratios = []
    for dist in dists:
        for t in times:
            x = np.zeros(d)
            y = np.zeros(d)
            y[0] = dist
            lhs, env = gaussian_convolution_bound_check(d, r, t, x, y)
            ratios.append(lhs / env)
    return max(ratios)


def _pair_singular_expectation(f, t: float, xi, xj, alpha: float, n_rho: int = 6, n_ang: int = 12,
                               n_v: int = 14) -> float:
    """``E[f(x') f(y') |x' - y'|^{-alpha}]`` for ``x' = xi + B^1_t``, ``y' = xj + B^2_t``.

    With ``u = (Z1 - Z2)/sqrt2``, ``v = (Z1 + Z2)/sqrt2`` independent standard
    normals, ``x' - y' = xi - xj + sqrt(2t) u``. The ``u`` integral is done
    in spherical coordinates centred on the singular point so the weight
    ``rho^{d-1-alpha}`` is absorbed by a change of variables; the ``v``
    integral is a tensor Gauss-Hermite rule. Only ``d = 3``.
    """
    xi, xj = np.asarray(xi, dtype=float), np.asarray(xj, dtype=float)
    d = xi.size
    if d != 3:
        raise NotImplementedError("deterministic pair quadrature is implemented for d = 3")
    st = math.sqrt(t)
    c = -(xi - xj) / math.sqrt(2.0 * t)  # singular point in u-space
    # v: Gauss-Hermite (probabilists') tensor rule
    hx, hw = np.polynomial.hermite_e.hermegauss(n_v)
    hw = hw / math.sqrt(2.0 * math.pi)
    vm = np.meshgrid(hx, hx, hx, indexing="ij")
    v = np.stack([m.ravel() for m in vm], axis=-1)
    wv = np.einsum("i,j,k->ijk", hw, hw, hw).ravel()
    # angles: GL in cos(theta), uniform in phi
    ct, wct = _gl(n_ang, -1.0, 1.0)
    ph = (np.arange(2 * n_ang) + 0.5) * (math.pi / n_ang)
    wph = math.pi / n_ang
    stheta = np.sqrt(1.0 - ct**2)
    omega = np.stack(
        [np.outer(stheta, np.cos(ph)).ravel(), np.outer(stheta, np.sin(ph)).ravel(), np.repeat(ct, ph.size)],
        axis=-1,
    )
    womega = np.repeat(wct, ph.size) * wph
    # rho: on each segment s = rho^{d - alpha} maps rho^{d-1-alpha} drho to ds / (d - alpha)
    p = d - alpha
    edges = np.arange(0.0, np.linalg.norm(c) + 8.0 + 1e-12, 0.5)
    total = 0.0
    for r0, r1 in zip(edges[:-1], edges[1:]):
        sx, sw = _gl(n_rho, r0**p, r1**p)
        for s_k, ws_k in zip(sx, sw):
            rho = s_k ** (1.0 / p)
            u = c + rho * omega  # (n_omega, d)
            gauss_u = np.exp(-0.5 * np.sum(u * u, axis=1)) / (2.0 * math.pi) ** (d / 2.0)
            z1 = (u[:, None, :] + v[None, :, :]) / math.sqrt(2.0)
            z2 = (v[None, :, :] - u[:, None, :]) / math.sqrt(2.0)
            inner = (f(xi + st * z1) * f(xj + st * z2)) @ wv
            total += ws_k / p * float(np.dot(womega, gauss_u * inner))
    return total * (2.0 * t) ** (-alpha / 2.0)


def second_moment_bound_rhs(params, mu: DiscreteMeasure, f, t: float, C: float,
                            include_self: bool = True) -> float:
    """``C int G_t G_t f f (1 + t^alpha / (|x-y|^alpha |x'-y'|^alpha)) dmu dmu dx' dy'`` for atoms.

    Coincident atoms make the singular term infinite and return ``inf``;
    with ``include_self=False`` the diagonal atom pairs contribute only
    their regular part.
    """
    if C <= 0:
        raise ValueError("C must be positive")
    if mu.intensity > 0:
        raise NotImplementedError("the bound is evaluated for atom measures")
    alpha = params.alpha
    pts, w = mu.points, mu.weights
    first = np.array([f.heat_smoothed(t, p) for p in pts])
    terms = []
    for i in range(len(w)):
        for j in range(len(w)):
            terms.append(w[i] * w[j] * first[i] * first[j])
            if alpha == 0.0:
                terms.append(w[i] * w[j] * first[i] * first[j])
                continue
            dist = float(np.linalg.norm(pts[i] - pts[j]))
            if dist == 0.0:
                if include_self:
                    return math.inf
                continue
            J = _pair_singular_expectation(f, t, pts[i], pts[j], alpha)
            terms.append(w[i] * w[j] * t**alpha * dist ** (-alpha) * J)
    return C * math.fsum(terms)


@lru_cache(maxsize=16)
def mollified_pair_table(d: int, epsilon: float, r_max: float = 4.0, n: int = 321) -> tuple:
    """Uniform table of ``2 h^eps(sqrt2 r)`` on ``[0, r_max]`` for the difference bridge.

    On ``D = (X^1 - X^2)/sqrt2``, ``kappa^2 h(X^1 - X^2) = eta * 2 h(sqrt2 |D|)``
    with ``eta = kappa^2 / 2``. The compiled kernel continues the table as
    ``table[-1] (r_max / r)^2``.
    """
    r = np.linspace(0.0, r_max, n)
    vals = np.array([2.0 * mollified_h(d, epsilon, math.sqrt(2.0) * x) for x in r])
    return tuple(vals), r_max


def _second_moment_task(task, mu_pts, mu_w, box, intensity, f, t, m, eta, delta, clip, table, r_max, backend):
    stream, b, cnt = task
    gen = stream.child("endpoints").generator(b)
    d = f.d
    total = 0.0
    if mu_pts.shape[0]:
        p = mu_w / mu_w.sum()
        total = mu_w.sum()
        ix = gen.choice(len(p), size=cnt, p=p)
        iy = gen.choice(len(p), size=cnt, p=p)
        x = mu_pts[ix]
        y = mu_pts[iy]
    else:
        lo, hi = (np.asarray(c, dtype=float) for c in box)
        total = intensity * float(np.prod(hi - lo))
        x = lo + (hi - lo) * gen.random((cnt, d))
        y = lo + (hi - lo) * gen.random((cnt, d))
    if delta > 0:
        x = x + math.sqrt(delta) * gen.standard_normal((cnt, d))
        y = y + math.sqrt(delta) * gen.standard_normal((cnt, d))
    xp = x + math.sqrt(t) * gen.standard_normal((cnt, d))
    yp = y + math.sqrt(t) * gen.standard_normal((cnt, d))
    weights = total * total * f(xp) * f(yp)
    starts = (x - y) / math.sqrt(2.0)
    ends = (xp - yp) / math.sqrt(2.0)
    k = kernels(backend)
    mode = 0 if table is None else 1
    tab = None if table is None else np.asarray(table, dtype=float)
    if eta == 0.0:
        vals = weights
        flags = np.zeros(cnt, dtype=np.uint8)
    else:
        integral, flags = k.bridge_block(stream.generator(b), np.ascontiguousarray(starts),
                                         np.ascontiguousarray(ends), t, m, mode, clip, 1.0, tab, r_max)
        vals = weights * np.exp(eta * integral)
    return stats.power_sums(vals), int(flags.sum())


def second_moment_bridge_rhs(
    params,
    mu: DiscreteMeasure,
    f,
    t: float,
    n_paths: int,
    m: int,
    clip: float = DEFAULT_CLIP,
    rng=0,
    epsilon: float = 0.0,
    delta: float = 0.0,
    workers: int = 1,
    block: int = DEFAULT_BLOCK,
    backend: str | None = None,
) -> MCEstimate:
    """Monte Carlo of ``E[u_t(f)^2]`` through the difference-bridge representation.

    Samples ``x, y ~ mu`` (normalized, then ``G_delta``-smoothed when
    ``delta > 0``), ``x' ~ G_t(x - .)``, ``y' ~ G_t(y - .)`` and a Brownian
    bridge ``D`` from ``(x-y)/sqrt2`` to ``(x'-y')/sqrt2`` over ``[0, t]``; the
    summand is ``mu(1)^2 f(x') f(y') exp(eta int K(D_s) ds)`` with
    ``eta = kappa^2/2``. ``K(r) = min(r^-2, clip)`` when ``epsilon = 0`` and
    ``2 h^eps(sqrt2 r)`` otherwise.
    """
    d = params.d
    eta = params.kappa**2 / 2.0
    if params.kappa > 0:
        a = alpha_of_eta(d, eta)
        if abs(a - params.alpha) > 1e-12:
            raise AssertionError(f"alpha(eta={eta})={a} differs from the model alpha={params.alpha}")
    if mu.atoms and mu.intensity > 0:
        raise NotImplementedError("mixed atom and Lebesgue measures")
    if not mu.atoms and (mu.intensity <= 0 or mu.box is None):
        raise ValueError("second moment needs atoms or Lebesgue measure on a box")
    if f.d != d:
        raise ValueError("test function dimension does not match the model")
    table, r_max = (None, 1.0) if epsilon == 0.0 else mollified_pair_table(d, float(epsilon))
    stream = as_stream(rng, "second_moment")
    pts = mu.points.reshape(-1, d) if mu.atoms else np.zeros((0, d))
    tasks = [(stream, b, min(block, n_paths - lo)) for b, lo in enumerate(range(0, n_paths, block))]
    fn = partial(
        _second_moment_task, mu_pts=pts, mu_w=mu.weights, box=mu.box, intensity=mu.intensity, f=f, t=t,
        m=m, eta=eta, delta=delta, clip=clip, table=table, r_max=r_max, backend=backend,
    )
    results = parallel_map(fn, tasks, workers)
    sums = stats.combine_power_sums(r[0] for r in results)
    return stats.estimate_from_sums(sums, sum(r[1] for r in results))
