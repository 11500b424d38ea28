"""Wiener chaos terms of the lattice solution and their deterministic second moments.

On the lattice the recursion reads, per step of the splitting grid,
``w^n <- H_{dt/2} (H_{dt/2} w^n + kappa (H_{dt/2} w^{n-1}) dF)``: a plain Ito
sum with no exponential correction. All orders advance together and use the
same noise draws as :func:`pamlab.spde.simulate` for the same stream and
member, so a chaos run is paired with an SPDE run by construction. Summed
over all orders, the recursion gives the linear-multiplier scheme
``H (1 + kappa dF) H``, whose one-step difference from the geometric update
is second order in ``dF``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .functions import GaussianBump
from .lattice import LatticeField, LatticeSpec, irfft, rfft
from .noise import build_kernels
from .special import mollified_h
from .spde import ObservableConfig, _Stepper, _check_positive, _grid, _rfft_weights, default_dt, init_condition
from .streams import as_stream

__all__ = [
    "ChaosTerm",
    "ChaosRun",
    "chaos_terms",
    "partial_sum_solution",
    "chaos_l2_norm_quadrature",
    "QuadratureError",
    "MAX_ORDER",
]

MAX_ORDER = 6


class QuadratureError(RuntimeError):
    """Deterministic quadrature did not reach its tolerance."""


@dataclass(frozen=True)
class ChaosTerm:
    order: int
    field: LatticeField
    t: float


@dataclass
class ChaosRun:
    """Test integrals of every chaos order on the output grid.

    ``orders[k, n, j]`` is ``I^n_{t_k}(f_j)``; ``spde[k, j]`` the paired SPDE
    value (``None`` when unpaired); ``martingale[k, n, j]`` is
    ``I^n_{t_k}(H_{T - t_k} f_j)``, an exact discrete martingale in ``k``.
    """

    times: np.ndarray
    orders: np.ndarray
    spde: np.ndarray | None
    martingale: np.ndarray | None
    final_terms: list = field(default_factory=list)
    seed: tuple = ()


def chaos_terms(
    params,
    mu,
    epsilon: float,
    lattice: LatticeSpec,
    t_end: float,
    dt: float | None,
    N: int,
    observables: ObservableConfig,
    rng=0,
    member: int = 0,
    paired: bool = True,
    martingale_horizon: float | None = None,
    keep_fields: bool = False,
) -> ChaosRun:
    """Advance chaos orders ``0..N`` (and the paired SPDE solution) on one noise path."""
    if N < 0:
        raise ValueError("chaos order N must be >= 0")
    if N > MAX_ORDER:
        raise ValueError(f"N={N} exceeds the supported maximum {MAX_ORDER}")
    if dt is None:
        dt = default_dt(lattice, epsilon)
    kernels = build_kernels(params, epsilon, lattice)
    n_steps, dt, out_idx = _grid(t_end, dt, observables.times)
    stream = as_stream(rng, "simulate")
    gen = stream.field_generator(member)
    n_ch = 2 + (N + 1) + (1 if paired else 0)  # noise, observation, orders, spde
    st = _Stepper(params, kernels, dt, channels=n_ch)
    ws = st.ws
    kappa = params.kappa
    weights = observables.weight_matrix(lattice)
    n_tests = weights.shape[0]
    n_out = len(out_idx)
    orders = np.zeros((n_out, N + 1, n_tests))
    spde_vals = np.zeros((n_out, n_tests)) if paired else None
    mart = None
    if martingale_horizon is not None:
        mart = np.zeros((n_out, N + 1, n_tests))
        parseval = _rfft_weights(lattice)
        test_hat = [rfft(w.reshape(lattice.shape)) for w in weights]
    wanted = {}
    for j, k in enumerate(out_idx):
        wanted.setdefault(k, []).append(j)
    ch_order = [2 + n for n in range(N + 1)]
    ch_spde = 2 + N + 1

    u0 = init_condition(mu, lattice).values
    spec0 = rfft(u0)
    # state: real-space fields after the leading half-step of the current step
    w = [None] * (N + 1)
    for n in range(N + 1):
        if n == 0:
            w[n] = st.heat_into(spec0, st.heat_half, ch_order[n])
        else:
            w[n] = ws.cout[ch_order[n]]
            w[n][...] = 0.0
    if paired:
        u = st.heat_into(spec0, st.heat_half, ch_spde)
        _check_positive(u)

    def observe(spec):
        obs = st.heat_into(spec, st.heat_half, 1)
        return weights @ obs.reshape(-1)

    def observe_martingale(k, spec):
        # <w_t, H_{T-t} f> by Parseval; spec = rfft(w after multiplication), so
        # w_t = H_{dt/2} of it
        t_k = k * dt
        lag = dt / 2.0 if k > 0 else 0.0
        sym = lattice.heat_multiplier(martingale_horizon - t_k + lag)
        return [float(np.sum(parseval * (spec * sym * np.conj(th)).real)) / ws.n_total for th in test_hat]

    if 0 in wanted:
        vals0 = weights @ u0.reshape(-1)
        m0 = observe_martingale(0, spec0) if mart is not None else None
        for j in wanted[0]:
            orders[j, 0] = vals0
            if mart is not None:
                mart[j, 0] = m0
            if paired:
                spde_vals[j] = vals0

    specs = [None] * (N + 1)
    for k in range(1, n_steps + 1):
        dF = st.draw_noise(gen, 0) if kappa != 0.0 else None
        # orders, highest first so w[n-1] is still the pre-step value
        for n in range(N, -1, -1):
            if n >= 1 and dF is not None:
                np.multiply(w[n - 1], dF, out=ws.real)
                ws.real *= kappa
                ws.real += w[n]
            else:
                ws.real[...] = w[n]
            ws.forward()
            specs[n] = ws.spec.copy()
        if paired:
            if dF is not None:
                np.multiply(dF, kappa, out=ws.real)
                ws.real -= st.log_shift
                np.exp(ws.real, out=ws.real)
                ws.real *= u
            else:
                ws.real[...] = u
            ws.forward()
            spde_spec = ws.spec.copy()
        if k in wanted:
            for n in range(N + 1):
                vals = observe(specs[n])
                for j in wanted[k]:
                    orders[j, n] = vals
                if mart is not None:
                    mvals = observe_martingale(k, specs[n])
                    for j in wanted[k]:
                        mart[j, n] = mvals
            if paired:
                vals = observe(spde_spec)
                for j in wanted[k]:
                    spde_vals[j] = vals
        if k < n_steps:
            for n in range(N + 1):
                w[n] = st.heat_into(specs[n], st.heat_full, ch_order[n])
            if paired:
                u = st.heat_into(spde_spec, st.heat_full, ch_spde)
                _check_positive(u)
    final = []
    if keep_fields:
        for n in range(N + 1):
            final.append(ChaosTerm(n, LatticeField(lattice, irfft(specs[n] * lattice.heat_multiplier(dt / 2.0),
                                                                  lattice.shape)), n_steps * dt))
    return ChaosRun(
        times=np.array([k * dt for k in out_idx]),
        orders=orders,
        spde=spde_vals,
        martingale=mart,
        final_terms=final,
        seed=(stream.master_seed, stream.experiment_id, member),
    )


def partial_sum_solution(run, N: int, spde=None):
    """``u_N = sum_{n <= N} I^n``.

    For a :class:`ChaosRun` the sum is taken over test integrals, shape
    ``(T, n_tests)``; for a sequence of :class:`ChaosTerm` snapshots at one
    time it is the summed :class:`~pamlab.lattice.LatticeField`. ``spde`` may
    be an :class:`~pamlab.spde.Observables` from a separate
    :func:`~pamlab.spde.simulate` call; its seed must match the chaos run's.
    """
    if isinstance(run, ChaosRun):
        if N < 0 or N >= run.orders.shape[1]:
            raise ValueError(f"N={N} outside the computed orders 0..{run.orders.shape[1] - 1}")
        if spde is not None:
            seed = spde.meta.get("seed")
            if seed != run.seed:
                raise ValueError(f"SPDE run seed {seed} does not match chaos run seed {run.seed}")
        return run.orders[:, : N + 1, :].sum(axis=1)
    terms = sorted(run, key=lambda term: term.order)
    if N < 0 or N >= len(terms):
        raise ValueError(f"N={N} outside the available orders 0..{len(terms) - 1}")
    if len({term.t for term in terms}) != 1 or len({term.field.lattice for term in terms}) != 1:
        raise ValueError("chaos terms come from different times or lattices")
    total = sum(term.field.values for term in terms[: N + 1])
    return LatticeField(terms[0].field.lattice, total)


# -- deterministic second moments of low orders ------------------------------------


def _graded(lo: float, hi: float, levels: int, nodes: int, toward: str = "lo"):
    """Gauss-Legendre on ``[lo, hi]`` refined geometrically toward one end."""
    L = hi - lo
    fr = [0.0] + [2.0 ** (-k) for k in range(levels - 1, -1, -1)]
    x0, w0 = np.polynomial.legendre.leggauss(nodes)
    xs, ws_ = [], []
    for a, b in zip(fr[:-1], fr[1:]):
        x = 0.5 * (b - a) * x0 + 0.5 * (b + a)
        w = 0.5 * (b - a) * w0
        xs.append(x)
        ws_.append(w)
    x = np.concatenate(xs)
    w = np.concatenate(ws_) * L
    if toward == "lo":
        return lo + L * x, w
    return hi - L * x, w


@dataclass
class _DGrid:
    """Periodic grid for the difference coordinate ``D = X^1 - X^2``."""

    lattice: LatticeSpec
    ksq: np.ndarray
    weights: np.ndarray
    kvec: list

    @classmethod
    def build(cls, d: int, half_width: float, n: int):
        lat = LatticeSpec(d, n, 2.0 * half_width)
        ks = lat.wavenumbers()
        ksq = sum(k * k for k in ks)
        return cls(lat, ksq, _rfft_weights(lat), ks)

    def propagate(self, spec, variance: float):
        """Gaussian convolution with per-coordinate ``variance`` in Fourier space."""
        return spec * np.exp(-0.5 * variance * self.ksq)

    def point_value(self, spec, point) -> float:
        """Trigonometric interpolant of ``irfft(spec)`` at an arbitrary point."""
        phase = sum(k * p for k, p in zip(self.kvec, point))
        n_tot = self.lattice.n_per_side**self.lattice.d
        return float(np.sum(self.weights * (spec * np.exp(1j * phase)).real)) / n_tot


def _terminal_function(f, grid: _DGrid, m_S, tau: float, n_v: int = 12) -> np.ndarray:
    """``F(D) = E[f((S + D)/2) f((S - D)/2)]`` with ``S ~ N(m_S, 2 tau I)``.

    Closed form for a Gaussian bump (the product separates into an ``S``
    and a ``D`` factor); tensor Gauss-Hermite over ``S`` otherwise.
    """
    lat = grid.lattice
    d = lat.d
    D = lat.points()
    if isinstance(f, GaussianBump):
        w2 = f.width**2
        c = f.center
        r2 = np.sum(D * D, axis=-1)
        s_fac = (w2 / (w2 + tau)) ** (d / 2.0) * math.exp(-float(np.sum((m_S - 2 * c) ** 2)) / (4.0 * (w2 + tau)))
        return f.height**2 * s_fac * np.exp(-r2 / (4.0 * w2))
    hx, hw = np.polynomial.hermite_e.hermegauss(n_v)
    hw = hw / math.sqrt(2.0 * math.pi)
    mesh = np.meshgrid(*([hx] * d), indexing="ij")
    z = np.stack([m.ravel() for m in mesh], axis=-1)
    wz = np.prod(np.stack(np.meshgrid(*([hw] * d), indexing="ij")), axis=0).ravel()
    S = m_S + math.sqrt(2.0 * tau) * z
    flat = D.reshape(-1, d)
    out = np.empty(flat.shape[0])
    for c0 in range(0, flat.shape[0], 256):
        Dc = flat[c0:c0 + 256]
        a = (S[None, :, :] + Dc[:, None, :]) / 2.0
        b = (S[None, :, :] - Dc[:, None, :]) / 2.0
        out[c0:c0 + 256] = (f(a) * f(b)) @ wz
    return out.reshape(lat.shape)


def _h_on_grid(d: int, epsilon: float, grid: _DGrid) -> np.ndarray:
    r = grid.lattice.radius()
    r_tab = np.linspace(0.0, float(r.max()) * 1.0001, 2049)
    h_tab = np.array([mollified_h(d, epsilon, x) for x in r_tab])
    return np.interp(r, r_tab, h_tab)


def chaos_l2_norm_quadrature(
    params,
    mu,
    f,
    t: float,
    n: int,
    epsilon: float,
    delta: float = 0.0,
    grid_n: int = 128,
    levels: int = 6,
    nodes: int = 6,
    rel_tol: float | None = None,
) -> float:
    """``E[(I^n_t(f, mu))^2]`` for ``n <= 2`` with the continuum kernel ``h^eps``.

    ``mu`` is a :class:`~pamlab.moments.DiscreteMeasure`: atoms, each
    smoothed by ``G_delta``, or Lebesgue measure on the whole space. For every atom pair the difference
    ``D = X^1 - X^2`` is a Brownian motion of variance rate 2 started at
    ``x_i - x_j`` (spread ``2 delta``), independent of ``X^1 + X^2``, so

        n=1: kappa^2 int_0^t [G_{2(s+delta)} * (h B_s)](D_0) ds
        n=2: kappa^4 int_{s1<s2} [G_{2(s1+delta)} * (h G_{2(s2-s1)} * (h B_{s2}))](D_0)

    with ``B_s = G_{2(t-s)} * F`` and ``F`` from :func:`_terminal_function`.
    For Lebesgue measure the pair sum integrates ``D_0`` out and ``F``
    becomes the autocorrelation of ``f``.
    Gaussian convolutions are exact Fourier multipliers on a periodic grid
    and point values use the trigonometric interpolant. Time integrals use
    Gauss-Legendre graded toward the endpoints where the integrands vary
    fastest. With ``rel_tol`` set, the result is recomputed on a grid of
    twice the resolution and a :class:`QuadratureError` reports the achieved
    tolerance if the two disagree by more.
    """
    if n not in (0, 1, 2):
        raise ValueError("quadrature is available for chaos orders 0, 1, 2")
    if rel_tol is not None:
        coarse = chaos_l2_norm_quadrature(params, mu, f, t, n, epsilon, delta, grid_n, levels, nodes)
        fine = chaos_l2_norm_quadrature(params, mu, f, t, n, epsilon, delta, 2 * grid_n, levels, nodes)
        err = abs(fine - coarse) / max(abs(fine), 1e-300)
        if err > rel_tol:
            raise QuadratureError(f"achieved relative tolerance {err:.3g} > requested {rel_tol:.3g}")
        return fine
    d = params.d
    reach = 6.0 * math.sqrt(2.0 * (t + delta))
    if mu.intensity > 0:
        if mu.box is not None or mu.atoms:
            raise NotImplementedError("quadrature supports atoms or Lebesgue measure on the whole space")
        # Lebesgue: sum over pairs becomes c^2 int dD0 int dS0 (1/2^d); the S0
        # integral turns F into the autocorrelation of f
        width = getattr(f, "width", None) or getattr(f, "radius", 1.0)
        grid = _DGrid.build(d, reach + 8.0 * width, grid_n)
        lat = grid.lattice
        f_grid = f.profile(lat.radius())
        auto = irfft(np.abs(rfft(f_grid)) ** 2, lat.shape) * lat.cell_volume
        jobs = [(mu.intensity**2, None, auto)]
    else:
        pts, wts = mu.points.reshape(-1, d), mu.weights
        spread = float(np.max(np.linalg.norm(pts[:, None] - pts[None], axis=-1)))
        grid = _DGrid.build(d, spread + reach + 3.0 * getattr(f, "width", 0.5), grid_n)
        jobs = []
        for i in range(len(wts)):
            for j in range(len(wts)):
                F = _terminal_function(f, grid, pts[i] + pts[j], t + delta)
                jobs.append((wts[i] * wts[j], pts[i] - pts[j], F))
    cell_vol = grid.lattice.cell_volume

    def finish(spec, D0, variance):
        if D0 is None:
            return float(spec.flat[0].real) * cell_vol
        return grid.point_value(grid.propagate(spec, variance), D0)

    h = _h_on_grid(d, epsilon, grid) if n > 0 else None
    kappa2 = params.kappa**2
    shape = grid.lattice.shape
    total = []
    for ww, D0, F in jobs:
        F_hat = rfft(F)
        if n == 0:
            total.append(ww * finish(F_hat, D0, 2.0 * (t + delta)))
            continue
        if n == 1:
            s_nodes, s_w = _graded(0.0, t, levels, nodes, "lo")
            acc = []
            for s, sw in zip(s_nodes, s_w):
                B = irfft(grid.propagate(F_hat, 2.0 * (t - s)), shape)
                acc.append(sw * finish(rfft(h * B), D0, 2.0 * (s + delta)))
            total.append(ww * kappa2 * math.fsum(acc))
            continue
        s2_nodes, s2_w = _graded(0.0, t, levels, nodes, "lo")
        acc = []
        for s2, w2 in zip(s2_nodes, s2_w):
            B = irfft(grid.propagate(F_hat, 2.0 * (t - s2)), shape)
            inner_hat = rfft(h * B)
            a_nodes, a_w = _graded(0.0, s2 / 2.0, levels, nodes, "lo")
            b_nodes, b_w = _graded(s2 / 2.0, s2, levels, nodes, "hi")
            for s1, w1 in zip(np.concatenate([a_nodes, b_nodes]), np.concatenate([a_w, b_w])):
                mid = irfft(grid.propagate(inner_hat, 2.0 * (s2 - s1)), shape)
                acc.append(w2 * w1 * finish(rfft(h * mid), D0, 2.0 * (s1 + delta)))
        total.append(ww * kappa2 * kappa2 * math.fsum(acc))
    return math.fsum(total)
