"""Positivity-preserving splitting scheme for the mollified equation on a periodic lattice.

One step of length ``dt`` is ``H_{dt/2} M H_{dt/2}`` with ``H_s`` the lattice
heat semigroup ``exp((s/2) Delta_h)`` and ``M`` multiplication by
``exp(kappa dF - kappa^2 h(0) dt / 2)``. The multiplier has mean one exactly,
so the ensemble mean of the scheme is the lattice heat flow of the initial
density. The lattice semigroup (rather than the continuum Gaussian symbol
truncated to the grid) is used because its kernel is positive.

Consecutive half-steps are merged inside :func:`simulate`; :func:`step` is
the unmerged single step used for testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _st

from .functions import BallIndicator, RadialFunction
from .lattice import LatticeField, LatticeSpec, ResolutionError, SpectralWorkspace, heat_flow, irfft, rfft
from .noise import NoiseIncrement, NoiseKernels, build_kernels
from .streams import as_stream, parallel_map

__all__ = [
    "MeasureSpec",
    "PositivityError",
    "init_condition",
    "step",
    "QuadraticFunctional",
    "ObservableConfig",
    "Observables",
    "simulate",
    "run_ensemble",
    "Ensemble",
    "default_dt",
]

# Round-off from the transforms may leave values of order 1e-16 * max below
# zero; anything larger means the scheme broke.
NEGATIVE_TOLERANCE = 1e-12


class PositivityError(ArithmeticError):
    """The solution acquired a negative value beyond transform round-off."""


@dataclass(frozen=True)
class MeasureSpec:
    """Initial measure ``mu`` and mollification time ``delta`` (initial datum ``G_delta mu``).

    ``density`` initial data are mollified by the lattice heat semigroup;
    the other kinds by the continuum Gaussian.
    """

    kind: str
    delta: float
    intensity: float = 0.0
    center: tuple = ()
    radius: float = 0.0
    mass: float = 0.0
    atoms: tuple = ()
    density: RadialFunction | None = None

    def __post_init__(self):
        if self.kind not in ("lebesgue", "uniform_ball", "atom_cloud", "density"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.delta < 0 or (self.delta == 0 and self.kind not in ("lebesgue", "density")):
            raise ValueError("delta must be positive")
        if self.kind == "lebesgue" and self.intensity <= 0:
            raise ValueError("Lebesgue intensity must be positive")
        if self.kind == "uniform_ball" and (self.radius <= 0 or self.mass <= 0):
            raise ValueError("uniform ball needs positive radius and mass")
        if self.kind == "atom_cloud":
            if not self.atoms:
                raise ValueError("atom cloud needs at least one atom")
            if any(w <= 0 for _, w in self.atoms):
                raise ValueError("atom weights must be positive")

    @classmethod
    def lebesgue(cls, intensity: float = 1.0, delta: float = 0.0) -> "MeasureSpec":
        return cls("lebesgue", delta, intensity=float(intensity))

    @classmethod
    def uniform_ball(cls, center, radius: float, mass: float, delta: float) -> "MeasureSpec":
        return cls("uniform_ball", delta, center=tuple(float(c) for c in center), radius=float(radius), mass=float(mass))

    @classmethod
    def atom_cloud(cls, atoms, delta: float) -> "MeasureSpec":
        atoms = tuple((tuple(float(c) for c in p), float(w)) for p, w in atoms)
        return cls("atom_cloud", delta, atoms=atoms)

    @classmethod
    def from_density(cls, fn: RadialFunction, delta: float = 0.0) -> "MeasureSpec":
        return cls("density", delta, density=fn)

    @property
    def total_mass(self) -> float:
        if self.kind == "lebesgue":
            return math.inf
        if self.kind == "uniform_ball":
            return self.mass
        if self.kind == "atom_cloud":
            return math.fsum(w for _, w in self.atoms)
        return self.density.integral()


def _periodic_gaussian_1d(coords: np.ndarray, x0: float, sigma: float, L: float) -> np.ndarray:
    diff = (coords - x0 + L / 2) % L - L / 2
    k = int(math.ceil(10.0 * sigma / L)) + 1
    out = np.zeros_like(diff)
    for m in range(-k, k + 1):
        out += np.exp(-0.5 * ((diff + m * L) / sigma) ** 2)
    return out / (sigma * math.sqrt(2.0 * math.pi))


def init_condition(mu: MeasureSpec, lattice: LatticeSpec) -> LatticeField:
    """Density of ``G_delta mu`` on the lattice, periodized over the torus."""
    d, L = lattice.d, lattice.box_length
    if mu.kind == "lebesgue":
        return LatticeField(lattice, np.full(lattice.shape, mu.intensity))
    if mu.kind == "density":
        if mu.density.d != d:
            raise ValueError("density dimension does not match the lattice")
        vals = mu.density.on_lattice(lattice)
        if mu.delta > 0:
            vals = np.maximum(heat_flow(vals, lattice, mu.delta), 0.0)
        return LatticeField(lattice, vals)
    sigma = math.sqrt(mu.delta)
    if mu.kind == "atom_cloud":
        if sigma < 2.0 * lattice.cell:
            raise ResolutionError(
                f"mollified atom width sqrt(delta)={sigma:.4g} is below 2 cells ({2 * lattice.cell:.4g})"
            )
        vals = np.zeros(lattice.shape)
        for point, w in mu.atoms:
            if len(point) != d:
                raise ValueError("atom dimension does not match the lattice")
            term = np.ones((1,) * d)
            for ax, (c, x0) in enumerate(zip(lattice.coords(), point)):
                term = term * _periodic_gaussian_1d(c, x0, sigma, L)
            vals += w * term
        return LatticeField(lattice, vals)
    # uniform ball: P(|x - c + sqrt(delta) Z| <= R) is a noncentral chi-square cdf
    if mu.radius < 2.0 * lattice.cell:
        raise ResolutionError("ball radius below 2 cells")
    if len(mu.center) != d:
        raise ValueError("ball center dimension does not match the lattice")
    vol = math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0) * mu.radius**d
    disp = lattice.displacement(mu.center)
    reach = mu.radius + 10.0 * sigma
    shifts = [0] if reach < L / 2 else [-1, 0, 1]
    vals = np.zeros(lattice.shape)
    for idx in np.ndindex(*(len(shifts),) * d):
        r2 = sum(np.broadcast_to(c + shifts[i] * L, lattice.shape) ** 2 for c, i in zip(disp, idx))
        if sigma > 0:
            vals += _st.ncx2.cdf(mu.radius**2 / mu.delta, d, r2 / mu.delta)
        else:
            vals += r2 <= mu.radius**2
    return LatticeField(lattice, vals * (mu.mass / vol))


def _check_positive(values: np.ndarray) -> None:
    lo = values.min()
    if lo < 0.0:
        if lo < -NEGATIVE_TOLERANCE * max(values.max(), 0.0):
            raise PositivityError(f"negative density {lo:.3g} after a heat step")
        np.maximum(values, 0.0, out=values)


def step(u: LatticeField, dF: NoiseIncrement, kappa: float, dt: float) -> LatticeField:
    """One unmerged splitting step ``H_{dt/2} M H_{dt/2}``."""
    lat = u.lattice
    if dF.field.lattice != lat:
        raise ValueError("noise increment lives on a different lattice")
    if not math.isclose(dF.dt, dt, rel_tol=1e-12):
        raise ValueError(f"noise increment dt={dF.dt} does not match step dt={dt}")
    v = heat_flow(u.values, lat, dt / 2.0)
    _check_positive(v)
    if kappa != 0.0:
        v = v * np.exp(kappa * dF.field.values - 0.5 * kappa * kappa * dF.h0 * dt)
    v = heat_flow(v, lat, dt / 2.0)
    _check_positive(v)
    return LatticeField(lat, v)


@dataclass(frozen=True)
class QuadraticFunctional:
    """``S = int int K(x - y) e^{-a|x|} e^{-a|y|} u(dx) u(dy)`` with ``K(r) = (r^2 + r_min^2)^{-rho/2}``."""

    rho: float
    tilt: float
    r_min: float

    def grids(self, lattice: LatticeSpec):
        r = lattice.radius()
        kern = (r * r + self.r_min**2) ** (-self.rho / 2.0)
        return rfft(kern), np.exp(-self.tilt * r)


@dataclass
class ObservableConfig:
    """Output times and the integrals recorded at them.

    ``test_smoothing`` applies the lattice heat semigroup for that time to
    every test function before integrating (used to keep duality exact).
    """

    times: tuple
    balls: tuple = ()
    tests: tuple = ()
    quadratic: tuple = ()
    track_qv: bool = False
    test_smoothing: float = 0.0

    def weight_matrix(self, lattice: LatticeSpec) -> np.ndarray:
        rows = []
        for b in self.balls:
            rows.append(BallIndicator(b.center, b.radius).on_lattice(lattice))
        for f in self.tests:
            vals = f.on_lattice(lattice)
            if self.test_smoothing > 0:
                vals = heat_flow(vals, lattice, self.test_smoothing)
            rows.append(vals)
        if not rows:
            return np.zeros((0, lattice.n_per_side**lattice.d))
        return np.stack([r.reshape(-1) for r in rows]) * lattice.cell_volume


@dataclass
class Observables:
    times: np.ndarray
    total_mass: np.ndarray
    ball_masses: np.ndarray
    test_integrals: np.ndarray
    quadratic: np.ndarray
    qv: np.ndarray
    bracket: np.ndarray
    n_steps: int
    dt: float
    min_value: float = math.inf
    meta: dict = field(default_factory=dict)


def default_dt(lattice: LatticeSpec, epsilon: float) -> float:
    return min(lattice.cell**2, epsilon**2) / 4.0


def _grid(t_end: float, dt: float, times) -> tuple[int, float, list[int]]:
    n = max(1, int(math.ceil(t_end / dt - 1e-9)))
    dt = t_end / n
    idx = []
    for t in times:
        k = t / dt
        if abs(k - round(k)) > 1e-6 or not 0 <= round(k) <= n:
            raise ValueError(f"output time {t} is not on the step grid (dt={dt})")
        idx.append(int(round(k)))
    return n, dt, idx


def _rfft_weights(lattice: LatticeSpec) -> np.ndarray:
    n = lattice.n_per_side
    w = np.full(lattice.rshape, 2.0)
    w[..., 0] = 1.0
    w[..., n // 2] = 1.0
    return w


class _Stepper:
    """Merged-step machinery shared with the chaos recursion."""

    def __init__(self, params, kernels: NoiseKernels, dt: float, channels: int):
        lat = kernels.lattice
        self.lattice = lat
        self.kappa = params.kappa
        self.dt = dt
        self.ws = SpectralWorkspace(lat, channels)
        n_tot = self.ws.n_total
        # unnormalized inverse transforms: fold 1/N into every symbol
        self.noise_symbol = kernels.g_hat * (math.sqrt(dt / lat.cell_volume) * lat.cell_volume / n_tot)
        self.heat_full = lat.heat_multiplier(dt) / n_tot
        self.heat_half = lat.heat_multiplier(dt / 2.0) / n_tot
        self.log_shift = 0.5 * self.kappa**2 * kernels.h0 * dt
        self.h_hat = rfft(kernels.h_grid)
        self.parseval = _rfft_weights(lat)

    def draw_noise(self, gen, out_channel: int = 0) -> np.ndarray:
        """Fill ``cout[out_channel]`` with a noise increment and return it."""
        ws = self.ws
        gen.standard_normal(out=ws.real)
        ws.forward()
        np.multiply(ws.spec, self.noise_symbol, out=ws.cin[out_channel])
        ws.inverse(out_channel)
        return ws.cout[out_channel]

    def heat_into(self, spec: np.ndarray, symbol: np.ndarray, channel: int) -> np.ndarray:
        np.multiply(spec, symbol, out=self.ws.cin[channel])
        self.ws.inverse(channel)
        return self.ws.cout[channel]

    def bracket_rate(self, spec_scaled: np.ndarray) -> float:
        """``kappa^2 int int h(x-y) u(dx) u(dy)`` from ``spec_scaled = rfft(u) / N``."""
        lat = self.lattice
        n_tot = self.ws.n_total
        power = spec_scaled.real**2 + spec_scaled.imag**2
        s = float(np.sum(self.parseval * power * self.h_hat.real)) * n_tot
        return self.kappa**2 * s * lat.cell_volume**2


def simulate(
    params,
    mu: MeasureSpec,
    epsilon: float,
    lattice: LatticeSpec,
    t_end: float,
    dt: float | None = None,
    observables: ObservableConfig | None = None,
    rng=0,
    member: int = 0,
    kernels: NoiseKernels | None = None,
    check_dt: bool = True,
) -> Observables:
    """Run one trajectory and record integrals of ``u`` on the output grid.

    Draws come from ``stream.field_generator(member)``; one standard normal field
    per step, so :func:`pamlab.chaos.chaos_terms` with the same stream and
    member sees the same noise.
    """
    if dt is None:
        dt = default_dt(lattice, epsilon)
    if check_dt and dt > lattice.cell**2 / 2.0 * (1 + 1e-12):
        raise ResolutionError(f"dt={dt:.4g} exceeds cell^2/2={lattice.cell ** 2 / 2:.4g}")
    if observables is None:
        observables = ObservableConfig(times=(t_end,))
    if kernels is None:
        kernels = build_kernels(params, epsilon, lattice)
    n, dt, out_idx = _grid(t_end, dt, observables.times)
    stream = as_stream(rng, "simulate")
    gen = stream.field_generator(member)
    st = _Stepper(params, kernels, dt, channels=3)
    ws = st.ws
    weights = observables.weight_matrix(lattice)
    quads = [q.grids(lattice) for q in observables.quadratic]
    cv = lattice.cell_volume
    n_out = len(out_idx)
    res = Observables(
        times=np.array([k * dt for k in out_idx]),
        total_mass=np.zeros(n_out),
        ball_masses=np.zeros((n_out, len(observables.balls))),
        test_integrals=np.zeros((n_out, len(observables.tests))),
        quadratic=np.zeros((n_out, len(quads))),
        qv=np.zeros(n_out),
        bracket=np.zeros(n_out),
        n_steps=n,
        dt=dt,
        meta={"seed": (stream.master_seed, stream.experiment_id, member)},
    )
    nb = len(observables.balls)
    wanted = {}
    for j, k in enumerate(out_idx):
        wanted.setdefault(k, []).append(j)

    def record(k, field_values, qv, bracket):
        flat = field_values.reshape(-1)
        vals = weights @ flat if weights.shape[0] else np.zeros(0)
        mass = math.fsum(flat) * cv
        qvals = []
        for kern_hat, tilt in quads:
            wu = tilt * field_values
            conv = irfft(rfft(wu) * kern_hat, lattice.shape) * cv
            qvals.append(float(np.vdot(wu, conv)) * cv)
        for j in wanted[k]:
            res.total_mass[j] = mass
            res.ball_masses[j] = vals[:nb]
            res.test_integrals[j] = vals[nb:]
            res.quadratic[j] = qvals
            res.qv[j] = qv
            res.bracket[j] = bracket

    u0 = init_condition(mu, lattice).values
    if 0 in wanted:
        record(0, u0, 0.0, 0.0)
    ws.real[...] = u0
    ws.forward()
    mass_prev = ws.spec.flat[0].real * cv
    qv = 0.0
    bracket = 0.0
    track = observables.track_qv and params.kappa != 0.0
    if track:
        bracket_next = st.bracket_rate(ws.spec * st.heat_half) * dt
    u = st.heat_into(ws.spec, st.heat_half, 1)
    _check_positive(u)
    min_value = u.min()
    kappa = params.kappa
    for k in range(1, n + 1):
        if kappa != 0.0:
            dF = st.draw_noise(gen, 0)
            dF *= kappa
            dF -= st.log_shift
            np.exp(dF, out=dF)
            np.multiply(u, dF, out=ws.real)
        else:
            ws.real[...] = u
        ws.forward()
        mass = ws.spec.flat[0].real * cv
        if track:
            qv += (mass - mass_prev) ** 2
            bracket += bracket_next
        mass_prev = mass
        if k in wanted:
            obs = st.heat_into(ws.spec, st.heat_half, 2)
            _check_positive(obs)
            record(k, obs, qv, bracket)
        if k < n:
            if track:
                bracket_next = st.bracket_rate(ws.spec * st.heat_full) * dt
            u = st.heat_into(ws.spec, st.heat_full, 1)
            _check_positive(u)
            min_value = min(min_value, u.min())
    res.min_value = float(min_value)
    return res


@dataclass
class Ensemble:
    """Stacked observables of ``n`` independent trajectories (member axis first)."""

    times: np.ndarray
    total_mass: np.ndarray
    ball_masses: np.ndarray
    test_integrals: np.ndarray
    quadratic: np.ndarray
    qv: np.ndarray
    bracket: np.ndarray
    dt: float
    n_steps: int

    @classmethod
    def stack(cls, runs: list[Observables]) -> "Ensemble":
        return cls(
            times=runs[0].times,
            total_mass=np.stack([r.total_mass for r in runs]),
            ball_masses=np.stack([r.ball_masses for r in runs]),
            test_integrals=np.stack([r.test_integrals for r in runs]),
            quadratic=np.stack([r.quadratic for r in runs]),
            qv=np.stack([r.qv for r in runs]),
            bracket=np.stack([r.bracket for r in runs]),
            dt=runs[0].dt,
            n_steps=runs[0].n_steps,
        )

    def __len__(self):
        return self.total_mass.shape[0]


def _member(i, params, mu, epsilon, lattice, t_end, dt, observables, stream, check_dt):
    return simulate(params, mu, epsilon, lattice, t_end, dt, observables, stream, i, None, check_dt)


def _member_task(args):
    return _member(*args)


def run_ensemble(
    params,
    mu: MeasureSpec,
    epsilon: float,
    lattice: LatticeSpec,
    t_end: float,
    dt: float | None,
    observables: ObservableConfig,
    n_ensemble: int,
    rng=0,
    workers: int = 1,
    check_dt: bool = True,
    first_member: int = 0,
) -> Ensemble:
    """Independent trajectories ``first_member, ..., first_member + n_ensemble - 1``."""
    stream = as_stream(rng, "simulate")
    tasks = [
        (i, params, mu, epsilon, lattice, t_end, dt, observables, stream, check_dt)
        for i in range(first_member, first_member + n_ensemble)
    ]
    return Ensemble.stack(parallel_map(_member_task, tasks, workers))
