"""Desk-scale statistical experiments for the qualitative theorems.

Each theorem is turned into a falsifiable statistic: equality in law becomes
a two-sample KS test with a bias budget, almost-sure monotone limits become
one-sided trend tests on paired ensembles, and supermartingale claims become
monotonicity of ensemble means. Every experiment first runs its kappa=0 null
configuration and aborts if a trivial assertion fails.

All ensembles run on the periodic lattice, so "whole space" statements are
tested on a torus whose side is large compared with the diffusion length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _st

from .functions import BallIndicator, RadialFunction
from .lattice import LatticeSpec, ResolutionError
from .special import DomainError, ModelParams
from .spde import MeasureSpec, ObservableConfig, QuadraticFunctional, init_condition, run_ensemble
from .stats import binomial_upper, ks_critical_value, ks_two_sample, mean_ci, one_sided_positive
from .streams import as_stream

__all__ = [
    "AssertionRecord",
    "ExperimentReport",
    "NullCheckError",
    "duality_experiment",
    "scaling_experiment",
    "total_mass_martingale_check",
    "death_diagnostic",
    "singularity_diagnostic",
    "supermartingale_rho_check",
    "local_extinction_check",
    "same_law_null",
    "scaled_epsilon",
]


class NullCheckError(AssertionError):
    """A kappa=0 null assertion failed; stochastic assertions were not run."""


@dataclass
class AssertionRecord:
    name: str
    reference: str
    statistic: float
    threshold: float
    passed: bool
    p_value: float | None = None
    interval: tuple | None = None
    note: str = ""


@dataclass
class ExperimentReport:
    experiment_id: str
    parameters: dict
    assertions: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)  # name -> (header, rows)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def add(self, *args, **kwargs) -> AssertionRecord:
        rec = AssertionRecord(*args, **kwargs)
        self.assertions.append(rec)
        return rec

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment_id,
            "passed": self.passed,
            "parameters": {k: _plain(v) for k, v in self.parameters.items()},
            "seeds": {k: _plain(v) for k, v in self.seeds.items()},
            "assertions": [
                {
                    "name": a.name,
                    "reference": a.reference,
                    "statistic": float(a.statistic),
                    "threshold": float(a.threshold),
                    "passed": bool(a.passed),
                    "p_value": None if a.p_value is None else float(a.p_value),
                    "interval": None if a.interval is None else [float(x) for x in a.interval],
                    "note": a.note,
                }
                for a in self.assertions
            ],
            "notes": list(self.notes),
        }


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (int, float, str, bool)) or v is None:
        return v
    return repr(v)


def _ensemble(params, mu, epsilon, lattice, t_end, dt, obs, n, stream, workers, first_member=0):
    return run_ensemble(params, mu, epsilon, lattice, t_end, dt, obs, n, stream, workers,
                        check_dt=True, first_member=first_member)


def _null(params) -> ModelParams:
    return ModelParams.unchecked(params.d, 0.0)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise NullCheckError(message)


def _ks_record(report, name, reference, a, b, level, budget):
    stat, p = ks_two_sample(a, b)
    crit = ks_critical_value(len(a), len(b), level) + budget
    return report.add(name, reference, stat, crit, stat < crit, p_value=p,
                      note=f"critical value at level {level} plus bias budget {budget}")


def _mean_diff_record(report, name, reference, a, b, z_max=3.0):
    a, b = np.asarray(a), np.asarray(b)
    se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    diff = float(a.mean() - b.mean())
    z = 0.0 if se == 0.0 else diff / se
    return report.add(name, reference, abs(z), z_max, abs(z) < z_max,
                      interval=(diff - 1.96 * se, diff + 1.96 * se), note="mean difference z-score")


def same_law_null(sample_pair, repetitions: int = 20, level: float = 0.01, alpha: float = 0.01):
    """Rejection count of the KS test over ``repetitions`` same-law pairs.

    ``sample_pair(i)`` returns two independent samples from one configuration.
    Returns ``(rejections, allowed)`` where ``allowed`` is the binomial upper
    bound at ``alpha`` for the nominal level.
    """
    rejections = 0
    for i in range(repetitions):
        a, b = sample_pair(i)
        stat, _ = ks_two_sample(a, b)
        rejections += stat >= ks_critical_value(len(a), len(b), level)
    return int(rejections), binomial_upper(repetitions, level, alpha)


# -- duality --------------------------------------------------------------------------


def duality_experiment(
    params,
    f_init: RadialFunction,
    g_test: RadialFunction,
    t: float,
    epsilon: float,
    lattice: LatticeSpec,
    n_ensemble: int,
    rng=0,
    dt: float | None = None,
    workers: int = 1,
    bias_budget: float = 0.0,
    null_repetitions: int = 20,
    null_ensemble: int = 100,
    level: float = 0.01,
) -> ExperimentReport:
    """Law of ``u_t(g)`` from ``f dx`` against the law of ``v_t(f)`` from ``g dx``.

    On the lattice both sides are products of the same symmetric heat and
    multiplication operators in reverse order with i.i.d. multipliers, so the
    scheme is exactly self-dual and the pre-registered bias budget is 0.
    """
    stream = as_stream(rng, "duality")
    rep = ExperimentReport("duality", {
        "d": params.d, "kappa": params.kappa, "t": t, "epsilon": epsilon,
        "lattice": (lattice.d, lattice.n_per_side, lattice.box_length), "n_ensemble": n_ensemble,
        "f": repr(f_init), "g": repr(g_test), "bias_budget": bias_budget, "level": level,
    })
    rep.seeds = {"master_seed": stream.master_seed, "experiment_id": stream.experiment_id}
    mu_u = MeasureSpec.from_density(f_init)
    mu_v = MeasureSpec.from_density(g_test)
    obs_u = ObservableConfig(times=(t,), tests=(g_test,))
    obs_v = ObservableConfig(times=(t,), tests=(f_init,))

    p0 = _null(params)
    a0 = _ensemble(p0, mu_u, epsilon, lattice, t, dt, obs_u, 2, stream.child("null-u"), 1).test_integrals[:, 0, 0]
    b0 = _ensemble(p0, mu_v, epsilon, lattice, t, dt, obs_v, 2, stream.child("null-v"), 1).test_integrals[:, 0, 0]
    _require(np.allclose(a0, a0[0], rtol=0, atol=0) and math.isclose(a0[0], b0[0], rel_tol=1e-10),
             f"kappa=0 duality: {a0[0]!r} vs {b0[0]!r}")
    rep.add("kappa=0 degenerate equality", "self-duality, deterministic case",
            abs(a0[0] - b0[0]) / abs(a0[0]), 1e-10, True)

    u = _ensemble(params, mu_u, epsilon, lattice, t, dt, obs_u, n_ensemble, stream.child("u"), workers)
    v = _ensemble(params, mu_v, epsilon, lattice, t, dt, obs_v, n_ensemble, stream.child("v"), workers)
    a = u.test_integrals[:, 0, 0]
    b = v.test_integrals[:, 0, 0]
    _ks_record(rep, "KS u_t(g) vs v_t(f)", "self-duality in law", a, b, level, bias_budget)
    _mean_diff_record(rep, "mean u_t(g) - mean v_t(f)", "self-duality, first moment", a, b)
    # Brown-Forsythe: the samples are skewed and heavy tailed, so no normal-theory F band
    ratio = float(a.var(ddof=1) / b.var(ddof=1))
    bf = _st.levene(a, b, center="median")
    rep.add("variance ratio", "self-duality, second moment", ratio, level, bool(bf.pvalue > level),
            p_value=float(bf.pvalue), note=f"Brown-Forsythe equal-spread test at level {level}")
    rep.series["duality_samples"] = (("member", "u_t_g", "v_t_f"), [(i, x, y) for i, (x, y) in enumerate(zip(a, b))])

    if null_repetitions > 0:
        def pair(i):
            s = stream.child(f"null-{i}")
            x = _ensemble(params, mu_u, epsilon, lattice, t, dt, obs_u, 2 * null_ensemble, s, workers)
            vals = x.test_integrals[:, 0, 0]
            return vals[:null_ensemble], vals[null_ensemble:]

        rej, allowed = same_law_null(pair, null_repetitions, level)
        rep.add("same-law null rejections", "KS calibration", rej, allowed, rej <= allowed,
                note=f"{null_repetitions} repetitions of {null_ensemble} vs {null_ensemble}")
    return rep


# -- scaling --------------------------------------------------------------------------


def scaled_epsilon(d: int, epsilon: float, c: float) -> float:
    """Mollification scale of the unit-scale system paired with scale ``c``.

    With ``g^eps = min(c_d r^{-(d+2)/2}, 1/eps)`` the map ``y = x / c`` sends
    the noise of scale ``eps`` to the noise of scale ``eps c^{-(d+2)/2}``
    (covariance ``h(y) = c^2 h(c y)``, the law of the singular noise).
    """
    return epsilon * c ** (-(d + 2) / 2.0)


def scaling_experiment(
    params,
    epsilon: float,
    lattice: LatticeSpec,
    t: float,
    c: float,
    n_ensemble: int,
    rng=0,
    intensity: float = 1.0,
    dt: float | None = None,
    workers: int = 1,
    bias_budget: float = 0.0,
    null_repetitions: int = 20,
    null_ensemble: int = 100,
    level: float = 0.01,
) -> ExperimentReport:
    """Law of ``u_t(B(0,c))`` against that of ``c^d u'_{t/c^2}(B(0,1))``.

    The unit-scale system uses the lattice scaled by ``1/c`` (same number of
    cells), time step ``dt/c^2`` and mollification :func:`scaled_epsilon`, so
    heat and noise operators coincide exactly and the bias budget is 0.
    """
    if not 0 < c <= 1:
        raise ValueError("c must lie in (0, 1]")
    stream = as_stream(rng, "scaling")
    d = params.d
    lat_b = lattice.scaled(1.0 / c)
    eps_b = scaled_epsilon(d, epsilon, c)
    if lattice.cell >= epsilon / 2 or lat_b.cell >= eps_b / 2:
        raise ResolutionError("rescaled lattice cannot resolve the mollifier")
    if c < 2 * lattice.cell:
        raise ResolutionError(f"ball radius {c} below 2 cells")
    if dt is None:
        dt = min(lattice.cell**2, epsilon**2) / 4.0
    rep = ExperimentReport("scaling", {
        "d": d, "kappa": params.kappa, "t": t, "c": c, "epsilon": epsilon, "epsilon_unit": eps_b,
        "lattice": (lattice.d, lattice.n_per_side, lattice.box_length), "n_ensemble": n_ensemble,
        "intensity": intensity, "bias_budget": bias_budget, "level": level,
    })
    rep.seeds = {"master_seed": stream.master_seed, "experiment_id": stream.experiment_id}
    mu = MeasureSpec.lebesgue(intensity)
    origin = (0.0,) * d
    obs_a = ObservableConfig(times=(t,), balls=(BallIndicator(origin, c),))
    obs_b = ObservableConfig(times=(t / c**2,), balls=(BallIndicator(origin, 1.0),))

    def side_a(p, n, s):
        return _ensemble(p, mu, epsilon, lattice, t, dt, obs_a, n, s, workers).ball_masses[:, 0, 0]

    def side_b(p, n, s):
        return c**d * _ensemble(p, mu, eps_b, lat_b, t / c**2, dt / c**2, obs_b, n, s, workers).ball_masses[:, 0, 0]

    p0 = _null(params)
    a0 = side_a(p0, 1, stream.child("null-a"))[0]
    b0 = side_b(p0, 1, stream.child("null-b"))[0]
    _require(math.isclose(a0, b0, rel_tol=1e-10), f"kappa=0 scaling: {a0!r} vs {b0!r}")
    rep.add("kappa=0 deterministic equality", "scaling, deterministic case", abs(a0 - b0) / a0, 1e-10, True)

    a = side_a(params, n_ensemble, stream.child("a"))
    b = side_b(params, n_ensemble, stream.child("b"))
    _ks_record(rep, "KS u_t(B(0,c)) vs c^d u_{t/c^2}(B(0,1))", "scaling in law", a, b, level, bias_budget)
    _mean_diff_record(rep, "mean difference", "scaling, first moment", a, b)
    rep.series["scaling_samples"] = (("member", "small_ball", "rescaled_unit_ball"),
                                     [(i, x, y) for i, (x, y) in enumerate(zip(a, b))])
    if null_repetitions > 0:
        def pair(i):
            vals = side_a(params, 2 * null_ensemble, stream.child(f"null-{i}"))
            return vals[:null_ensemble], vals[null_ensemble:]

        rej, allowed = same_law_null(pair, null_repetitions, level)
        rep.add("same-law null rejections", "KS calibration", rej, allowed, rej <= allowed,
                note=f"{null_repetitions} repetitions of {null_ensemble} vs {null_ensemble}")
    return rep


# -- total mass -----------------------------------------------------------------------


def total_mass_martingale_check(
    params,
    mu: MeasureSpec,
    epsilon: float,
    lattice: LatticeSpec,
    t_end: float,
    n_ensemble: int,
    rng=0,
    n_times: int = 5,
    dt: float | None = None,
    workers: int = 1,
    qv_tolerance: float = 0.10,
) -> ExperimentReport:
    """Flat mean of ``u_t(1)`` and realized quadratic variation against the bracket."""
    if not math.isfinite(mu.total_mass):
        raise ValueError("total-mass check needs a finite initial measure")
    stream = as_stream(rng, "total-mass")
    if dt is None:
        dt = min(lattice.cell**2, epsilon**2) / 4.0
    n_steps = max(1, int(math.ceil(t_end / dt - 1e-9)))
    dt = t_end / n_steps
    ks = sorted({round(i * n_steps / (n_times - 1)) for i in range(n_times)}) if n_times > 1 else [n_steps]
    times = tuple(k * dt for k in ks)
    obs = ObservableConfig(times=times, track_qv=True)
    rep = ExperimentReport("total-mass", {
        "d": params.d, "kappa": params.kappa, "t_end": t_end, "epsilon": epsilon,
        "lattice": (lattice.d, lattice.n_per_side, lattice.box_length), "n_ensemble": n_ensemble,
        "mu": mu.kind, "dt": dt,
    })
    rep.seeds = {"master_seed": stream.master_seed, "experiment_id": stream.experiment_id}
    m0 = init_condition(mu, lattice).total_mass()
    rep.notes.append(f"lattice initial mass {m0!r}; measure mass {mu.total_mass!r}")

    null = _ensemble(_null(params), mu, epsilon, lattice, t_end, dt, obs, 2, stream.child("null"), 1)
    dev = float(np.max(np.abs(null.total_mass - m0)) / m0)
    _require(dev < 1e-12, f"kappa=0 total mass drifted by {dev:.3g}")
    rep.add("kappa=0 constant mass", "total mass martingale, deterministic case", dev, 1e-12, True)

    ens = _ensemble(params, mu, epsilon, lattice, t_end, dt, obs, n_ensemble, stream.child("ensemble"), workers)
    rows = []
    for j, tj in enumerate(ens.times):
        m, lo, hi = mean_ci(ens.total_mass[:, j])
        se = (hi - lo) / (2 * 1.959963984540054)
        z = 0.0 if se == 0 else (m - m0) / se
        rows.append((tj, m, se, float(ens.qv[:, j].mean()), float(ens.bracket[:, j].mean())))
        if tj > 0:
            rep.add(f"mean mass drift at t={tj:.6g}", "total mass martingale", abs(z), 3.0, abs(z) < 3.0,
                    interval=(lo, hi))
    qv = float(ens.qv[:, -1].mean())
    br = float(ens.bracket[:, -1].mean())
    rel = abs(qv / br - 1.0)
    rep.add("realized QV / mollified bracket - 1", "total mass bracket", rel, qv_tolerance, rel < qv_tolerance)
    rep.series["total_mass"] = (("t", "mean_mass", "std_error", "mean_qv", "mean_bracket"), rows)
    return rep


# -- death ----------------------------------------------------------------------------


def death_diagnostic(
    params,
    mu: MeasureSpec,
    epsilon: float,
    lattice: LatticeSpec,
    t_grid,
    n_ensemble: int,
    rng=0,
    dt: float | None = None,
    workers: int = 1,
    level: float = 0.99,
) -> ExperimentReport:
    """``E[u_t(1)^{1/2}]`` on a geometric time grid: strict decrease and the Jensen envelope.

    Consecutive grid points are compared by paired one-sided tests at
    ``level``. Lattice coarseness is the dominant systematic; no rate is asserted.
    """
    t_grid = tuple(float(x) for x in t_grid)
    if any(b <= a for a, b in zip(t_grid[:-1], t_grid[1:])):
        raise ValueError("time grid must be increasing")
    stream = as_stream(rng, "death")
    if dt is None:
        dt = min(lattice.cell**2, epsilon**2) / 4.0
    dt = _dt_on_grid(dt, t_grid)
    obs = ObservableConfig(times=t_grid)
    rep = ExperimentReport("death", {
        "d": params.d, "kappa": params.kappa, "t_grid": t_grid, "epsilon": epsilon,
        "lattice": (lattice.d, lattice.n_per_side, lattice.box_length), "n_ensemble": n_ensemble, "dt": dt,
    })
    rep.seeds = {"master_seed": stream.master_seed, "experiment_id": stream.experiment_id}
    rep.notes.append("coarse lattice: lattice coarseness is the dominant systematic")
    m0 = init_condition(mu, lattice).total_mass()
    null = _ensemble(_null(params), mu, epsilon, lattice, t_grid[-1], dt, obs, 1, stream.child("null"), 1)
    dev = float(np.max(np.abs(np.sqrt(null.total_mass) - math.sqrt(m0))))
    _require(dev < 1e-10 * math.sqrt(m0), f"kappa=0 eta_t not constant ({dev:.3g})")
    rep.add("kappa=0 constant eta", "death, null case", dev, 1e-10 * math.sqrt(m0), True)

    ens = _ensemble(params, mu, epsilon, lattice, t_grid[-1], dt, obs, n_ensemble, stream.child("ensemble"), workers)
    roots = np.sqrt(ens.total_mass)
    rows = []
    for j, tj in enumerate(t_grid):
        m, lo, hi = mean_ci(roots[:, j])
        rows.append((tj, m, lo, hi))
        env = math.sqrt(m0)
        rep.add(f"Jensen envelope at t={tj:.6g}", "death, concavity bound", m, env, lo <= env,
                interval=(lo, hi))
    for j in range(len(t_grid) - 1):
        ok, z = one_sided_positive(roots[:, j] - roots[:, j + 1], level)
        rep.add(f"eta decreases {t_grid[j]:.6g} -> {t_grid[j + 1]:.6g}", "square root of mass is a supermartingale",
                z, float(_st.norm.ppf(level)), ok, p_value=float(_st.norm.sf(z)))
    rep.series["death_curve"] = (("t", "eta", "ci_low", "ci_high"), rows)
    return rep


def _dt_on_grid(dt: float, times) -> float:
    """Largest step not above ``dt`` that puts every time of a grid of multiples of ``times[0]`` on the step grid."""
    base = min(t for t in times if t > 0)
    k = max(1, int(math.ceil(base / dt - 1e-9)))
    step = base / k
    for t in times:
        r = t / step
        if abs(r - round(r)) > 1e-6:
            raise ValueError(f"time {t} is not a multiple of the base time {base}")
    return step


# -- singularity ----------------------------------------------------------------------


def _centers(lattice: LatticeSpec, spacing: float):
    # snapped to lattice points so every ball of one radius has the same cell count
    n = max(1, int(lattice.box_length // spacing))
    h = lattice.cell
    axis = [round((-lattice.box_length / 2 + (i + 0.5) * lattice.box_length / n) / h) * h for i in range(n)]
    return [tuple(p) for p in np.array(np.meshgrid(*([axis] * lattice.d), indexing="ij")).reshape(lattice.d, -1).T]


def singularity_diagnostic(
    params,
    epsilon_list,
    lattice: LatticeSpec,
    t: float,
    n_ensemble: int,
    rng=0,
    radii=(0.125, 0.25, 0.5),
    intensity: float = 1.0,
    dt: float | None = None,
    workers: int = 1,
    slope_tolerance: float = 0.3,
    level: float = 0.95,
    n_boot: int = 1000,
) -> ExperimentReport:
    """Small-ball mass ratio ``E[(u_t(B_r) / (c |B_r|))^{1/2}]`` and the second-moment exponent.

    ``|B_r|`` is the lattice volume of the ball (cell count times cell
    volume) rather than ``omega r^d``, so the kappa=0 ratio is exactly 1 at
    every radius and the trend reflects the noise only.

    Balls of every radius are placed at a grid of centers spaced ``2 max(r)``
    apart (translation invariance) and averaged per member. Assertions use
    the smallest epsilon; larger ones are reported as the epsilon trend.
    """
    radii = tuple(sorted(float(r) for r in radii))
    if radii[0] < 2 * lattice.cell:
        raise ResolutionError(f"radius {radii[0]} below 2 cells ({2 * lattice.cell})")
    stream = as_stream(rng, "singularity")
    d = params.d
    centers = _centers(lattice, 2.0 * radii[-1] + lattice.cell)
    balls = tuple(BallIndicator(c, r) for r in radii for c in centers)
    obs = ObservableConfig(times=(t,), balls=balls)
    mu = MeasureSpec.lebesgue(intensity)
    eps_sorted = sorted(float(e) for e in epsilon_list)
    rep = ExperimentReport("singularity", {
        "d": d, "kappa": params.kappa, "alpha": params.alpha, "t": t, "epsilons": eps_sorted, "radii": radii,
        "lattice": (lattice.d, lattice.n_per_side, lattice.box_length), "n_ensemble": n_ensemble,
        "n_centers": len(centers),
    })
    rep.seeds = {"master_seed": stream.master_seed, "experiment_id": stream.experiment_id}
    n_c = len(centers)

    def per_member(ens):
        masses = ens.ball_masses[:, 0, :].reshape(len(ens), len(radii), n_c)
        return masses

    step = dt if dt is not None else min(lattice.cell**2, eps_sorted[0] ** 2) / 4.0
    null = _ensemble(_null(params), mu, eps_sorted[0], lattice, t, step, obs, 1, stream.child("null"), 1)
    vol = np.array([BallIndicator(centers[0], r).on_lattice(lattice).sum() * lattice.cell_volume for r in radii])
    nm = per_member(null)[0]
    dev = float(np.max(np.abs(nm / (intensity * vol[:, None]) - 1.0)))
    _require(dev < 1e-10, f"kappa=0 ball masses deviate from intensity * volume by {dev:.3g}")
    rep.add("kappa=0 ball mass = intensity x volume", "density exists without noise", dev, 1e-10, True)

    rows = []
    trend = []
    for k, eps in enumerate(eps_sorted):
        step = dt if dt is not None else min(lattice.cell**2, eps**2) / 4.0
        ens = _ensemble(params, mu, eps, lattice, t, step, obs, n_ensemble, stream.child(f"eps-{k}"), workers)
        masses = per_member(ens)  # (members, radii, centers)
        ratio = np.sqrt(masses / (intensity * vol[None, :, None])).mean(axis=2)
        second = (masses**2).mean(axis=2)
        for i, r in enumerate(radii):
            m, lo, hi = mean_ci(ratio[:, i])
            rows.append((eps, r, m, lo, hi, float(second[:, i].mean())))
        trend.append((eps, ratio, second))
    eps0, ratio, second = trend[0]
    ok, z = one_sided_positive(ratio[:, -1] - ratio[:, 0], level)
    rep.add(f"ratio(r={radii[0]}) < ratio(r={radii[-1]})", "no absolutely continuous part",
            z, float(_st.norm.ppf(level)), ok, p_value=float(_st.norm.sf(z)))

    logr = np.log(np.array(radii))

    def slope(sec):
        return float(np.polyfit(logr, np.log(sec.mean(axis=0)), 1)[0])

    s_hat = slope(second)
    boot_rng = stream.child("bootstrap").generator(0)
    boots = [slope(second[boot_rng.integers(0, len(second), len(second))]) for _ in range(n_boot)]
    target = 2 * d - params.alpha
    rep.add("second-moment exponent", "dimension lower bound d - alpha", s_hat, slope_tolerance,
            abs(s_hat - target) <= slope_tolerance,
            interval=(float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5))),
            note=f"target 2d - alpha = {target:.6g}")
    pos = float((masses > 0).mean())
    rep.notes.append(f"ball-mass positivity frequency (descriptive, not asserted): {pos:.6g}")
    rep.series["singularity"] = (("epsilon", "r", "ratio", "ci_low", "ci_high", "second_moment"), rows)
    return rep


# -- supermartingale ------------------------------------------------------------------


def supermartingale_rho_check(
    params,
    rho: float,
    mu: MeasureSpec,
    epsilon: float,
    lattice: LatticeSpec,
    t_end: float,
    n_ensemble: int,
    rng=0,
    tilt: float = 0.01,
    n_times: int = 5,
    dt: float | None = None,
    workers: int = 1,
    level: float = 0.95,
) -> ExperimentReport:
    """Trend of ``E[S_t]`` for ``S = int int (r^2 + r_min^2)^{-rho/2} e^{-a|x|} e^{-a|y|} u u``.

    Inside ``alpha <= rho < d - 2 - alpha`` the mean must not increase; below
    the window, where ``rho^2 - (d-2) rho + kappa^2 > 0``, the experiment is a
    negative control and must detect an increase. ``r_min`` is 2 cells.
    """
    d, alpha = params.d, params.alpha
    if rho >= d - alpha:
        raise DomainError(f"rho={rho} >= d - alpha = {d - alpha}: S may be infinite")
    coef = rho * rho - (d - 2) * rho + params.kappa**2
    inside = alpha <= rho < d - 2 - alpha
    if not inside and coef <= 0:
        raise DomainError(f"rho={rho} is outside the window but the drift coefficient {coef:.4g} is not positive")
    stream = as_stream(rng, "supermartingale")
    if dt is None:
        dt = min(lattice.cell**2, epsilon**2) / 4.0
    n_steps = max(1, int(math.ceil(t_end / dt - 1e-9)))
    dt = t_end / n_steps
    ks = sorted({round(i * n_steps / (n_times - 1)) for i in range(n_times)})
    times = tuple(k * dt for k in ks)
    quad = QuadraticFunctional(rho, tilt, 2.0 * lattice.cell)
    obs = ObservableConfig(times=times, quadratic=(quad,))
    rep = ExperimentReport("supermartingale", {
        "d": d, "kappa": params.kappa, "alpha": alpha, "rho": rho, "coefficient": coef,
        "mode": "window" if inside else "negative-control", "tilt": tilt, "r_min": quad.r_min,
        "t_end": t_end, "epsilon": epsilon, "lattice": (lattice.d, lattice.n_per_side, lattice.box_length),
        "n_ensemble": n_ensemble,
    })
    rep.seeds = {"master_seed": stream.master_seed, "experiment_id": stream.experiment_id}
    if 0 < rho < d - 2:
        null = _ensemble(_null(params), mu, epsilon, lattice, t_end, dt, obs, 1, stream.child("null"), 1)
        s0 = null.quadratic[0, :, 0]
        _require(s0[-1] < s0[0], "kappa=0 S did not decrease")
        rep.add("kappa=0 S decreasing", "sign of rho^2 - (d-2) rho at kappa=0", float(s0[-1] - s0[0]), 0.0, True)

    ens = _ensemble(params, mu, epsilon, lattice, t_end, dt, obs, n_ensemble, stream.child("ensemble"), workers)
    S = ens.quadratic[:, :, 0]
    rows = []
    for j, tj in enumerate(ens.times):
        m, lo, hi = mean_ci(S[:, j])
        rows.append((tj, m, lo, hi))
    crit = float(_st.norm.ppf(level))
    if inside:
        # a supermartingale may be flat (rho = alpha); only a significant increase fails
        _, z = one_sided_positive(S[:, -1] - S[:, 0], level)
        rep.add("no significant increase over [0, t_end]", "supermartingale of the rho-energy", z, crit, z < crit,
                p_value=float(_st.norm.sf(z)))
        rep.notes.append(f"decrease z over [0, t_end] (descriptive): {-z:.6g}")
        for j in range(len(times) - 1):
            _, zj = one_sided_positive(S[:, j + 1] - S[:, j], level)
            rep.add(f"no significant increase {times[j]:.6g} -> {times[j + 1]:.6g}", "supermartingale of the rho-energy",
                    zj, crit, zj < crit)
    else:
        ok, z = one_sided_positive(S[:, -1] - S[:, 0], level)
        rep.add("E[S] increases over [0, t_end]", "negative control: drift coefficient positive", z, crit, ok,
                p_value=float(_st.norm.sf(z)))
    rep.series["rho_energy"] = (("t", "mean_S", "ci_low", "ci_high"), rows)
    return rep


# -- local extinction -----------------------------------------------------------------


def local_extinction_check(
    params,
    epsilon: float,
    lattice: LatticeSpec,
    t_grid,
    n_ensemble: int,
    rng=0,
    radius: float = 0.5,
    intensity: float = 1.0,
    theta_fraction: float = 0.5,
    dt: float | None = None,
    workers: int = 1,
    level: float = 0.95,
) -> ExperimentReport:
    """``P(u_t(A) > theta)`` for a ball ``A`` and ``theta`` a fraction of its initial mass."""
    t_grid = tuple(float(x) for x in t_grid)
    stream = as_stream(rng, "local-extinction")
    if dt is None:
        dt = min(lattice.cell**2, epsilon**2) / 4.0
    dt = _dt_on_grid(dt, t_grid)
    d = params.d
    ball = BallIndicator((0.0,) * d, radius)
    obs = ObservableConfig(times=t_grid, balls=(ball,))
    mu = MeasureSpec.lebesgue(intensity)
    mass0 = intensity * float(ball.on_lattice(lattice).sum()) * lattice.cell_volume
    theta = theta_fraction * mass0
    rep = ExperimentReport("local-extinction", {
        "d": d, "kappa": params.kappa, "t_grid": t_grid, "radius": radius, "theta": theta,
        "epsilon": epsilon, "lattice": (lattice.d, lattice.n_per_side, lattice.box_length), "n_ensemble": n_ensemble,
    })
    rep.seeds = {"master_seed": stream.master_seed, "experiment_id": stream.experiment_id}
    null = _ensemble(_null(params), mu, epsilon, lattice, t_grid[-1], dt, obs, 1, stream.child("null"), 1)
    dev = float(np.max(np.abs(null.ball_masses[0, :, 0] / mass0 - 1.0)))
    _require(dev < 1e-10, f"kappa=0 ball mass not constant ({dev:.3g})")
    rep.add("kappa=0 no extinction", "local extinction, null case", dev, 1e-10, True, note="u_t(A) constant")

    ens = _ensemble(params, mu, epsilon, lattice, t_grid[-1], dt, obs, n_ensemble, stream.child("ensemble"), workers)
    above = (ens.ball_masses[:, :, 0] > theta).astype(float)
    roots = np.sqrt(ens.total_mass)
    rows = []
    for j, tj in enumerate(t_grid):
        p = float(above[:, j].mean())
        se = math.sqrt(max(p * (1 - p), 0.0) / len(above))
        rows.append((tj, p, se, float(roots[:, j].mean())))
    ok, z = one_sided_positive(above[:, 0] - above[:, -1], level)
    rep.add(f"P(u_t(A) > theta) smaller at t={t_grid[-1]:.6g} than at t={t_grid[0]:.6g}", "local extinction",
            z, float(_st.norm.ppf(level)), ok, p_value=float(_st.norm.sf(z)))
    rep.notes.append("column eta_torus is E[u_t(1)^{1/2}] of the torus total mass, the dual death curve")
    rep.series["local_extinction"] = (("t", "p_above", "std_error", "eta_torus"), rows)
    return rep
