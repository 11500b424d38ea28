import math

import numpy as np
import pytest

from pamlab.functions import BallIndicator, GaussianBump, SmoothBall
from pamlab.lattice import LatticeField, LatticeSpec, ResolutionError, heat_flow
from pamlab.moments import DiscreteMeasure, first_moment_exact
from pamlab.noise import build_kernels, sample_noise_increment
from pamlab.spde import (
    MeasureSpec,
    ObservableConfig,
    QuadraticFunctional,
    init_condition,
    run_ensemble,
    simulate,
    step,
)
from pamlab.special import ModelParams
from pamlab.streams import SeedStream

P = ModelParams(3, 0.3)
LAT = LatticeSpec(3, 16, 4.0)
EPS = 0.6
DT = LAT.cell**2 / 2


def test_init_condition_masses():
    atoms = MeasureSpec.atom_cloud([((0, 0, 0), 1.0), ((1, 0, 0), 2.0)], delta=0.25)
    assert init_condition(atoms, LAT).total_mass() == pytest.approx(3.0, rel=1e-10)
    ball = MeasureSpec.uniform_ball((0, 0, 0), 1.0, 2.0, delta=0.05)
    assert init_condition(ball, LAT).total_mass() == pytest.approx(2.0, rel=0.02)
    leb = MeasureSpec.lebesgue(0.5)
    assert init_condition(leb, LAT).total_mass() == pytest.approx(0.5 * 64.0)
    dens = MeasureSpec.from_density(GaussianBump([0, 0, 0], 0.5))
    # tails beyond the half-width 4 sigma of the torus are cut off
    assert init_condition(dens, LAT).total_mass() == pytest.approx(GaussianBump([0, 0, 0], 0.5).integral(), rel=1e-3)


def test_measure_validation():
    with pytest.raises(ValueError):
        MeasureSpec.atom_cloud([((0, 0, 0), 1.0)], delta=0.0)
    with pytest.raises(ValueError):
        MeasureSpec.atom_cloud([((0, 0, 0), -1.0)], delta=0.1)
    with pytest.raises(ValueError):
        MeasureSpec("weird", 0.1)
    with pytest.raises(ResolutionError):
        init_condition(MeasureSpec.atom_cloud([((0, 0, 0), 1.0)], delta=0.01), LAT)
    assert MeasureSpec.lebesgue().total_mass == math.inf


def test_kappa_zero_is_heat_flow():
    p0 = ModelParams.unchecked(3, 0.0)
    mu = MeasureSpec.atom_cloud([((0.3, 0, 0), 1.0)], delta=0.25)
    f = GaussianBump([0, 0, 0], 0.5)
    obs = ObservableConfig(times=(0.5,), tests=(f,))
    out = simulate(p0, mu, EPS, LAT, 0.5, DT, obs, rng=1)
    u = heat_flow(init_condition(mu, LAT).values, LAT, 0.5)
    ref = LatticeField(LAT, u).integrate(f.on_lattice(LAT))
    assert out.test_integrals[0, 0] == pytest.approx(ref, rel=1e-12)


def test_step_matches_merged_simulate():
    mu = MeasureSpec.atom_cloud([((0, 0, 0), 1.0)], delta=0.25)
    f = SmoothBall([0, 0, 0], 1.0, 0.5)
    t_end = 8 * DT
    obs = ObservableConfig(times=(t_end,), tests=(f,))
    out = simulate(P, mu, EPS, LAT, t_end, DT, obs, rng=SeedStream(5, "simulate"), member=2)
    k = build_kernels(P, EPS, LAT)
    gen = SeedStream(5, "simulate").field_generator(2)
    u = init_condition(mu, LAT)
    for _ in range(8):
        u = step(u, sample_noise_increment(k, DT, gen), P.kappa, DT)
    assert out.test_integrals[0, 0] == pytest.approx(u.integrate(f.on_lattice(LAT)), rel=1e-10)
    assert out.total_mass[0] == pytest.approx(u.total_mass(), rel=1e-10)


def test_step_validates_increment():
    k = build_kernels(P, EPS, LAT)
    inc = sample_noise_increment(k, DT, np.random.default_rng(0))
    u = init_condition(MeasureSpec.lebesgue(1.0), LAT)
    with pytest.raises(ValueError):
        step(u, inc, P.kappa, 2 * DT)


def test_positivity_and_recorded_times():
    mu = MeasureSpec.lebesgue(1.0)
    obs = ObservableConfig(times=(0.0, 0.25, 0.5), balls=(BallIndicator([0, 0, 0], 0.5),), track_qv=True)
    out = simulate(P, mu, EPS, LAT, 0.5, DT, obs, rng=3)
    assert out.min_value >= 0.0
    assert np.allclose(out.times, [0.0, 0.25, 0.5])
    assert out.total_mass[0] == pytest.approx(64.0)
    assert out.qv[0] == 0.0 and np.all(np.diff(out.qv) >= 0) and np.all(np.diff(out.bracket) > 0)
    assert out.meta["seed"] == (3, "simulate", 0)


def test_grid_and_dt_checks():
    mu = MeasureSpec.lebesgue(1.0)
    with pytest.raises(ValueError):
        simulate(P, mu, EPS, LAT, 0.5, DT, ObservableConfig(times=(0.01,)), rng=0)
    with pytest.raises(ResolutionError):
        simulate(P, mu, EPS, LAT, 0.5, LAT.cell**2, rng=0)


def test_quadratic_functional_deterministic_case():
    p0 = ModelParams.unchecked(3, 0.0)
    q = QuadraticFunctional(rho=0.5, tilt=0.0, r_min=0.5)
    obs = ObservableConfig(times=(0.0,), quadratic=(q,))
    out = simulate(p0, MeasureSpec.lebesgue(1.0), EPS, LAT, DT, DT, obs, rng=0)
    r = LAT.radius()
    ref = 64.0 * float(np.sum((r * r + 0.25) ** -0.25)) * LAT.cell_volume
    assert out.quadratic[0, 0] == pytest.approx(ref, rel=1e-12)


def test_ensemble_worker_invariance_and_mean():
    mu = MeasureSpec.atom_cloud([((0, 0, 0), 1.0)], delta=0.25)
    f = GaussianBump([0.3, 0, 0], 0.5)
    obs = ObservableConfig(times=(0.5,), tests=(f,))
    a = run_ensemble(P, mu, EPS, LAT, 0.5, DT, obs, 40, rng=11, workers=1)
    b = run_ensemble(P, mu, EPS, LAT, 0.5, DT, obs, 40, rng=11, workers=2)
    assert np.array_equal(a.test_integrals, b.test_integrals)
    assert len(a) == 40
    vals = a.test_integrals[:, 0, 0]
    ref = first_moment_exact(DiscreteMeasure.from_atoms([((0, 0, 0), 1.0)]), f, 0.75)
    assert abs(vals.mean() - ref) < 4 * vals.std(ddof=1) / math.sqrt(vals.size) + 0.01 * ref
