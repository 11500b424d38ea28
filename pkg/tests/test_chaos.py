import math

import numpy as np
import pytest

from pamlab.chaos import (
    MAX_ORDER,
    QuadratureError,
    chaos_l2_norm_quadrature,
    chaos_terms,
    partial_sum_solution,
)
from pamlab.functions import GaussianBump
from pamlab.lattice import LatticeSpec
from pamlab.moments import DiscreteMeasure
from pamlab.spde import MeasureSpec, ObservableConfig, simulate
from pamlab.special import ModelParams

LAT = LatticeSpec(3, 16, 4.0)
EPS = 0.6
DT = LAT.cell**2 / 2
MU = MeasureSpec.atom_cloud([((0, 0, 0), 1.0)], delta=0.25)
F = GaussianBump([0.3, 0, 0], 0.5)
OBS = ObservableConfig(times=(0.25, 0.5), tests=(F,))


def test_order_bounds():
    p = ModelParams(3, 0.3)
    with pytest.raises(ValueError):
        chaos_terms(p, MU, EPS, LAT, 0.5, DT, -1, OBS)
    with pytest.raises(ValueError):
        chaos_terms(p, MU, EPS, LAT, 0.5, DT, MAX_ORDER + 1, OBS)


def test_orders_scale_as_kappa_power():
    a = chaos_terms(ModelParams(3, 0.1), MU, EPS, LAT, 0.5, DT, 3, OBS, rng=2)
    b = chaos_terms(ModelParams(3, 0.3), MU, EPS, LAT, 0.5, DT, 3, OBS, rng=2)
    for n in range(4):
        assert np.allclose(b.orders[:, n], 3.0**n * a.orders[:, n], rtol=1e-10, atol=1e-18)


def test_kappa_zero_orders_vanish():
    p0 = ModelParams.unchecked(3, 0.0)
    run = chaos_terms(p0, MU, EPS, LAT, 0.5, DT, 2, OBS, rng=0)
    assert np.all(run.orders[:, 1:] == 0.0)
    assert np.allclose(run.orders[:, 0], run.spde, rtol=1e-12)


def test_partial_sums_converge_to_paired_solution():
    p = ModelParams(3, 0.3)
    ms = np.zeros(5)
    scale = 0.0
    for member in range(6):
        run = chaos_terms(p, MU, EPS, LAT, 0.5, DT, 4, OBS, rng=5, member=member)
        ms += [float(np.mean((partial_sum_solution(run, n) - run.spde) ** 2)) for n in range(5)]
        scale += float(np.mean(run.spde**2))
    assert ms[1] < 0.05 * ms[0] and ms[2] < ms[1]
    # floor: the summed orders follow the linear multiplier 1 + kappa dF, the
    # solution the exponential one
    assert ms[4] < 1e-4 * scale


def test_paired_with_separate_simulate():
    p = ModelParams(3, 0.3)
    run = chaos_terms(p, MU, EPS, LAT, 0.5, DT, 2, OBS, rng=5, member=3)
    sim = simulate(p, MU, EPS, LAT, 0.5, DT, OBS, rng=5, member=3)
    assert np.allclose(run.spde, sim.test_integrals, rtol=1e-12)
    partial_sum_solution(run, 2, spde=sim)
    other = simulate(p, MU, EPS, LAT, 0.5, DT, OBS, rng=5, member=4)
    with pytest.raises(ValueError):
        partial_sum_solution(run, 2, spde=other)
    with pytest.raises(ValueError):
        partial_sum_solution(run, 3)


def test_chaos_term_fields():
    p = ModelParams(3, 0.3)
    run = chaos_terms(p, MU, EPS, LAT, 0.5, DT, 2, OBS, rng=1, keep_fields=True)
    u2 = partial_sum_solution(run.final_terms, 2)
    w = F.on_lattice(LAT)
    assert u2.integrate(w) == pytest.approx(partial_sum_solution(run, 2)[-1, 0], rel=1e-10)
    bad = [run.final_terms[0], type(run.final_terms[1])(1, run.final_terms[1].field, 0.1)]
    with pytest.raises(ValueError):
        partial_sum_solution(bad, 1)


def test_martingale_observable_at_horizon():
    p = ModelParams(3, 0.3)
    obs = ObservableConfig(times=(0.0, 0.25, 0.5), tests=(F,))
    run = chaos_terms(p, MU, EPS, LAT, 0.5, DT, 1, obs, rng=1, martingale_horizon=0.5)
    assert np.allclose(run.martingale[-1], run.orders[-1], rtol=1e-10)
    assert run.martingale[0, 1, 0] == 0.0


# deterministic second moments ------------------------------------------------

P4 = ModelParams(3, 0.4)
ATOMS = DiscreteMeasure.from_atoms([((0, 0, 0), 1.0), ((0.4, 0, 0), 0.5)])


def test_quadrature_order_zero_is_first_moment_squared():
    from pamlab.moments import first_moment_exact

    v = chaos_l2_norm_quadrature(P4, ATOMS, F, 0.5, 0, 0.1, delta=0.2, grid_n=32)
    assert v == pytest.approx(first_moment_exact(ATOMS, F, 0.7) ** 2, rel=1e-8)


def test_quadrature_kappa_scaling():
    a = chaos_l2_norm_quadrature(ModelParams(3, 0.2), ATOMS, F, 0.5, 1, 0.1, delta=0.2, grid_n=32)
    b = chaos_l2_norm_quadrature(ModelParams(3, 0.4), ATOMS, F, 0.5, 1, 0.1, delta=0.2, grid_n=32)
    assert a / b == pytest.approx(0.25, rel=1e-12)
    assert a > 0


def test_quadrature_lebesgue_order_zero():
    f = GaussianBump([0, 0, 0], 0.4)
    v = chaos_l2_norm_quadrature(P4, DiscreteMeasure.lebesgue(2.0), f, 0.5, 0, 0.1, grid_n=128)
    assert v == pytest.approx((2.0 * f.integral()) ** 2, rel=1e-8)


def test_quadrature_validation():
    with pytest.raises(ValueError):
        chaos_l2_norm_quadrature(P4, ATOMS, F, 0.5, 3, 0.1)
    with pytest.raises(NotImplementedError):
        chaos_l2_norm_quadrature(P4, DiscreteMeasure.lebesgue_box((0, 0, 0), (1, 1, 1)), F, 0.5, 1, 0.1)
    with pytest.raises(QuadratureError):
        chaos_l2_norm_quadrature(P4, ATOMS, F, 0.5, 1, 0.1, delta=0.2, grid_n=8, rel_tol=1e-12)


def test_quadrature_grid_convergence():
    a = chaos_l2_norm_quadrature(P4, ATOMS, F, 0.5, 1, 0.3, delta=0.2, grid_n=32)
    b = chaos_l2_norm_quadrature(P4, ATOMS, F, 0.5, 1, 0.3, delta=0.2, grid_n=64)
    assert abs(a / b - 1) < 0.02


def test_quadrature_order_two_below_order_one():
    one = chaos_l2_norm_quadrature(P4, ATOMS, F, 0.5, 1, 0.3, delta=0.2, grid_n=32, levels=3, nodes=4)
    two = chaos_l2_norm_quadrature(P4, ATOMS, F, 0.5, 2, 0.3, delta=0.2, grid_n=32, levels=3, nodes=4)
    assert 0 < two < one
