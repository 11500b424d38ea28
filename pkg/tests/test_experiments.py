import math

import numpy as np
import pytest

from pamlab import experiments as ex
from pamlab.functions import GaussianBump
from pamlab.lattice import LatticeSpec, ResolutionError
from pamlab.spde import MeasureSpec
from pamlab.special import DomainError, ModelParams, mollified_h
from pamlab.streams import SeedStream

LAT = LatticeSpec(3, 16, 4.0)
EPS = 0.6
P = ModelParams(3, 0.3)


def test_scaled_epsilon_maps_covariance():
    # h'(y) = c^2 h(c y): the unit-scale kernel at eps' is the rescaled kernel at eps
    c, eps = 0.5, 0.3
    eps_b = ex.scaled_epsilon(3, eps, c)
    assert eps_b == pytest.approx(eps * c**-2.5)
    for y in (0.5, 1.0, 2.0):
        assert mollified_h(3, eps_b, y) == pytest.approx(c**2 * mollified_h(3, eps, c * y), rel=1e-7)


def test_same_law_null_counts():
    def pair(i):
        g = SeedStream(i, "null").generator(0)
        return g.normal(size=200), g.normal(size=200)

    rej, allowed = ex.same_law_null(pair, repetitions=20)
    assert allowed == 2 and rej <= allowed

    def shifted(i):
        g = SeedStream(i, "alt").generator(0)
        return g.normal(size=200), g.normal(1.0, size=200)

    rej, _ = ex.same_law_null(shifted, repetitions=5)
    assert rej == 5


def test_report_roundtrip():
    rep = ex.ExperimentReport("x", {"a": np.float64(1.0), "v": (1, 2)})
    rep.add("n", "ref", 1.0, 2.0, True, interval=(0.5, 1.5))
    d = rep.to_dict()
    assert d["passed"] and d["parameters"] == {"a": 1.0, "v": [1, 2]}
    rep.add("m", "ref", 3.0, 2.0, False)
    assert not rep.passed


def test_duality_small():
    f = GaussianBump([0, 0, 0], 0.5)
    g = GaussianBump([0.3, 0, 0], 0.4)
    rep = ex.duality_experiment(P, f, g, 0.25, EPS, LAT, 60, rng=1, null_repetitions=2, null_ensemble=30)
    assert rep.assertions[0].passed
    assert len(rep.series["duality_samples"][1]) == 60
    names = [a.name for a in rep.assertions]
    assert "same-law null rejections" in names and "variance ratio" in names


def test_scaling_small_and_domain():
    lat = LatticeSpec(3, 16, 4.0)
    rep = ex.scaling_experiment(P, 0.3, LatticeSpec(3, 32, 4.0), 0.125, 0.5, 40, rng=2, null_repetitions=0)
    assert rep.assertions[0].passed
    with pytest.raises(ValueError):
        ex.scaling_experiment(P, EPS, lat, 0.25, 1.5, 4)
    with pytest.raises(ResolutionError):
        ex.scaling_experiment(P, EPS, lat, 0.25, 0.3, 4)


def test_total_mass_small():
    mu = MeasureSpec.atom_cloud([((0, 0, 0), 1.0)], 0.25)
    rep = ex.total_mass_martingale_check(P, mu, EPS, LAT, 0.5, 40, rng=3)
    assert rep.assertions[0].name.startswith("kappa=0")
    with pytest.raises(ValueError):
        ex.total_mass_martingale_check(P, MeasureSpec.lebesgue(), EPS, LAT, 0.5, 4)


def test_death_grid_handling():
    assert ex._dt_on_grid(0.3, (1.0, 2.0, 4.0)) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        ex._dt_on_grid(0.3, (1.0, 2.3))
    mu = MeasureSpec.uniform_ball((0, 0, 0), 1.0, 1.0, 0.25)
    with pytest.raises(ValueError):
        ex.death_diagnostic(P, mu, EPS, LAT, (2.0, 1.0), 4)
    rep = ex.death_diagnostic(ModelParams(3, 0.45), mu, EPS, LAT, (0.5, 1.0), 20, rng=4)
    assert any("Jensen" in a.name for a in rep.assertions)


def test_supermartingale_domain():
    mu = MeasureSpec.uniform_ball((0, 0, 0), 1.0, 1.0, 0.25)
    with pytest.raises(DomainError):
        ex.supermartingale_rho_check(P, 3.0, mu, EPS, LAT, 0.5, 4)
    # the drift coefficient (rho - alpha)(rho - (d-2-alpha)) is positive outside the window
    rep = ex.supermartingale_rho_check(P, 0.95, mu, EPS, LAT, 0.25, 4, rng=1)
    assert rep.parameters["mode"] == "negative-control" and rep.parameters["coefficient"] > 0
    rep = ex.supermartingale_rho_check(P, 0.5, mu, EPS, LAT, 0.25, 4, rng=1)
    assert rep.parameters["mode"] == "window"


def test_singularity_null_ratio_is_one():
    rep = ex.singularity_diagnostic(P, [EPS], LatticeSpec(3, 32, 4.0), 0.125, 6, rng=5, radii=(0.25, 0.5),
                                    n_boot=50)
    assert rep.assertions[0].statistic < 1e-10
    assert len(rep.series["singularity"][1]) == 2
    with pytest.raises(ResolutionError):
        ex.singularity_diagnostic(P, [EPS], LAT, 0.125, 2, radii=(0.1, 0.5))


def test_local_extinction_small():
    rep = ex.local_extinction_check(P, EPS, LAT, (0.5, 1.0), 10, rng=6)
    assert rep.assertions[0].passed
    assert len(rep.series["local_extinction"][1]) == 2
