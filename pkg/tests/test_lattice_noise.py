import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pamlab import lattice as lat_mod
from pamlab.lattice import LatticeField, LatticeSpec, ResolutionError, heat_flow, irfft, periodic_convolve, rfft
from pamlab.noise import (
    build_kernels,
    empirical_covariance,
    read_snapshot,
    sample_noise_increment,
    write_snapshot,
)
from pamlab.special import ModelParams, mollified_h
from pamlab.streams import SeedStream

P = ModelParams(3, 0.3)


def test_lattice_geometry():
    lat = LatticeSpec(3, 16, 4.0)
    assert lat.cell == 0.25 and lat.cell_volume == 0.25**3
    ax = lat.axis()
    assert ax[0] == 0.0 and ax.min() == -2.0 and ax.max() == 1.75
    assert lat.radius([1.75, 0, 0])[(8, 0, 0)] == pytest.approx(0.25)  # wraps to x = -2
    with pytest.raises(ValueError):
        LatticeSpec(3, 12, 1.0)
    with pytest.raises(ValueError):
        LatticeSpec(3, 16, -1.0)


def test_fft_roundtrip_and_backend():
    lat = LatticeSpec(3, 16, 4.0)
    a = np.random.default_rng(0).random(lat.shape)
    assert np.allclose(irfft(rfft(a), lat.shape), a, atol=1e-14)
    assert lat_mod.FFT_BACKEND in ("fftw", "scipy")
    import scipy.fft as sfft

    assert np.allclose(rfft(a), sfft.rfftn(a), atol=1e-12)


def test_heat_flow_semigroup_and_mass():
    lat = LatticeSpec(3, 16, 4.0)
    a = np.random.default_rng(1).random(lat.shape)
    b = heat_flow(heat_flow(a, lat, 0.1), lat, 0.2)
    c = heat_flow(a, lat, 0.3)
    assert np.allclose(b, c, atol=1e-13)
    assert c.sum() == pytest.approx(a.sum(), rel=1e-13)
    delta = np.zeros(lat.shape)
    delta[0, 0, 0] = 1.0
    assert heat_flow(delta, lat, 0.5).min() > -1e-15  # positive kernel


def test_heat_variance_matches_time():
    lat = LatticeSpec(1, 256, 32.0)
    delta = np.zeros(lat.shape)
    delta[0] = 1.0 / lat.cell
    u = heat_flow(delta, lat, 1.0)
    x = lat.axis()
    assert float(np.sum(x * x * u) * lat.cell) == pytest.approx(1.0, rel=1e-10)


def test_periodic_convolve_constant():
    lat = LatticeSpec(2, 16, 2.0)
    a = np.ones(lat.shape)
    b = np.random.default_rng(2).random(lat.shape)
    assert np.allclose(periodic_convolve(a, b, lat), b.sum() * lat.cell_volume)


def test_resolution_error():
    with pytest.raises(ResolutionError):
        build_kernels(P, 0.2, LatticeSpec(3, 16, 4.0))


def test_kernels_h_matches_continuum():
    lat = LatticeSpec(3, 64, 6.4)
    k = build_kernels(P, 0.4, lat)
    for j in (2, 4, 8):
        assert k.h_at((j, 0, 0)) == pytest.approx(mollified_h(3, 0.4, j * lat.cell), rel=0.03)
    assert k.h0 == k.h_grid[0, 0, 0]
    g, h = k
    assert g.epsilon == h.epsilon == 0.4


def test_noise_covariance_matches_h():
    lat = LatticeSpec(3, 16, 4.0)
    k = build_kernels(P, 0.6, lat)
    dt = 0.01
    stream = SeedStream(3, "noise")
    incs = (sample_noise_increment(k, dt, stream.field_generator(i)) for i in range(400))
    lags = [(0, 0, 0), (1, 0, 0), (2, 1, 0), (4, 0, 0)]
    rows = empirical_covariance(incs, lags)
    for row in rows:
        ref = dt * k.h_at(row.lag)
        assert abs(row.estimate - ref) < 4 * row.std_error
    with pytest.raises(ValueError):
        empirical_covariance([], lags)
    with pytest.raises(ValueError):
        sample_noise_increment(k, 0.0, stream.generator(0))


def test_snapshot_roundtrip(tmp_path):
    lat = LatticeSpec(3, 8, 2.0)
    f = LatticeField(lat, np.random.default_rng(0).random(lat.shape))
    path = tmp_path / "s.bin"
    write_snapshot(path, f, 0.01, 0.5)
    g, dt, eps = read_snapshot(path)
    assert np.array_equal(g.values, f.values) and g.lattice == lat and (dt, eps) == (0.01, 0.5)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_snapshot(path)


@given(st.integers(0, 3), st.sampled_from([8, 16]))
def test_lattice_field_integrals(seed, n):
    lat = LatticeSpec(2, n, 3.0)
    v = np.random.default_rng(seed).random(lat.shape)
    f = LatticeField(lat, v)
    assert f.total_mass() == pytest.approx(f.integrate(np.ones(lat.shape)))
    assert f.copy().values is not f.values
