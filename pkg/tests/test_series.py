import numpy as np
import pytest

from noiseavalanche import moments
from noiseavalanche import montecarlo as mc
from noiseavalanche.errors import GridMismatch
from noiseavalanche.model import ChainSpec, InitialState, TimeGrid
from noiseavalanche.series import ObservableSeries, compare, emit_series, read_series


def small_estimate(seed=1, convention="master"):
    noise = mc.noise_for_rate(1.0, 1.0, 0.05, [0.0], convention)
    return mc.estimate(noise, InitialState([1.0, 0.0]), TimeGrid(1.0, 20), 400, base_seed=seed)


def test_round_trip_is_bitwise(tmp_path, rng):
    times = np.arange(5) * 0.1
    s = ObservableSeries(times, rng.random((5, 3)), rng.random((5, 3)) * np.pi, rng.random((5, 3)) / 7, "montecarlo")
    back = read_series(emit_series(s, tmp_path / "montecarlo.csv"))
    for f in ("times", "n", "g2", "g2_se"):
        assert np.array_equal(getattr(back, f), getattr(s, f))


def test_nan_round_trip(tmp_path):
    s = ObservableSeries(np.array([0.0, 1.0]), np.array([[1.0, 0.0], [0.5, 0.5]]), np.array([[1.0, np.nan], [1.0, 2.0]]))
    back = read_series(emit_series(s, tmp_path / "a.csv"))
    assert np.isnan(back.g2[0, 1]) and back.g2_se is None


def test_empty_grid_writes_header_only(tmp_path):
    s = ObservableSeries(np.empty(0), np.empty((0, 2)), np.empty((0, 2)))
    path = emit_series(s, tmp_path / "e.csv")
    assert path.read_text() == "t,n_1,n_2,g2_1,g2_2\n"


def test_two_mode_columns():
    s = ObservableSeries.from_estimate(small_estimate())
    assert len(s.header()) == 1 + 2 + 2 + 2
    assert s.header()[-1] == "g2_se_2"


def test_compare_self_passes():
    s = ObservableSeries.from_estimate(small_estimate())
    report = compare(s, s)
    assert report.passed
    assert np.all(report.z[~np.isnan(report.z)] == 0)


def test_compare_grid_mismatch():
    a = ObservableSeries.from_estimate(small_estimate())
    b = ObservableSeries(a.times * 2, a.n, a.g2)
    with pytest.raises(GridMismatch):
        compare(a, b)
    with pytest.raises(GridMismatch):
        compare(a, ObservableSeries(a.times, a.n[:, :1], a.g2[:, :1]))


def moments_series(spec, init, grid):
    system = moments.chain_system(spec)
    phi0 = moments.init_moments(system, init)
    ser = moments.integrate(system, phi0, grid)
    return ObservableSeries.from_counts(
        grid.times, ser.photon_numbers(2), ser.pair_correlators(2), "moments",
        initial=moments.initial_g2_limit(system, phi0, 2),
    )


def unhalved_spec(noise):
    # sigma^2 (1 +- nu^2) dt without the factor 1/2: twice the true rates
    s2, nu2, dt = noise.sigma**2, noise.ellipticity**2, noise.dt
    return ChainSpec(2, noise.mean_couplings, [s2 * (1 + nu2) * dt], [s2 * (1 - nu2) * dt])


@pytest.mark.parametrize("nu, wrong", [(0.0, "sigma2dt"), (1.0, "unhalved")])
def test_wrong_rate_mapping_is_caught(nu, wrong):
    grid = TimeGrid(3.0, 300)
    init = InitialState([1.0, 0.0])
    noise = mc.noise_for_rate(1.0, nu, grid.dt, [0.0])
    est = ObservableSeries.from_estimate(mc.estimate(noise, init, grid, 3000, base_seed=4))
    assert compare(est, moments_series(mc.chain_spec_of_noise(noise), init, grid)).passed
    bad = mc.chain_spec_of_noise(noise, "sigma2dt") if wrong == "sigma2dt" else unhalved_spec(noise)
    assert not compare(est, moments_series(bad, init, grid)).passed
