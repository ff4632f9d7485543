import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from mnpcomm import analytic, oracles
from mnpcomm.analytic import SeriesControl, SeriesNotConverged
from mnpcomm.channel import ChannelGeometry, Scenario, TransportParams

SCENARIO = Scenario()
GEOM = SCENARIO.geometry
NOMINAL = SCENARIO.transport()
H = GEOM.height

# Crank-Nicolson reference (4001 nodes, dt <= 0.5 ms), nominal transport, release at z0 = h
ORACLE_Z = np.array([0.0, 1.0, 2.5, 5.0, 7.5, 10.0]) * 1e-6
ORACLE_PDF = {
    0.5: [32.41, 117.81, 1605.44, 39353.13, 218136.02, 246867.58],
    2.0: [87189.14, 72922.67, 82597.5, 117754.05, 119417.36, 74113.59],
    10.0: [326270.04, 238049.05, 148879.67, 68825.1, 32065.65, 14771.61],
}


def normalization(t, geom, tp, series=SeriesControl()):
    val, _ = integrate.quad(
        lambda z: analytic.pdf_z(z, t, geom, tp, series), 0.0, geom.height,
        points=[geom.release_height], limit=500, epsabs=1e-13,
    )
    return val


def test_nominal_transport_values():
    assert NOMINAL.diffusion == pytest.approx(4.308570843625142e-12, rel=1e-12)
    assert NOMINAL.drift == pytest.approx(1.3616557734204792e-6, rel=1e-12)


@pytest.mark.parametrize("t", sorted(ORACLE_PDF))
def test_series_matches_frozen_finite_difference(t):
    got = analytic.pdf_z(ORACLE_Z, t, GEOM, NOMINAL)
    assert np.max(np.abs(got - ORACLE_PDF[t])) < 1e-3 / H


def test_series_matches_live_finite_difference():
    z = np.linspace(0, H, 200)
    ref = oracles.crank_nicolson_pdf(z, [2.0], H, NOMINAL.diffusion, NOMINAL.drift, H, n_nodes=1001)
    assert np.max(np.abs(analytic.pdf_z(z, 2.0, GEOM, NOMINAL) - ref[0])) < 1e-3 / H


@pytest.mark.parametrize("t", [0.005, 0.05, 0.5, 5.0])
@pytest.mark.parametrize("z0_frac", [0.0, 0.3, 1.0])
def test_zero_drift_matches_cosine_series(t, z0_frac):
    geom = ChannelGeometry(release_height=z0_frac * H)
    tp = TransportParams(NOMINAL.diffusion)
    z = np.linspace(0, H, 101)
    ref = oracles.neumann_cosine_pdf(z, t, H, tp.diffusion, geom.release_height)
    assert np.max(np.abs(analytic.pdf_z(z, t, geom, tp) - ref)) * H < 1e-9


@pytest.mark.parametrize("t", np.logspace(-3, 2, 11))
def test_pdf_z_normalized_and_zero_flux(t):
    assert abs(normalization(t, GEOM, NOMINAL, SeriesControl(200)) - 1) < 1e-6
    assert analytic.wall_flux_residual(t, GEOM, NOMINAL, SeriesControl(200)) < 1e-3


def test_pdf_z_tends_to_equilibrium():
    z = np.linspace(0, H, 51)
    late = analytic.pdf_z(z, 200.0, GEOM, NOMINAL)
    np.testing.assert_allclose(late, analytic.equilibrium_pdf_z(z, GEOM, NOMINAL), rtol=1e-9)


def test_short_time_is_gaussian_away_from_walls():
    geom = ChannelGeometry(release_height=H / 2)
    t = 1e-3
    z = np.linspace(0.4 * H, 0.6 * H, 41)
    var = 2 * NOMINAL.diffusion * t
    mean = H / 2 - NOMINAL.drift * t
    gauss = np.exp(-((z - mean) ** 2) / (2 * var)) / np.sqrt(2 * np.pi * var)
    np.testing.assert_allclose(analytic.pdf_z(z, t, geom, NOMINAL), gauss, rtol=1e-6, atol=1e-6 / H)


def test_small_time_fallback_agrees_with_series():
    z = np.linspace(0.8 * H, H, 50)
    wide = analytic.pdf_z(z, 1e-3, GEOM, NOMINAL, SeriesControl(n_terms=2000))
    narrow = analytic.pdf_z(z, 1e-3, GEOM, NOMINAL, SeriesControl(n_terms=20))
    np.testing.assert_allclose(narrow, wide, rtol=1e-9, atol=1e-9 / H)


def test_not_converged_raises_outside_fallback_range():
    with pytest.raises(SeriesNotConverged) as info:
        analytic.pdf_z(0.5 * H, 0.01, GEOM, NOMINAL, SeriesControl(n_terms=5))
    assert info.value.n_terms == 5
    assert info.value.bound > info.value.tolerance
    with pytest.raises(SeriesNotConverged):
        analytic.prob_obs_z(0.01, GEOM, NOMINAL, SeriesControl(n_terms=5))


def test_tail_bound_decreases_with_terms():
    bounds = [analytic.tail_bound(n, 0.01, NOMINAL, GEOM) for n in (10, 50, 100, 200)]
    assert all(a > b for a, b in zip(bounds, bounds[1:]))
    n = analytic.terms_needed(0.01, NOMINAL.diffusion, NOMINAL.drift, GEOM, 1e-9)
    assert analytic.tail_bound(int(n), 0.01, NOMINAL, GEOM) <= 1e-9
    assert analytic.tail_bound(int(n) - 1, 0.01, NOMINAL, GEOM) > 1e-9


def test_pdf_x_normalized_and_prob_obs_x():
    t = 2.0
    val, _ = integrate.quad(lambda x: analytic.pdf_x(x, t, GEOM, NOMINAL), -1e-3, 1e-3, points=[0.0])
    assert val == pytest.approx(1.0, abs=1e-9)
    half = GEOM.receiver_width / 2
    inside, _ = integrate.quad(lambda x: analytic.pdf_x(x, t, GEOM, NOMINAL), -half, half)
    assert analytic.prob_obs_x(t, GEOM, NOMINAL) == pytest.approx(inside, abs=1e-9)
    assert analytic.prob_obs_x(t, GEOM, NOMINAL) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(t=st.floats(0.5, 4.0), d_scale=st.floats(0.3, 3.0), vf=st.floats(1e-4, 1e-3))
def test_prob_obs_x_equals_quadrature(t, d_scale, vf):
    tp = TransportParams(NOMINAL.diffusion * d_scale, vf)
    half = GEOM.receiver_width / 2
    inside, _ = integrate.quad(lambda x: analytic.pdf_x(x, t, GEOM, tp), -half, half, epsabs=1e-12)
    assert analytic.prob_obs_x(t, GEOM, tp) == pytest.approx(inside, abs=1e-9)


def test_time_must_be_positive():
    with pytest.raises(ValueError):
        analytic.pdf_x(0.0, 0.0, GEOM, NOMINAL)
    with pytest.raises(ValueError):
        analytic.prob_obs_z(-1.0, GEOM, NOMINAL)


def test_pdf_z_rejects_heights_outside_channel():
    with pytest.raises(ValueError):
        analytic.pdf_z(1.1 * H, 1.0, GEOM, NOMINAL)


def test_equilibrium_pdf_normalized_and_limits():
    val, _ = integrate.quad(lambda z: analytic.equilibrium_pdf_z(z, GEOM, NOMINAL), 0, H)
    assert val == pytest.approx(1.0, abs=1e-9)
    still = TransportParams(NOMINAL.diffusion)
    assert analytic.equilibrium_pdf_z(0.3 * H, GEOM, still) == 1 / H
    assert analytic.equilibrium_prob_obs_z(GEOM, still) == pytest.approx(0.1, abs=1e-12)
    assert analytic.equilibrium_prob_obs_z(GEOM, NOMINAL) == pytest.approx(0.2830, abs=1e-4)


def test_equilibrium_prob_monotone_in_drift():
    probs = [
        analytic.equilibrium_prob_obs_z(GEOM, TransportParams(NOMINAL.diffusion, drift=v))
        for v in np.logspace(-12, -2, 200)
    ]
    assert np.all(np.diff(probs) >= 0)
    assert probs[-1] == 1.0


def test_prob_obs_z_is_probability_and_converges():
    t = np.logspace(-3, 2, 40)
    p = analytic.prob_obs_z(t, GEOM, NOMINAL)
    assert np.all((p >= 0) & (p <= 1))
    assert p[-1] == pytest.approx(analytic.equilibrium_prob_obs_z(GEOM, NOMINAL), abs=1e-12)
    assert analytic.prob_obs_z(2.0, GEOM, NOMINAL) == pytest.approx(0.07804, abs=1e-4)


def test_prob_obs_z_matches_integrated_density():
    for t in (0.01, 0.5, 3.0):
        val, _ = integrate.quad(lambda z: analytic.pdf_z(z, t, GEOM, NOMINAL), 0, GEOM.receiver_height)
        assert analytic.prob_obs_z(t, GEOM, NOMINAL) == pytest.approx(val, abs=1e-9)


def test_prob_obs_is_product():
    t = np.array([1.9, 2.0, 2.1])
    expected = analytic.prob_obs_x(t, GEOM, NOMINAL) * analytic.prob_obs_z(t, GEOM, NOMINAL)
    np.testing.assert_allclose(analytic.prob_obs(t, GEOM, NOMINAL), expected, rtol=1e-14)


def test_impulse_response_zero_particles_and_no_spread():
    t = np.array([1.9, 2.0])
    assert np.all(analytic.impulse_response(t, SCENARIO, 0).expected == 0)
    fixed = SCENARIO.with_sizes(sd_radius=0.0)
    ir = analytic.impulse_response(t, fixed, 1000)
    np.testing.assert_array_equal(ir.expected, 1000 * analytic.prob_obs(t, GEOM, NOMINAL))


def test_impulse_response_sums_over_given_radii():
    t = np.array([1.95, 2.05])
    radii = np.array([40e-9, 50e-9, 50e-9, 65e-9])
    ir = analytic.impulse_response(t, SCENARIO, 4, radii=radii)
    manual = sum(analytic.prob_obs(t, GEOM, SCENARIO.transport(r)) for r in radii)
    np.testing.assert_allclose(ir.expected, manual, rtol=1e-9)
    assert ir.at(2.05) == pytest.approx(manual[1], rel=1e-12)
    with pytest.raises(KeyError):
        ir.at(2.0)


def test_impulse_response_requires_rng_for_sampling():
    with pytest.raises(ValueError):
        analytic.impulse_response([2.0], SCENARIO, 10)


def test_stronger_gradient_raises_peak():
    t = np.linspace(1.9, 2.1, 21)
    peaks = [
        analytic.impulse_response(t, SCENARIO.with_gradient(g).with_sizes(sd_radius=0.0), 1000).expected.max()
        for g in (0.0, 5.0, 20.0)
    ]
    assert peaks[0] < peaks[1] < peaks[2]


def test_equilibrium_approximation_overestimates_at_peak():
    t = np.linspace(1.8, 2.2, 201)
    rng = np.random.default_rng(3)
    radii = np.exp(rng.normal(np.log(50e-9), 0.2, 1000))
    ir = analytic.impulse_response(t, SCENARIO, 1000, radii=radii)
    eq = analytic.impulse_response(t, SCENARIO, 1000, radii=radii, equilibrium_approx=True)
    k = np.argmax(ir.expected)
    assert eq.expected[k] >= ir.expected[k]
