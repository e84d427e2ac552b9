import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmaisac.channel import (PropagationMatrix, SingularityError, build_channels, build_propagation_matrix,
                             effective_channel, received_snr, steering_jacobian, steering_vector,
                             synthesize_rx_signal, unit_symbols)
from dmaisac.scenario import PanelConfig, SphericalPoint, default_panel, default_scenario, make_scenario

from conftest import random_weights


def random_points(n, seed, r_range=(0.5, 50.0)):
    rng = np.random.default_rng(seed)
    r = np.exp(rng.uniform(np.log(r_range[0]), np.log(r_range[1]), n))
    th = rng.uniform(0.2, np.pi - 0.2, n)
    ph = rng.uniform(-np.pi + 0.2, np.pi - 0.2, n)
    return np.stack([r, th, ph], axis=1)


def fd_jacobian(panel, p, b=0.0):
    cols = []
    for k in range(3):
        h = 1e-6 * max(p[0], 1.0)
        e = np.zeros(3)
        e[k] = h
        cols.append((steering_vector(panel, p + e, b) - steering_vector(panel, p - e, b)) / (2 * h))
    return np.stack(cols, axis=-1)


def jacobian_errors(panel, pts, b=0.0):
    J = steering_jacobian(panel, pts, b).stacked()
    out = []
    for k, p in enumerate(pts):
        fd = fd_jacobian(panel, p, b)
        out.append(max(np.linalg.norm(J[k][:, c] - fd[:, c]) / np.linalg.norm(J[k][:, c]) for c in range(3)))
    return np.array(out)


def test_propagation_matrix_examples():
    P = build_propagation_matrix(PanelConfig(1, 2, d_e=0.0075, d_rf=0.0075, carrier_freq=20e9,
                                             waveguide_beta=2 * np.pi / 0.015))
    assert P.diag[0] == 1.0
    assert P.diag[1] == pytest.approx(-1.0, abs=1e-12)
    P = build_propagation_matrix(PanelConfig(1, 2, d_e=2.0, d_rf=1.0, carrier_freq=1e9, waveguide_alpha=0.5,
                                             waveguide_beta=0.0))
    assert P.diag[1] == pytest.approx(np.exp(-1.0), abs=1e-12)


def test_propagation_unit_modulus_when_lossless():
    P = build_propagation_matrix(default_panel())
    assert np.allclose(np.abs(P.diag), 1.0, atol=1e-14)


def test_single_element_boresight_magnitude():
    panel = PanelConfig(1, 1, 0.001, 0.001, 20e9)
    a = steering_vector(panel, SphericalPoint(1.0, np.pi / 2, 0.0))
    assert abs(a[0]) == pytest.approx(1 / (4 * np.pi), rel=1e-12)
    a2 = steering_vector(panel, SphericalPoint(2.0, np.pi / 2, 0.0))
    assert abs(a2[0]) ** 2 == pytest.approx(abs(a[0]) ** 2 / 4, rel=1e-12)


def test_steering_phase_is_distance_phase():
    panel = default_panel(2, 6)
    p = np.array([3.0, 0.9, 0.4])
    a = steering_vector(panel, p)
    rho = np.linalg.norm(panel.positions() - np.array(SphericalPoint(*p).cartesian()), axis=1)
    wrapped = np.angle(a * np.exp(-2j * np.pi * rho / panel.wavelength))
    assert np.allclose(wrapped, 0.0, atol=1e-9)


def test_far_field_magnitudes_flat():
    a = steering_vector(default_panel(), SphericalPoint.deg(100.0, 30.0, 45.0))
    m = np.abs(a)
    assert m.max() / m.min() - 1 < 5e-3


def test_jacobian_matches_finite_differences():
    errs = jacobian_errors(default_panel(4, 8), random_points(20, seed=11))
    assert errs.max() <= 1e-4


def test_jacobian_with_radiation_profile():
    pts = random_points(10, seed=5, r_range=(0.5, 10.0))
    pts[:, 1] = np.random.default_rng(1).uniform(0.3, 1.3, len(pts))   # stay clear of the cos=0 kink
    assert jacobian_errors(default_panel(2, 4), pts, b=2.0).max() <= 1e-4


def test_single_element_derivatives():
    panel = PanelConfig(1, 1, 0.001, 0.001, 20e9)
    p = np.array([2.5, 1.1, 0.3])
    g = steering_vector(panel, p)[0]
    J = steering_jacobian(panel, p)
    assert J.d_phi[0] == 0.0 or abs(J.d_phi[0]) < 1e-15 * abs(g)
    expected = (-1 / p[0] + 2j * np.pi / panel.wavelength) * g
    assert J.d_r[0] == pytest.approx(expected, rel=1e-12)


def test_source_on_element_is_singular():
    with pytest.raises(SingularityError):
        steering_vector(default_panel(2, 2), np.array([1e-15, 1.0, 0.0]))


def test_build_channels_edge_cases():
    sc = make_scenario(2, 4, 1, 1, 2)
    ch = build_channels(sc)
    assert np.array_equal(ch.h_scat, np.zeros_like(ch.h_scat))
    sc = make_scenario(2, 4, 3, 2, 2)
    zero = sc.with_(reflection_coeffs=(0j,) * 3)
    ch = build_channels(zero)
    assert np.array_equal(ch.h_total, ch.h_los)


def test_scattered_weaker_than_los_on_default():
    ch = build_channels(default_scenario())
    assert np.all(np.linalg.norm(ch.h_scat, axis=1) < np.linalg.norm(ch.h_los, axis=1))


@settings(max_examples=25, deadline=None)
@given(c=st.complex_numbers(max_magnitude=5.0, allow_nan=False, allow_infinity=False),
       k=st.integers(0, 2))
def test_channels_linear_in_each_beta(c, k):
    sc = make_scenario(2, 4, 3, 2, 2)
    beta = list(sc.reflection_coeffs)
    base = build_channels(sc.with_(reflection_coeffs=tuple(beta[:k] + [0j] + beta[k + 1:]))).h_total
    one = build_channels(sc.with_(reflection_coeffs=tuple(beta[:k] + [1 + 0j] + beta[k + 1:]))).h_total
    scaled = build_channels(sc.with_(reflection_coeffs=tuple(beta[:k] + [complex(c)] + beta[k + 1:]))).h_total
    assert np.allclose(scaled, base + c * (one - base), atol=1e-12 * max(1.0, abs(c)))


def test_received_snr_examples():
    P = PropagationMatrix(np.array([1.0 + 0j]))
    W = np.array([[0.5 * (1j + 1)]])
    assert received_snr(W, P, np.array([1.0 + 0j]), 1.0, 1.0) == pytest.approx(0.5)
    assert received_snr(W, P, np.zeros(1, complex), 1.0, 1.0) == 0.0
    assert received_snr(W, P, np.array([0.3 - 0.2j]), 4.0, 1.0) == pytest.approx(
        4 * received_snr(W, P, np.array([0.3 - 0.2j]), 1.0, 1.0), rel=1e-14)
    with pytest.raises(ValueError):
        received_snr(np.ones((2, 1)), P, np.ones(1), 1.0, 1.0)


def test_noiseless_single_symbol():
    sc = make_scenario(2, 4, 1, 1, 2, num_symbols=1, noise_dbm=-400.0)
    P = build_propagation_matrix(sc.panel)
    W = random_weights(2, 4).w_rx()
    s = np.array([[np.exp(0.3j)]])
    Y = synthesize_rx_signal(sc, W, P, rng_seed=0, symbols=s)
    expected = np.sqrt(sc.p_max) * effective_channel(W, P, build_channels(sc).h_total[0]) * s[0, 0]
    assert np.allclose(Y[:, 0], expected, rtol=1e-12, atol=1e-25)


def test_rx_signal_deterministic():
    sc = make_scenario(2, 4, 3, 2, 2)
    P = build_propagation_matrix(sc.panel)
    W = random_weights(2, 4).w_rx()
    assert np.array_equal(synthesize_rx_signal(sc, W, P, 17), synthesize_rx_signal(sc, W, P, 17))
    assert not np.array_equal(synthesize_rx_signal(sc, W, P, 17), synthesize_rx_signal(sc, W, P, 18))


def test_noise_only_variance():
    sc = make_scenario(2, 4, 2, 2, 2, num_symbols=100_000).with_(reflection_coeffs=(0j, 0j))
    P = build_propagation_matrix(sc.panel)
    W = random_weights(2, 4).w_rx()
    Y = synthesize_rx_signal(sc, W, P, 3, tx_powers=np.zeros(2))
    assert np.mean(np.abs(Y) ** 2) / sc.noise_var == pytest.approx(1.0, abs=0.02)


def test_unit_symbols():
    s = unit_symbols(2, 50, 1)
    assert np.allclose(np.abs(s), 1.0)
    o = unit_symbols(3, 8, kind="orthogonal")
    assert np.allclose(o @ o.conj().T / 8, np.eye(3), atol=1e-12)
    with pytest.raises(ValueError):
        unit_symbols(4, 3, kind="orthogonal")
