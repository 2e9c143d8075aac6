import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgstab.control import (
    ConfigError, ControllerParams, consensus_projector, derive_gains, increments,
    omega, omega_integral, omega_prime, rho,
)
from conftest import random_grid, seeds

P = ControllerParams()
volts = st.floats(min_value=-40, max_value=40, allow_nan=False)


@given(volts)
def test_omega_is_contained(v):
    u = omega(v, P)
    assert P.v_star_center - P.delta <= u <= P.v_star_center + P.delta


@given(volts, volts)
def test_omega_is_monotone(a, b):
    if a < b:
        assert omega(a, P) <= omega(b, P)


def test_omega_prime_matches_finite_difference():
    v = np.linspace(-5, 5, 41)
    h = 1e-6
    fd = (omega(v + h, P) - omega(v - h, P)) / (2 * h)
    assert np.allclose(omega_prime(v, P), fd, rtol=1e-7, atol=1e-9)
    assert omega_prime(0.0, P) == pytest.approx(1.0)


@settings(max_examples=40)
@given(st.floats(-8, 8), st.floats(-3, 3))
def test_omega_integral_matches_quadrature(v_tilde, v_bar):
    s = np.linspace(0.0, v_tilde, 4001)
    f = omega(v_bar + s, P) - omega(v_bar, P)
    quad = float(np.sum((f[1:] + f[:-1]) * np.diff(s)) / 2)
    assert omega_integral(v_tilde, v_bar, P) == pytest.approx(quad, rel=1e-6, abs=1e-9)


@given(st.floats(-50, 50), st.floats(-3, 3))
def test_omega_integral_nonnegative(v_tilde, v_bar):
    assert omega_integral(v_tilde, v_bar, P) >= -1e-12


def test_omega_integral_large_argument_is_finite():
    assert np.isfinite(omega_integral(1e4, 0.0, P))


def test_rho_band():
    # near zero inside the band, alpha well outside it
    assert rho(0.0, P) < 1e-3 * P.alpha
    assert rho(P.v_pos + 2.0, P) == pytest.approx(P.alpha, rel=1e-6)
    assert rho(P.v_neg - 2.0, P) == pytest.approx(P.alpha, rel=1e-6)
    assert rho(P.v_pos, P) == pytest.approx(P.alpha / 2, rel=1e-3)


def test_band_edges_map_to_tolerance():
    assert omega(P.v_pos, P) == pytest.approx(P.v_star_center + P.delta - P.v_tol)
    assert omega(P.v_neg, P) == pytest.approx(P.v_star_center - P.delta + P.v_tol)


@given(st.floats(-20, 20), st.floats(-20, 20))
def test_rho_times_v_is_increasing(a, b):
    if a < b - 1e-9:
        assert rho(a, P) * a <= rho(b, P) * b + 1e-9


def test_increments_chi_bounded():
    v = np.linspace(-10, 10, 101)
    _, _, chi = increments(v, np.full(v.size, 0.7), P)
    assert np.all(chi > 0) and np.all(chi <= 1 + 1e-12)


@pytest.mark.parametrize("kw", [
    {"tau": 0.0}, {"delta": -1.0}, {"v_tol": 2.4}, {"const_leak": -1.0}, {"k": -0.1},
])
def test_invalid_params(kw):
    with pytest.raises(ConfigError):
        ControllerParams(**kw)


def test_unknown_field_rejected():
    with pytest.raises(ConfigError):
        ControllerParams.from_dict({"tau": 1e-3, "gain": 2})


def test_json_round_trip(tmp_path):
    p = ControllerParams(v_ref=(0.1, 0.2, 0.3))
    p.to_json(tmp_path / "c.json")
    assert ControllerParams.from_json(tmp_path / "c.json") == p
    assert json.loads((tmp_path / "c.json").read_text())["v_ref"] == [0.1, 0.2, 0.3]


def test_v_ref_vector_uses_global_ids():
    p = ControllerParams(v_ref=(1.0, 2.0, 3.0, 4.0))
    assert list(p.v_ref_vector([1, 3])) == [2.0, 4.0]
    with pytest.raises(ConfigError):
        ControllerParams(v_ref=(1.0,)).v_ref_vector([2])


def test_gain_invariants_on_random_graphs():
    """L 1 = 0, K1 1 = 1 and the K2 defining residual on 100 graphs up to 12 agents."""
    rng = np.random.default_rng(12345)
    for _ in range(100):
        n = int(rng.integers(2, 13))
        net = random_grid(rng, n_gen=n, n_bus=n).network()
        p = ControllerParams(k=float(rng.uniform(0, 20)), k_v=float(rng.uniform(0.5, 50)))
        g = derive_gains(net, p)
        L = net.laplacian
        one = np.ones(n)
        assert np.max(np.abs(L @ one)) < 1e-12
        assert np.max(np.abs(g.K1 @ one - one)) < 1e-10
        P_y = L @ g.K1 @ L
        assert np.max(np.abs(P_y @ g.K2 - L @ g.K1)) < 1e-10
        # quasi-steady state lives on the consensus complement
        assert np.max(np.abs(one @ g.K2)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_h_is_minus_kv_times_projector(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    net = random_grid(rng, n_gen=n, n_bus=n).network()
    p = ControllerParams(k=float(rng.uniform(0, 20)), k_v=float(rng.uniform(0.5, 50)))
    g = derive_gains(net, p)
    assert np.allclose(g.h, -p.k_v * consensus_projector(n), atol=1e-8 * p.k_v)
