import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgstab.dynamics import FullState
from mgstab.equilibrium import solve
from mgstab.linearization import (
    LinearizationError, analyze, eigen_report, eigen_sweep, jacobian, log_grid, numerical_jacobian,
)

from conftest import line_subsystem


@pytest.fixture(scope="module")
def stable_point(grid_rg, tuned_params):
    p = tuned_params.with_(zeta_leak=1e-4)
    return grid_rg, p, solve(grid_rg, p).state


def _blocks(net):
    g, j, k = net.n_gen, net.n_line, net.n_bus
    return g, j, k, g + j + k


def test_numerical_jacobian_of_linear_map():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(6, 6))
    b = rng.normal(size=6)
    jac = numerical_jacobian(lambda x: a @ x + b, rng.normal(size=6))
    np.testing.assert_allclose(jac, a, rtol=1e-8, atol=1e-9)


def test_electrical_blocks_match_analytic(stable_point):
    grid, p, eq = stable_point
    net = grid.network()
    g, j, k, n = _blocks(net)
    jac = jacobian(net, p, eq)
    a, _ = line_subsystem(net, p)
    # rows of line currents and node voltages are linear in the electrical states
    rows = slice(g, n)
    scale = np.max(np.abs(a[rows, :n]))
    err = np.max(np.abs(jac[rows, :n] - a[rows, :n]))
    assert err / scale < 1e-6
    # generator-current rows with respect to the electrical states
    scale_g = np.max(np.abs(a[:g, :n]))
    assert np.max(np.abs(jac[:g, :n] - a[:g, :n])) / scale_g < 1e-6
    # node voltages and line currents do not depend on controller states
    assert np.max(np.abs(jac[g:n, n:])) == 0.0


def test_regulator_self_derivative_is_leakage(stable_point):
    grid, p, eq = stable_point
    net = grid.network()
    g, j, k, n = _blocks(net)
    jac = jacobian(net, p, eq)
    diag = np.diag(jac[n:n + g, n:n + g])
    # rho is inactive at this operating point, so only -B / tau remains
    np.testing.assert_allclose(diag, -p.const_leak / p.tau, rtol=1e-3)


def test_rejects_non_equilibrium(stable_point):
    grid, p, eq = stable_point
    x = eq.to_vector()
    x[0] += 1.0
    with pytest.raises(LinearizationError):
        jacobian(grid, p, FullState.from_vector(x, grid.network()))


def test_eigenvalues_close_under_conjugation(stable_point):
    grid, p, eq = stable_point
    eig = eigen_report(grid, p, eq).eigenvalues
    assert np.allclose(np.sort_complex(eig), np.sort_complex(eig.conj()), atol=1e-6 * np.max(np.abs(eig)))


def test_spectrum_invariant_under_generator_relabeling(stable_point):
    grid, p, eq = stable_point
    perm = [2, 0, 3, 1]
    g2 = grid.permuted(perm)
    e1 = eigen_report(grid, p, eq).eigenvalues
    e2 = eigen_report(g2, p, solve(g2, p).state).eigenvalues
    np.testing.assert_allclose(np.sort(e1.real), np.sort(e2.real), atol=1e-6 * np.max(np.abs(e1)))


def test_structural_zero_modes(grid, base_params):
    # B = 0, B_zeta = 0: zeta null mode and the regulator family give zero eigenvalues
    eq = solve(grid, base_params).state
    rep = eigen_report(grid, base_params, eq, zero_tol=1e-4)
    assert rep.zero_modes >= 2
    assert rep.stable


def test_leakage_removes_zero_modes(stable_point):
    grid, p, eq = stable_point
    rep = eigen_report(grid, p, eq, zero_tol=1e-6)
    assert rep.zero_modes == 0
    assert rep.stable


def test_constant_leakage_moves_regulator_mode_left(grid_rg, tuned_params):
    slow = []
    for b in (0.0, tuned_params.const_leak):
        p = tuned_params.with_(const_leak=b, zeta_leak=1e-4)
        eq = solve(grid_rg, p).state
        eig = eigen_report(grid_rg, p, eq, zero_tol=0.0).eigenvalues
        slow.append(np.max(eig.real))
    assert slow[1] < slow[0]


def test_analyze_orders_and_counts():
    jac = np.diag([-1.0, 0.0, -3.0, 1e-9])
    eig, max_re, stable, nz = analyze(jac, zero_tol=1e-7)
    assert nz == 2
    assert max_re == -1.0
    assert stable
    assert np.all(np.diff(eig.real) >= 0)


def test_sweep_shares_equilibrium_and_reports_points(stable_point):
    grid, p, eq = stable_point
    pts = log_grid(1e-5, 1e-2, 3)
    reps = eigen_sweep(grid, p, pts, equilibrium=eq)
    assert [(r.tau_p, r.tau_d) for r in reps] == pts
    assert all(r.error is None and r.stable for r in reps)


def test_sweep_records_invalid_points(stable_point):
    grid, p, eq = stable_point
    reps = eigen_sweep(grid, p, [(-1.0, 1e-3)], equilibrium=eq)
    assert reps[0].error is not None
    assert not reps[0].stable


_CACHE = {}


def _stable(grid_rg, tuned_params):
    if "eq" not in _CACHE:
        p = tuned_params.with_(zeta_leak=1e-4)
        _CACHE["eq"] = (p, solve(grid_rg, p).state)
    return _CACHE["eq"]


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-5, 1e-2), st.floats(1e-5, 1e-2))
def test_stable_config_never_crosses(grid_rg, tuned_params, tau_p, tau_d):
    p, eq = _stable(grid_rg, tuned_params)
    rep = eigen_report(grid_rg, p.with_(tau_p=tau_p, tau_d=tau_d), eq)
    assert rep.max_real_part < 0
