from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from scipy.linalg import expm

from mgstab.control import ControllerParams, omega
from mgstab.dynamics import initial_state
from mgstab.grid import GeneratorParams, GridSpec, LineParams, LoadParams
from mgstab.simulate import step_free

DATA = Path(__file__).resolve().parents[1] / "src" / "mgstab" / "data"
SCEN = DATA / "scenarios"


@pytest.fixture(scope="session")
def grid():
    return GridSpec.from_json(DATA / "grid_table1.json")


@pytest.fixture(scope="session")
def grid_rg():
    return GridSpec.from_json(DATA / "grid_table1_rg02.json")


@pytest.fixture(scope="session")
def base_params():
    return ControllerParams.from_json(DATA / "controller_base.json")


@pytest.fixture(scope="session")
def tuned_params():
    # v_ref = 0 variant; "auto" is resolved by scenarios
    return ControllerParams.from_json(DATA / "controller_base.json").with_(k_v=1.0, const_leak=2.54)


def random_connected_adjacency(rng, n, p=0.4):
    """Random spanning tree plus extra edges, positive weights."""
    a = np.zeros((n, n))
    order = rng.permutation(n)
    for i in range(1, n):
        j = order[rng.integers(0, i)]
        a[order[i], j] = rng.uniform(0.2, 3.0)
    extra = np.triu(rng.random((n, n)) < p, 1) & (a + a.T == 0)
    a = a + np.where(extra, rng.uniform(0.2, 3.0, (n, n)), 0.0)
    return a + a.T


def random_grid(rng, n_gen=None, n_bus=None):
    """Random connected grid with one DG per bus on the first n_gen buses."""
    n_bus = n_bus or int(rng.integers(2, 6))
    n_gen = n_gen or n_bus
    gens = tuple(
        GeneratorParams(float(rng.uniform(2, 15)), float(rng.uniform(0.05, 0.3)),
                        float(rng.uniform(1e-4, 5e-4)), i)
        for i in range(n_gen)
    )
    edges = set()
    order = rng.permutation(n_bus)
    for i in range(1, n_bus):
        j = order[rng.integers(0, i)]
        edges.add(tuple(sorted((int(order[i]), int(j)))))
    for a in range(n_bus):
        for b in range(a + 1, n_bus):
            if rng.random() < 0.3:
                edges.add((a, b))
    lines = tuple(
        LineParams(float(rng.uniform(0.05, 0.4)), float(rng.uniform(1e-4, 5e-4)), e) for e in sorted(edges)
    )
    loads = tuple(
        LoadParams(float(rng.uniform(1e-3, 5e-3)), float(rng.uniform(0.05, 0.3)), float(rng.uniform(0, 3)))
        for _ in range(n_bus)
    )
    adj = random_connected_adjacency(rng, n_gen) if n_gen > 1 else np.zeros((1, 1))
    return GridSpec(gens, lines, loads, tuple(map(tuple, adj)))


seeds = st.integers(min_value=0, max_value=2**32 - 1)


def line_subsystem(net, params):
    """Affine electrical model x' = A x + c with the regulator idle (oracle)."""
    G, J, K = net.n_gen, net.n_line, net.n_bus
    n = G + J + K
    A, c = np.zeros((n, n)), np.zeros(n)
    A[:G, :G] = -np.diag(net.r_g / net.l_g)
    A[:G, G + J:] = -net.beta_g / net.l_g[:, None]
    c[:G] = omega(np.zeros(G), params) / net.l_g
    A[G:G + J, G:G + J] = -np.diag(net.r_e / net.l_e)
    A[G:G + J, G + J:] = -net.beta_e / net.l_e[:, None]
    A[G + J:, :G] = net.beta_g.T / net.c_n[:, None]
    A[G + J:, G:G + J] = net.beta_e.T / net.c_n[:, None]
    A[G + J:, G + J:] = -np.diag(net.g_cte / net.c_n)
    c[G + J:] = -net.i_cte / net.c_n
    return A, c


def rk4_order(grid, params, dts=(1.6e-5, 8e-6, 4e-6), t_end=1e-3):
    net = grid.network()
    x0 = initial_state(net, params).to_vector()
    n = net.n_gen + net.n_line + net.n_bus
    x0[:n] *= 1.2
    A, c = line_subsystem(net, params)
    m = np.zeros((n + 1, n + 1))
    m[:n, :n], m[:n, n] = A, c
    exact = (expm(m * t_end) @ np.append(x0[:n], 1.0))[:n]
    errs = []
    for dt in dts:
        _, xs = step_free(x0, net, params, t_end, dt, active=False)
        errs.append(np.max(np.abs(xs[-1, :n] - exact)))
    errs = np.array(errs)
    return np.log2(errs[:-1] / errs[1:]), errs
