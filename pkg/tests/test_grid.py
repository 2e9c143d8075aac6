import json

import numpy as np
import pytest
from hypothesis import given, settings

from mgstab.grid import (
    GridSpec, TopologyError, TopologyEvent, active_index_map, apply_topology_event,
    build_laplacian, per_unit_to_si, ring_adjacency,
)
from conftest import DATA, random_connected_adjacency, random_grid, seeds


def test_bundled_grid_is_in_si(grid):
    # p.u. table values times the 0.15 ohm / 300 uH bases
    assert grid.generators[0].resistance == pytest.approx(0.5 * 0.15)
    assert grid.generators[0].inductance == pytest.approx(0.5 * 300e-6)
    assert grid.lines[3].resistance == pytest.approx(2 * 0.15)
    assert [g.rated_current for g in grid.generators] == [12, 4, 8, 8]


def test_rg_variant_only_changes_generator_resistance(grid, grid_rg):
    for a, b in zip(grid.generators, grid_rg.generators):
        assert b.resistance == pytest.approx(a.resistance * 0.2 / 0.15)
        assert b.inductance == a.inductance
    assert grid.lines == grid_rg.lines


def test_per_unit_rejects_bad_base():
    with pytest.raises(ValueError):
        per_unit_to_si(1.0, 0.0)


def test_incidence_structure(grid):
    net = grid.network()
    assert np.all(net.beta_g.sum(axis=1) == 1)
    assert np.all(net.beta_e.sum(axis=1) == 0)
    assert np.all(np.abs(net.beta_e).sum(axis=1) == 2)


def test_laplacian_rejects_disconnected_graph():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 1
    with pytest.raises(TopologyError):
        build_laplacian(a)


def test_laplacian_rejects_asymmetric():
    a = ring_adjacency(4)
    a[0, 1] = 2
    with pytest.raises(TopologyError):
        build_laplacian(a)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_laplacian_properties_random_graphs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 13))
    L = build_laplacian(random_connected_adjacency(rng, n))
    assert np.allclose(L @ np.ones(n), 0, atol=1e-12)
    assert np.allclose(L, L.T)
    ev = np.linalg.eigvalsh(L)
    assert ev[0] > -1e-10 and ev[1] > 1e-10


def test_json_round_trip(grid, tmp_path):
    grid.to_json(tmp_path / "g.json")
    again = GridSpec.from_json(tmp_path / "g.json")
    assert again == grid
    assert json.loads((tmp_path / "g.json").read_text())["per_unit"] is False


def test_missing_adjacency_is_rejected():
    d = json.loads((DATA / "grid_table1.json").read_text())
    del d["adjacency"]
    with pytest.raises(TopologyError):
        GridSpec.from_dict(d)


def test_disconnect_generator_drops_row(grid):
    g2 = apply_topology_event(grid, TopologyEvent("disconnect", "generator", 0))
    net = g2.network()
    assert net.n_gen == 3 and list(net.gen_ids) == [1, 2, 3]
    assert net.laplacian.shape == (3, 3)
    assert active_index_map(grid, g2) == {1: 0, 2: 1, 3: 2}


def test_disconnect_load_keeps_bus(grid):
    g2 = apply_topology_event(grid, TopologyEvent("disconnect", "load", 1))
    net = g2.network()
    assert net.n_bus == 4
    assert net.g_cte[1] == 0 and net.i_cte[1] == 0


def test_disconnect_breaking_cyber_graph_is_rejected():
    # path graph 0-1-2: removing the middle agent splits the cyber graph
    d = json.loads((DATA / "grid_table1.json").read_text())
    d["generators"] = d["generators"][:3]
    d["adjacency"] = [[0, 1, 0], [1, 0, 1], [0, 1, 0]]
    g = GridSpec.from_dict(d)
    with pytest.raises(TopologyError):
        apply_topology_event(g, TopologyEvent("disconnect", "generator", 1))


def test_last_generator_cannot_leave():
    rng = np.random.default_rng(0)
    g = random_grid(rng, n_gen=1, n_bus=2)
    with pytest.raises(TopologyError):
        apply_topology_event(g, TopologyEvent("disconnect", "generator", 0))


def test_permuted_relabels_generators(grid):
    perm = [2, 0, 3, 1]
    p = grid.permuted(perm)
    assert [g.rated_current for g in p.generators] == [grid.generators[i].rated_current for i in perm]
    a = np.asarray(grid.adjacency)
    assert np.array_equal(np.asarray(p.adjacency), a[np.ix_(perm, perm)])
