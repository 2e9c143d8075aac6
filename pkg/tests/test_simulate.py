
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgstab.control import ConfigError
from mgstab.dynamics import initial_state
from mgstab.equilibrium import solve
from mgstab.simulate import (
    Delay, Event, Scenario, StepSizeError, apply_event, column_names, delayed_value,
    integrate, step_free,
)
from conftest import SCEN, rk4_order

ACT = Event(0.0, "controller-activate", {})


def test_rk4_order_on_line_subsystem(grid, base_params):
    orders, errs = rk4_order(grid, base_params)
    assert np.all(orders >= 3.8), (orders, errs)


def test_step_free_final_time_exact(grid, base_params):
    net = grid.network()
    x0 = initial_state(net, base_params).to_vector()
    t, _ = step_free(x0, net, base_params, 1.05e-4, 1e-5, active=False)
    assert t[-1] == pytest.approx(1.05e-4, abs=1e-15)


def test_column_names_golden(grid):
    cols = column_names(grid)
    assert cols[:6] == ["t", "ig_1", "ig_2", "ig_3", "ig_4", "ie_1"]
    assert cols[-4:] == ["zeta_1", "zeta_2", "zeta_3", "zeta_4"]
    assert len(cols) == 1 + 4 + 5 + 4 + 3 * 4


def test_delayed_value_interpolates():
    t = [0.0, 1.0, 2.0]
    v = [0.0, 10.0, 30.0]
    assert delayed_value(t, v, 2.0, 0.5) == pytest.approx(20.0)
    assert delayed_value(t, v, 0.5, 2.0) == 0.0
    assert delayed_value(t, v, 5.0, 0.0) == 30.0


@settings(max_examples=30)
@given(st.floats(0.0, 3.0), st.floats(0.0, 1.0))
def test_delayed_value_of_linear_signal(t, d):
    ts = np.linspace(-2, 4, 61)
    assert delayed_value(ts, 3 * ts + 1, t, d) == pytest.approx(3 * (t - d) + 1, abs=1e-9)


def test_load_step_is_relative_to_nominal(grid):
    ev = Event(0.1, "load-step", {"load": 0, "conductance": 2.0})
    once = apply_event(grid, ev, grid)
    twice = apply_event(once, ev, grid)
    assert once.loads[0].conductance == pytest.approx(2 * grid.loads[0].conductance)
    assert twice.loads[0] == once.loads[0]
    assert once.loads[0].const_current == grid.loads[0].const_current


@pytest.mark.parametrize("kw", [
    {"events": (Event(0.5, "controller-activate"), Event(0.2, "controller-activate"))},
    {"events": (Event(2.0, "controller-activate"),)},
    {"delays": (Delay(7, 1e-3),)},
    {"delays": (Delay(0, -1e-3),)},
    {"model": "reduced", "delays": (Delay(0, 1e-3),)},
    {"output_stride": 0},
])
def test_scenario_validation(grid, base_params, kw):
    with pytest.raises(ConfigError):
        Scenario(grid, base_params, **kw)


def test_event_validation():
    with pytest.raises(ConfigError):
        Event(0.0, "explode")
    with pytest.raises(ConfigError):
        Event(0.0, "disconnect", {"element": "generator"})


def test_unknown_scenario_field():
    with pytest.raises(ConfigError):
        Scenario.from_dict({"grid": "../grid_table1.json", "speed": 1}, base_dir=SCEN)


def test_delay_matrix(grid, base_params):
    sc = Scenario(grid, base_params, delays=(Delay(1, 1e-4), Delay(3, 2e-4, receiver=0)))
    d = sc.delay_matrix()
    assert d[0, 1] == d[2, 1] == 1e-4 and d[1, 1] == 0
    assert d[0, 3] == 2e-4 and d[2, 3] == 0


def test_scenario_round_trip(tmp_path):
    sc = Scenario.from_json(SCEN / "delay-ok.json")
    sc.to_json(tmp_path / "s.json")
    again = Scenario.from_json(tmp_path / "s.json")
    assert again == sc


def test_oversized_step_is_rejected(grid, base_params):
    sc = Scenario(grid, base_params, events=(ACT,), t_end=1e-3, dt=1e-5)
    with pytest.raises(StepSizeError):
        integrate(sc)


def test_held_equilibrium_stays_put(grid, base_params):
    sc = Scenario(grid, base_params, t_end=5e-3, dt=5e-7, initial="equilibrium", output_stride=100)
    res = integrate(sc)
    eq = solve(grid, base_params).state
    assert np.max(np.abs(res.v_node - eq.v_node)) < 1e-6
    assert np.max(np.abs(res.lam - eq.lam)) < 1e-8


def test_inactive_controller_holds_nominal_setpoint(grid, base_params):
    sc = Scenario(grid, base_params, t_end=2e-3, output_stride=200)
    res = integrate(sc)
    assert np.all(res.v_ctrl == 0.0)
    assert not res.controller_active.any()


def test_disconnected_generator_reads_nan(grid, base_params):
    evs = (ACT, Event(1e-3, "disconnect", {"element": "generator", "index": 0}))
    sc = Scenario(grid, base_params, events=evs, t_end=3e-3, output_stride=100)
    res = integrate(sc)
    after = res.times > 1e-3
    assert np.all(np.isnan(res.i_gen[after, 0])) and np.all(np.isnan(res.lam[after, 0]))
    assert np.all(np.isfinite(res.i_gen[after, 1:]))
    assert [e["kind"] for e in res.event_log] == ["controller-activate", "disconnect"]
    assert res.specs[-1].active_generators == [1, 2, 3]


def test_reconnected_generator_restarts_from_zero_current(grid, base_params):
    evs = (ACT, Event(1e-3, "disconnect", {"element": "generator", "index": 2}),
           Event(2e-3, "reconnect", {"element": "generator", "index": 2}))
    sc = Scenario(grid, base_params, events=evs, t_end=2.5e-3, output_stride=1)
    res = integrate(sc)
    first = np.flatnonzero(res.window == 3)[0]
    assert abs(res.i_gen[first, 2]) < 0.05 * np.nanmax(np.abs(res.i_gen[:, 2]))


def test_sample_times_are_strictly_increasing(grid, base_params):
    evs = (ACT, Event(5e-4, "load-step", {"load": 1, "conductance": 1.5}))
    res = integrate(Scenario(grid, base_params, events=evs, t_end=1e-3, output_stride=7))
    assert np.all(np.diff(res.times) > 0)
    assert res.times[-1] == pytest.approx(1e-3)


def test_reduced_model_tracks_full_model(grid_rg, tuned_params):
    evs = (ACT, Event(2e-3, "load-step", {"load": 0, "conductance": 1.5}))
    full = integrate(Scenario(grid_rg, tuned_params, events=evs, t_end=6e-3, output_stride=20))
    red = integrate(Scenario(grid_rg, tuned_params, events=evs, t_end=6e-3, model="reduced",
                             dt=5e-6, output_stride=2))
    tf, tr = full.times, red.times
    for name in ("vn_1", "ig_2", "v_3"):
        a = np.interp(tr, tf, full.column(name))
        assert np.max(np.abs(a - red.column(name))) < 0.02 * np.max(np.abs(red.column(name))) + 1e-3


def test_csv_output(tmp_path, grid, base_params):
    res = integrate(Scenario(grid, base_params, t_end=1e-4, output_stride=50))
    res.to_csv(tmp_path / "ts.csv")
    header = (tmp_path / "ts.csv").read_text().splitlines()[0]
    assert header == ",".join(column_names(grid))
    back = np.loadtxt(tmp_path / "ts.csv", delimiter=",", skiprows=1)
    assert back.shape == res.data.shape
