import json

import pytest

from mgstab.cli import load_scenario
from mgstab.control import ConfigError
from mgstab.stability_cert import compute_b_star
from mgstab.tuner import TuningConstraints, predicted_deviation, stress_configurations, tune

from conftest import SCEN

RG_RATIO = 0.2 / 0.15


@pytest.fixture(scope="module")
def stress():
    return load_scenario(SCEN / "case-3.json")


@pytest.fixture(scope="module")
def supportive_outcome(grid, base_params, stress):
    cons = TuningConstraints(rg_scale_bounds=(1.0, RG_RATIO))
    return tune(grid, base_params, cons, stress)


def test_supportive_loop_finds_certified_tuning(supportive_outcome):
    out = supportive_outcome
    assert out.accepted
    assert out.params.const_leak == pytest.approx(2.54, rel=0.15)
    assert out.cert.passed
    assert out.predicted_deviation <= 0.05
    # the winner needed the supportive loop
    assert any(e["rg_scale"] > 1 and e["accepted"] for e in out.trace)
    assert not any(e["rg_scale"] == 1 and e["accepted"] for e in out.trace)


def test_winner_has_smallest_accepted_b(supportive_outcome):
    accepted = [e["B"] for e in supportive_outcome.trace if e["accepted"]]
    assert supportive_outcome.params.const_leak == pytest.approx(min(accepted), rel=1e-12)


def test_b_star_decreases_with_generator_resistance(supportive_outcome):
    by_key = {}
    for e in supportive_outcome.trace:
        by_key.setdefault((e["k_v"], e["k"]), []).append((e["rg_scale"], e["B"]))
    for rows in by_key.values():
        rows.sort()
        assert all(b1 > b2 for (_, b1), (_, b2) in zip(rows, rows[1:]))


def test_without_supportive_loop_not_accepted(grid, base_params, stress):
    out = tune(grid, base_params, TuningConstraints(allow_supportive=False), stress)
    assert not out.accepted
    assert all(not e["timescale_ok"] for e in out.trace)


def test_seed_already_certified_accepts_first_candidate(grid_rg, tuned_params, stress):
    cons = TuningConstraints(k_v_bounds=(1.0, 1.0), k_bounds=(1.0, 1.0))
    out = tune(grid_rg, tuned_params, cons, stress)
    assert out.accepted
    assert len(out.trace) == 1 and out.trace[0]["accepted"]
    assert out.params.const_leak == pytest.approx(compute_b_star(grid_rg, tuned_params))


def test_tuning_is_deterministic(grid_rg, tuned_params, stress):
    cons = TuningConstraints(k_v_bounds=(1.0, 4.0), n_k_v=2, n_k=2)
    a = tune(grid_rg, tuned_params, cons, stress)
    b = tune(grid_rg, tuned_params, cons, stress)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_stress_configurations_follow_activation(grid, stress):
    cfgs = stress_configurations(grid, stress)
    post = [e for e in stress.events if e.kind != "controller-activate"]
    assert 1 <= len(cfgs) <= len(post) + 1
    assert cfgs[0] == grid


def test_predicted_deviation_small_for_tuned(grid_rg, tuned_params, stress):
    dev = predicted_deviation(grid_rg, tuned_params, stress)
    assert 0 < dev < 0.05


@pytest.mark.parametrize("kw", [
    {"deviation_tol": 0.0},
    {"k_v_bounds": (5.0, 1.0)},
    {"rg_scale_bounds": (0.0, 1.0)},
    {"n_k": 0},
])
def test_constraints_validation(kw):
    with pytest.raises(ConfigError):
        TuningConstraints(**kw)


def test_constraints_round_trip(tmp_path):
    c = TuningConstraints(rg_scale_bounds=(1.0, 2.0), n_supportive=3)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(c.to_dict()))
    assert TuningConstraints.from_json(path) == c
    with pytest.raises(ConfigError):
        TuningConstraints.from_dict({"bogus": 1})
