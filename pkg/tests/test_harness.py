import json

import numpy as np
import pytest

from oracles import expm_taylor
from setcbf.cbf import ClassKappaE
from setcbf.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, main
from setcbf.errors import ConfigurationError
from setcbf.harness import (
    Scenario,
    builtin_scenario,
    builtin_scenarios,
    compute_safe_set,
    load_scenario,
    make_controller,
    run,
)
from setcbf.model import exact_discretize
from setcbf.sets import Box, load_set

SCALAR = {
    "name": "scalar",
    "model": {"A": [[1.0]], "B": [[1.0]]},
    "X": {"rep": "box", "lo": [-1.0], "hi": [1.0]},
    "U": {"rep": "box", "lo": [-1.0], "hi": [1.0]},
    "u_des": {"kind": "uniform"},
    "steps": 30,
    "x0": [0.5],
}


def test_discretize_zero_dynamics():
    A, B = exact_discretize(np.zeros((2, 2)), np.eye(2), 0.1)
    np.testing.assert_allclose(A, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(B, 0.1 * np.eye(2), atol=1e-15)


def test_discretize_scalar_decay():
    A, B = exact_discretize([[-1.0]], [[1.0]], 1.0)
    assert A[0, 0] == pytest.approx(np.exp(-1), abs=1e-14)
    assert B[0, 0] == pytest.approx(1 - np.exp(-1), abs=1e-14)


@pytest.mark.parametrize("dt", [0.01, 0.1, 0.7])
def test_discretize_double_integrator(dt):
    A, B = exact_discretize([[0, 1], [0, 0]], [[0], [1]], dt)
    np.testing.assert_allclose(A, [[1, dt], [0, 1]], atol=1e-14)
    np.testing.assert_allclose(B, [[dt**2 / 2], [dt]], atol=1e-14)


@pytest.mark.parametrize("name", ["motor2d", "msd2", "motion"])
def test_builtin_discretization_matches_taylor(name):
    s = builtin_scenario(name)
    spec = s.model_spec
    Ac = np.asarray(spec["Ac"], dtype=float)
    Bc = np.asarray(spec["Bc"], dtype=float)
    n, m = Bc.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n], M[:n, n:] = Ac, Bc
    E = expm_taylor(M * spec["dt"])
    assert np.linalg.norm(E[:n, :n] - s.model.A) <= 1e-10
    assert np.linalg.norm(E[:n, n:] - s.model.B) <= 1e-10


def test_discretize_validation():
    with pytest.raises(ConfigurationError, match="square"):
        exact_discretize(np.zeros((2, 3)), np.zeros((2, 1)), 0.1)
    with pytest.raises(ConfigurationError):
        exact_discretize(np.zeros((1, 1)), np.ones((1, 1)), 0.0)


def test_builtins_present():
    assert [s.name for s in builtin_scenarios()] == ["motor2d", "msd2", "motion"]
    with pytest.raises(ConfigurationError):
        builtin_scenario("nope")


def test_zero_steps_header_only():
    traj = run(Scenario.from_dict({**SCALAR, "steps": 0}))
    assert len(traj) == 0
    assert traj.to_csv().strip().split(",")[0] == "k"
    assert traj.to_csv().count("\n") == 1


def test_csv_schema():
    traj = run(builtin_scenario("motor2d").replace(steps=3))
    assert traj.header() == ["k", "x_0", "x_1", "u_des_0", "u_des_1", "u_0", "u_1",
                             "h", "gamma_plus", "intervened", "iters", "solve_us"]
    lines = traj.to_csv().strip().split("\n")
    assert len(lines) == 4 and all(len(r.split(",")) == 12 for r in lines)


def test_csv_deterministic(tmp_path):
    s = builtin_scenario("msd2").replace(steps=40, seed=11)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(s).write_csv(a, timing=False)
    run(s).write_csv(b, timing=False)
    assert a.read_bytes() == b.read_bytes()


def test_csv_round_trip_floats():
    traj = run(builtin_scenario("motor2d").replace(steps=5, seed=2))
    row = traj.to_csv().split("\n")[3].split(",")
    assert float(row[1]) == traj.x[2][0]


@pytest.mark.parametrize("name", ["motor2d", "msd2"])
def test_trajectory_self_consistency(name):
    s = builtin_scenario(name).replace(steps=60, seed=4)
    traj = run(s)
    ctrl = make_controller(s)
    X = traj.states()
    for k in range(len(traj)):
        np.testing.assert_allclose(X[k + 1], s.model.A @ X[k] + s.model.B @ traj.u[k], rtol=0, atol=1e-12)
        assert traj.h[k] == pytest.approx(ctrl.cbf.h(X[k]), abs=1e-6)
    assert min(traj.h) >= -1e-6


def test_disturbed_trajectory_consistency():
    s = builtin_scenario("msd2").replace(steps=30, simulate_disturbance=True, nu_policy="none")
    traj = run(s)
    X = traj.states()
    for k in range(len(traj)):
        np.testing.assert_allclose(X[k + 1], s.model.A @ X[k] + s.model.B @ traj.u[k] + traj.w[k], atol=1e-12)


def test_scenario_json_round_trip(tmp_path):
    s = builtin_scenario("msd2")
    path = tmp_path / "s.json"
    path.write_text(json.dumps(s.to_dict()))
    back = load_scenario(path)
    np.testing.assert_allclose(back.model.A, s.model.A)
    assert back.to_dict() == json.loads(json.dumps(s.to_dict()))


def test_scenario_validation(tmp_path):
    with pytest.raises(ConfigurationError):
        Scenario.from_dict({**SCALAR, "x0": [0.0, 0.0]})
    with pytest.raises(ConfigurationError):
        Scenario.from_dict({k: v for k, v in SCALAR.items() if k != "U"})
    with pytest.raises(ConfigurationError):
        load_scenario(tmp_path / "missing.json")
    with pytest.raises(ConfigurationError):
        builtin_scenario("msd2").replace(colour="red")


def test_aborted_run_records_error():
    # starting far outside the set with a weak input, the filter has no solution
    s = Scenario.from_dict({**SCALAR, "model": {"A": [[2.0]], "B": [[0.1]]}, "x0": [5.0]})
    traj = run(s)
    assert traj.aborted and traj.error["step"] == 0
    assert "outside filter domain" in traj.error["message"]
    assert len(traj) == 0


def test_fallback_keeps_running():
    s = Scenario.from_dict({**SCALAR, "model": {"A": [[2.0]], "B": [[0.1]]}, "x0": [5.0], "fallback": True})
    traj = run(s)
    assert not traj.aborted and len(traj) == 30


def test_motor_safe_inputs_untouched():
    # u_des = 0 keeps the current inside the octagon: resistive decay
    s = builtin_scenario("motor2d").replace(u_des={"kind": "constant", "value": [0.0, 0.0]},
                                            x0=[0.3, -0.2], steps=50)
    traj = run(s)
    assert not any(traj.intervened)


def test_msd_recovers_from_outside():
    # the contracted robust set S = nu * Omega leaves a recoverable band Omega minus S
    s = builtin_scenario("msd2").replace(set_source={"kind": "compute-hpoly", "method": "lqr-rpi"},
                                         nu_policy="contract", steps=40, seed=3)
    nu = compute_safe_set(s).nu
    s = s.replace(x0={"kind": "random-gauge", "gamma": [1 + 0.5 * (1 / nu - 1), 1 / nu]})
    traj = run(s)
    assert not traj.aborted
    h = np.array(traj.h)
    assert h[0] < 0
    first = int(np.argmax(h >= 0))
    assert h[first] >= 0 and np.all(h[first:] >= -1e-6)


@pytest.mark.parametrize("s_val", [0.2, 0.5, 1.0])
def test_motion_stays_in_constraints(s_val):
    s = builtin_scenario("motion").replace(alpha=ClassKappaE(s=s_val), steps=80)
    traj = run(s)
    assert not traj.aborted
    assert all(s.X.contains(x, 1e-9) for x in traj.states())
    assert any(traj.intervened)


def test_motor_earlier_intervention_for_smaller_s():
    first = []
    for s_val in (0.2, 0.5, 1.0):
        s = builtin_scenario("motor2d").replace(alpha=ClassKappaE(s=s_val), steps=40,
                                                u_des={"kind": "constant", "value": [1.5, 1.5]})
        traj = run(s)
        first.append(traj.intervened.index(True))
    assert first == sorted(first)


def test_set_cache_reused():
    s = builtin_scenario("motor2d")
    assert compute_safe_set(s) is compute_safe_set(s.replace(seed=9))


# -- command line ----------------------------------------------------------------

def test_cli_compute_and_eval(tmp_path, capsys):
    out = tmp_path / "set.json"
    assert main(["compute-invariant-set", "builtin:motor2d", "-o", str(out)]) == EXIT_OK
    assert "rows:" in capsys.readouterr().out
    omega = load_set(out)
    assert omega.contains(np.zeros(2))
    assert main(["eval-cbf", str(out), "--x", "0,0"]) == EXIT_OK
    res = json.loads(capsys.readouterr().out)
    assert res["gamma"] == pytest.approx(0.0, abs=1e-12) and res["inside"]
    assert main(["verify", str(out), "motor2d"]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out


def test_cli_simulate(tmp_path, capsys):
    out = tmp_path / "traj.csv"
    assert main(["simulate", "msd2", "-o", str(out), "--steps", "10", "--seed", "2", "--no-timing"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == 10 and not summary["aborted"]
    assert out.read_text().count("\n") == 11


def test_cli_simulate_aborts(tmp_path, capsys):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({**SCALAR, "model": {"A": [[2.0]], "B": [[0.1]]}, "x0": [5.0]}))
    assert main(["simulate", str(sc), "-o", str(tmp_path / "t.csv")]) == EXIT_INFEASIBLE
    assert json.loads(capsys.readouterr().out)["aborted"]
    assert main(["simulate", str(sc), "-o", str(tmp_path / "t.csv"), "--fallback"]) == EXIT_OK


def test_cli_config_errors(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "missing.json"), "-o", "x.csv"]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", str(bad), "-o", str(tmp_path / "x.csv")]) == EXIT_CONFIG
    assert main(["compute-invariant-set", "motion", "-o", str(tmp_path / "m.json")]) == EXIT_CONFIG
    assert main(["eval-cbf", str(tmp_path / "missing.json"), "--x", "0"]) == EXIT_CONFIG


def test_cli_verify_failure(tmp_path, capsys):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({**SCALAR, "model": {"A": [[2.0]], "B": [[0.1]]}}))
    st = tmp_path / "set.json"
    st.write_text(json.dumps(Box([-1], [1]).to_dict()))
    assert main(["verify", str(st), str(sc)]) == EXIT_INFEASIBLE
    assert "witness" in capsys.readouterr().out


def test_cli_train_approx(tmp_path, capsys):
    out = tmp_path / "model.json"
    assert main(["train-approx", "motor2d", "-o", str(out), "--samples", "400", "--model", "polynomial",
                 "--degree", "2"]) == EXIT_OK
    res = json.loads(capsys.readouterr().out)
    assert res["epsilon"] >= res["max_validation_error"]
    assert json.loads(out.read_text())["kind"] == "polynomial"


def test_outside_maximal_set_is_infeasible():
    # beyond the maximal control invariant set even gamma cannot be held
    s = builtin_scenario("msd2").replace(x0={"kind": "random-gauge", "gamma": [1.05, 1.1]}, steps=5, seed=3)
    traj = run(s)
    assert traj.aborted and "outside filter domain" in traj.error["message"]


def test_boundary_state_with_single_feasible_input():
    # this run reaches a boundary state whose only admissible input is a corner of U
    s = builtin_scenario("msd2").replace(x0={"kind": "random-gauge", "gamma": [0.0, 1.0]}, steps=150, seed=2)
    traj = run(s)
    assert not traj.aborted
    assert min(traj.h) >= -1e-6
