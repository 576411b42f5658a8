import numpy as np
import pytest

from oracles import input_exists
from setcbf.errors import ConfigurationError, EmptySetError
from setcbf.invariance import (
    InvarianceProblem,
    contract_for_stability,
    maximal_ci_set,
    maximal_rpi_set,
    verify_invariance,
)
from setcbf.model import LtiModel, exact_discretize
from setcbf.predictive import lqr_gain
from setcbf.sets import (
    Box,
    HPolytope,
    VPolytope,
    Zonotope,
    is_subset,
    pontryagin_diff,
    set_distance,
    unit_directions,
)

UNIT = Box([-1, -1], [1, 1])
W05 = Box.symmetric([0.05, 0.05])


@pytest.fixture(scope="module")
def double_integrator():
    A, B = exact_discretize([[0, 1], [0, 0]], [[0], [1]], 0.1)
    return LtiModel(A, B)


@pytest.fixture(scope="module")
def di_nominal(double_integrator):
    return maximal_ci_set(InvarianceProblem(double_integrator, UNIT, Box([-1], [1])), keep_iterates=True)


def test_scalar_stable_example():
    p = InvarianceProblem(LtiModel([[0.5]], [[1.0]]), Box([-1], [1]), Box([-1], [1]))
    res = maximal_ci_set(p)
    assert res.iterations == 1
    assert set_distance(res.omega, Box([-1], [1])) == pytest.approx(0.0, abs=1e-12)
    assert res.omega.origin_form
    assert verify_invariance(res.omega, p).passed


def test_double_integrator_grid_oracle(double_integrator, di_nominal):
    om = di_nominal.omega
    m = double_integrator
    g = np.linspace(-1, 1, 51)
    checked = 0
    for x in ([a, b] for a in g for b in g):
        x = np.array(x)
        slack = np.max(om.H @ x - om.b) / np.max(np.linalg.norm(om.H, axis=1))
        if abs(slack) < 1e-6:
            continue
        if slack < 0:
            assert input_exists(m.A, m.B, om.H, om.b, [-1], [1], x)
            checked += 1
    assert checked > 500


def test_maximality_by_rollout(double_integrator, di_nominal):
    # points just outside the set leave X under every admissible input sequence;
    # a bang-bang braking input is the best effort for the double integrator
    om = di_nominal.omega
    m = double_integrator
    for d in unit_directions(2, 30, seed=3):
        g = float(np.max(om.H @ d))
        x = 1.02 * d / g
        if np.max(np.abs(x)) > 1:
            continue
        for _ in range(200):
            u = -np.sign(x[1]) * np.ones(1)
            x = m.A @ x + m.B @ u
            if np.max(np.abs(x)) > 1 + 1e-9:
                break
        else:
            pytest.fail("state outside the maximal set stayed in X under braking")


def test_fixed_point_is_monotone(di_nominal):
    its = di_nominal.iterates
    assert len(its) >= 2
    D = unit_directions(2, 100, seed=0)
    for a, b in zip(its, its[1:]):
        assert np.all(b.supports(D) <= a.supports(D) + 1e-9)


def test_robust_subset_of_nominal(double_integrator, di_nominal):
    rob = maximal_ci_set(InvarianceProblem(double_integrator, UNIT, Box([-1], [1]), W05))
    assert is_subset(rob.omega, di_nominal.omega)
    assert verify_invariance(rob.omega, InvarianceProblem(double_integrator, UNIT, Box([-1], [1]), W05)).passed


@pytest.mark.parametrize("gamma", [0.25, 0.5, 0.9])
def test_scaled_invariant_set_is_invariant(double_integrator, di_nominal, gamma):
    p = InvarianceProblem(double_integrator, UNIT, Box([-1], [1]))
    assert verify_invariance(di_nominal.omega.scale(gamma), p).passed


def test_verify_rejects_singleton():
    p = InvarianceProblem(LtiModel([[0.5]], [[1.0]]), Box([-1], [1]), Box([-1], [1]))
    with pytest.raises(ConfigurationError):
        verify_invariance(Box([0.0], [0.0]), p)


def test_verify_reports_witness():
    p = InvarianceProblem(LtiModel([[2.0]], [[1.0]]), Box([-1], [1]), Box([-0.1], [0.1]))
    rep = verify_invariance(Box([-1], [1]), p)
    assert not rep.passed
    witnesses = [float(x[0]) for x, _ in rep.violations]
    assert 1.0 in witnesses and -1.0 in witnesses
    assert rep.max_violation == pytest.approx(0.9, abs=1e-6)
    assert "FAIL" in rep.summary()


def test_verify_other_reps():
    m = LtiModel(0.5 * np.eye(2), np.eye(2))
    p = InvarianceProblem(m, UNIT, Box.symmetric([0.1, 0.1]))
    for om in (VPolytope.from_points([[1, 1], [1, -1], [-1, 1], [-1, -1]]), Zonotope([0, 0], np.eye(2))):
        rep = verify_invariance(om, p)
        assert rep.passed and rep.exact


def test_verify_sampled_in_high_dimension():
    m = LtiModel(0.9 * np.eye(4), np.eye(4))
    p = InvarianceProblem(m, Box.symmetric(np.ones(4)), Box.symmetric(0.1 * np.ones(4)))
    rep = verify_invariance(Box.symmetric(np.ones(4)), p, samples=200)
    assert rep.passed and not rep.exact


def test_contract_box():
    nu, om = contract_for_stability(UNIT, Box.symmetric([0.1, 0.1]))
    assert nu == pytest.approx(0.9)
    assert set_distance(om, Box([-0.9, -0.9], [0.9, 0.9])) == pytest.approx(0.0, abs=1e-12)


def test_contract_needs_interior_disturbance():
    with pytest.raises(ConfigurationError):
        contract_for_stability(UNIT, Box([0.0, 0.0], [0.0, 0.0]))


def test_contract_disturbance_too_large():
    with pytest.raises(ConfigurationError, match="too large"):
        contract_for_stability(UNIT, Box.symmetric([1.5, 0.1]))


def test_contraction_condition_holds():
    om = HPolytope([[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1]], [1, 1, 1, 1, 1.5, 1.5])
    W = Zonotope([0, 0], [[0.05, 0.02], [0.0, 0.04]])
    nu, contracted = contract_for_stability(om, W)
    assert nu < 1
    assert is_subset(pontryagin_diff(om, W), contracted, tol=1e-12)


def test_empty_invariant_set_reported():
    p = InvarianceProblem(LtiModel([[3.0]], [[1.0]]), Box([-1], [1]), Box([-0.1], [0.1]),
                          Box([-0.5], [0.5]))
    with pytest.raises(EmptySetError):
        maximal_ci_set(p)


def test_rpi_set_scalar():
    # x+ = 0.5 x + w, |w| <= 0.1, X = [-1, 1]: X itself is robustly invariant
    res = maximal_rpi_set([[0.5]], Box([-1], [1]), Box([-0.1], [0.1]))
    assert set_distance(res.omega, Box([-1], [1])) == pytest.approx(0.0, abs=1e-12)


def test_rpi_set_robust(double_integrator):
    K = lqr_gain(double_integrator.A, double_integrator.B, np.eye(2), np.eye(1))
    A_cl = double_integrator.closed_loop(K)
    X = Box([-1, -1], [1, 1])
    res = maximal_rpi_set(A_cl, X, Box.symmetric([0.01, 0.01]))
    om = res.omega
    for v in om.vertices():
        nxt = A_cl @ v
        assert np.all(om.H @ nxt + Box.symmetric([0.01, 0.01]).supports(om.H) <= 1 + 1e-9)


def test_problem_validation():
    m = LtiModel(np.eye(2), np.eye(2))
    with pytest.raises(ConfigurationError):
        InvarianceProblem(m, Box([-1], [1]), UNIT)
    with pytest.raises(ConfigurationError):
        InvarianceProblem(m, Box([0, 0], [1, 1]), UNIT)
