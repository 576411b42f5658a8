import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import random_polytope
from setcbf.cbf import ClassKappaE, SetCbf, decrease_bound, delta_h, gamma, gamma_hpoly_lp, gamma_vpoly, h
from setcbf.errors import ConfigurationError, InfeasibleError
from setcbf.sets import Box, HPolytope, VPolytope, Zonotope, contains

UNIT = Box([-1, -1], [1, 1])
SQUARE_V = VPolytope.from_points([[1, 1], [1, -1], [-1, 1], [-1, -1]])
REPS = {
    "hpoly": SetCbf(UNIT),
    "vpoly": SetCbf(SQUARE_V),
    "zonotope": SetCbf(Zonotope([0, 0], np.eye(2))),
}
finite = st.floats(-3, 3, allow_nan=False)
points = arrays(float, 2, elements=finite)


def test_hpoly_max_row():
    assert gamma(REPS["hpoly"], [0.5, -0.25]) == pytest.approx(0.5)


@pytest.mark.parametrize("rep", REPS)
def test_origin_has_zero_gauge(rep):
    assert gamma(REPS[rep], [0.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
    assert h(REPS[rep], [0.0, 0.0]) == pytest.approx(1.0, abs=1e-12)


def test_zonotope_offset_center():
    # 1 = 0.2 g + l with |l| <= g gives g = 1/1.2; grid search over g confirms
    cbf = SetCbf(Zonotope([0.2, 0.0], np.eye(2)))
    g = gamma(cbf, [1.0, 0.0])
    assert g == pytest.approx(1 / 1.2, abs=1e-9)
    grid = np.arange(0, 2, 1e-5)
    feasible = grid[np.abs(1 - 0.2 * grid) <= grid]
    assert g == pytest.approx(feasible.min(), abs=2e-5)


def test_vpoly_square():
    g = gamma(REPS["vpoly"], [0.5, 0.5])
    assert g == pytest.approx(0.5, abs=1e-9)
    # dense grid over the weight on (1, 1) and origin
    lam = np.linspace(0, 1, 10001)
    ok = np.isclose(lam * 1.0, 0.5)
    assert 1 - (1 - lam[ok]).max() == pytest.approx(0.5)


def test_boundary_and_double():
    cbf = REPS["hpoly"]
    xb = np.array([1.0, 0.3])
    assert h(cbf, xb) == pytest.approx(0.0, abs=1e-9)
    assert h(cbf, 2 * xb) == pytest.approx(-1.0, abs=1e-9)


def test_decrease_bound_cases():
    a = ClassKappaE(s=0.5)
    assert decrease_bound(a, 0.4) == pytest.approx(0.2)
    assert decrease_bound(a, -0.4) == pytest.approx(-0.2)
    assert decrease_bound(ClassKappaE(s=2.0), 0.4) == pytest.approx(0.4)
    assert decrease_bound(a, 0.0) == 0.0
    assert delta_h(SetCbf(UNIT, a), 0.4) == pytest.approx(0.2)


@pytest.mark.parametrize("kind", ["linear", "cubic", "tanh"])
def test_class_k_monotone(kind):
    a = ClassKappaE(kind, 0.7, 2.0)
    r = np.linspace(-0.99, 5, 500)
    assert a(0.0) == 0.0
    assert np.all(np.diff(a(r)) > 0)


def test_class_k_validation():
    with pytest.raises(ConfigurationError):
        ClassKappaE("quadratic")
    with pytest.raises(ConfigurationError):
        ClassKappaE(s=0.0)


def test_vpoly_outside_cone():
    # the gauge LP on a cone that misses part of the plane has no solution there
    V = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, -1.0]])
    assert gamma_vpoly(V, np.array([0.5, 0.0])) == pytest.approx(0.5)
    with pytest.raises(InfeasibleError, match="representable cone"):
        gamma_vpoly(V, np.array([-1.0, 0.0]))


def test_vpoly_outside_hull():
    assert gamma(REPS["vpoly"], [3.0, 0.0]) == pytest.approx(3.0)


def test_origin_on_boundary_rejected():
    with pytest.raises(ConfigurationError):
        SetCbf(Box([0, -1], [1, 1]))
    with pytest.raises(ConfigurationError):
        SetCbf(Zonotope([1.0, 0.0], np.eye(2)))
    with pytest.raises(ConfigurationError):
        SetCbf(Zonotope([0.0, 0.0], [[1.0], [1.0]]))


def test_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        gamma(REPS["hpoly"], [1.0, 2.0, 3.0])


@pytest.mark.parametrize("rep", REPS)
@settings(max_examples=40, deadline=None)
@given(x=points, c=st.floats(0, 5))
def test_positive_homogeneity(rep, x, c):
    cbf = REPS[rep]
    assert gamma(cbf, c * x) == pytest.approx(c * gamma(cbf, x), abs=1e-7)


@pytest.mark.parametrize("rep", REPS)
@settings(max_examples=40, deadline=None)
@given(x=points, y=points)
def test_gauge_convexity(rep, x, y):
    cbf = REPS[rep]
    assert gamma(cbf, (x + y) / 2) <= (gamma(cbf, x) + gamma(cbf, y)) / 2 + 1e-7


@pytest.mark.parametrize("rep", REPS)
@settings(max_examples=40, deadline=None)
@given(x=points, y=points)
def test_lipschitz_bound(rep, x, y):
    cbf = REPS[rep]
    L = cbf.lipschitz_constant()
    assert abs(gamma(cbf, x) - gamma(cbf, y)) <= L * np.linalg.norm(x - y) + 1e-7


@settings(max_examples=60, deadline=None)
@given(x=points)
def test_membership_equivalence(x):
    for cbf, s in ((REPS["hpoly"], UNIT), (REPS["vpoly"], SQUARE_V), (REPS["zonotope"], Zonotope([0, 0], np.eye(2)))):
        if abs(np.max(np.abs(x)) - 1) < 1e-6:
            continue
        assert contains(s, x, 1e-9) == (h(cbf, x) >= -1e-7)


def test_closed_form_matches_lp():
    rng = np.random.default_rng(2)
    H, b = random_polytope(rng, 3, 8)
    om = HPolytope(H, b)
    cbf = SetCbf(om)
    X = rng.uniform(-3, 3, (1000, 3))
    closed = cbf.gamma_many(X)
    lp = np.array([gamma_hpoly_lp(om, x) for x in X])
    np.testing.assert_allclose(closed, lp, atol=1e-6)


def test_gamma_many_matches_scalar():
    rng = np.random.default_rng(3)
    X = rng.uniform(-2, 2, (30, 2))
    for cbf in REPS.values():
        np.testing.assert_allclose(cbf.gamma_many(X), [cbf.gamma(x) for x in X], atol=1e-9)


def test_serialization_round_trip():
    cbf = SetCbf(Zonotope([0.1, 0], [[1, 0.2], [0, 1]]), ClassKappaE("tanh", 0.3, 2.0))
    back = SetCbf.from_dict(cbf.to_dict())
    assert back.alpha == cbf.alpha
    assert back.gamma([0.4, -0.8]) == pytest.approx(cbf.gamma([0.4, -0.8]))
