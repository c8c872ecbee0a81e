import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from tiltlab.increments import (
    IncrementModel,
    build_lattice_model,
    builtin_model,
    check_assumptions,
    discretize_continuous,
    model_from_json,
    model_to_json,
    resolve_model,
    tilt_theta,
    tilted,
)

LN2, LN4 = math.log(2.0), math.log(4.0)


# -- build_lattice_model ---------------------------------------------------------

def test_lazy_walk_probabilities():
    m = build_lattice_model({-1: LN4, 0: LN2, 1: LN4})
    np.testing.assert_allclose(m.probs, [0.25, 0.5, 0.25], atol=1e-15)
    assert m.mean == pytest.approx(0.0, abs=1e-15)
    assert m.variance == pytest.approx(0.5, abs=1e-15)
    assert m.contiguous_with_zero


def test_fair_coin_support_omits_zero():
    m = build_lattice_model({-1: 0.0, 1: 0.0})
    np.testing.assert_allclose(m.probs, [0.5, 0.5])
    assert m.mean == 0.0
    assert m.variance == pytest.approx(1.0)
    assert not m.contiguous_with_zero


def test_symmetric_laplace_like_model_has_zero_mean():
    m = build_lattice_model({k: 2.0 * abs(k) for k in range(-10, 11)})
    assert abs(m.mean) < 1e-15
    np.testing.assert_allclose(m.probs, m.probs[::-1], rtol=1e-14)


@pytest.mark.parametrize("entries", [{}, {0: 0.0}, [(0, 1.0)]])
def test_degenerate_support_rejected(entries):
    with pytest.raises(ValueError):
        build_lattice_model(entries)


def test_non_finite_energy_rejected():
    with pytest.raises(ValueError):
        build_lattice_model({-1: 0.0, 0: math.inf, 1: 0.0})
    with pytest.raises(ValueError):
        build_lattice_model({-1: math.nan, 1: 0.0})


def test_lattice_normalization_drops_grid_factor():
    m = build_lattice_model({-1: 0.0, 0: 0.0, 1: 0.0})
    assert m.normalization == pytest.approx(3.0)


# -- check_assumptions ------------------------------------------------------------

def test_lazy_walk_meets_all_assumptions():
    rep = check_assumptions(builtin_model("lazy-srw"))
    assert rep.convex and rep.zero_mean and rep.finite_mgf
    assert rep.support_bound == 1


def test_concave_hamiltonian_flagged():
    rep = check_assumptions(build_lattice_model({k: -float(k * k) for k in range(-2, 3)}))
    assert not rep.convex


def test_drifting_model_flagged_not_rejected():
    m = build_lattice_model({0: 0.0, 1: 0.0})
    assert m.mean == pytest.approx(0.5)
    assert not check_assumptions(m).zero_mean


# -- tilt_theta / tilted ----------------------------------------------------------

@pytest.mark.parametrize("name", ["lazy-srw", "srw", "laplace(1.0, 4)", "gauss(3)"])
def test_zero_drift_gives_zero_theta(name):
    assert tilt_theta(builtin_model(name), 0.0) == pytest.approx(0.0, abs=1e-13)


@pytest.mark.parametrize("mu", [-0.9, -0.3, 0.1, 0.5, 0.75])
def test_fair_walk_theta_is_artanh(mu):
    theta = tilt_theta(builtin_model("srw"), mu)
    # independent check: the tilted fair walk has mean tanh(theta)
    assert math.tanh(theta) == pytest.approx(mu, abs=1e-12)
    assert theta == pytest.approx(math.atanh(mu), abs=1e-11)


@pytest.mark.parametrize("drift", [1.0, -1.0, 2.0])
def test_drift_at_or_beyond_support_edge_rejected(drift):
    with pytest.raises(ValueError):
        tilt_theta(builtin_model("lazy-srw"), drift)


def test_tilt_by_zero_is_identity():
    m = builtin_model("lazy-srw")
    assert tilted(m, 0.0).same_law(m, tol=0.0)


def test_tilt_round_trip():
    m = builtin_model("laplace(0.7, 5)")
    back = tilted(tilted(m, 0.83), -0.83)
    np.testing.assert_allclose(back.probs, m.probs, atol=1e-12)


def test_fair_walk_tilt_three_to_one():
    # e^{2 theta} = 3, so p(+1) = 3 / (3 + 1)
    m = tilted(builtin_model("srw"), math.atanh(0.5))
    assert m.probs[-1] == pytest.approx(0.75, abs=1e-14)
    assert m.probs[0] == pytest.approx(0.25, abs=1e-14)


convex_models = st.builds(
    lambda r, c, s: build_lattice_model({k: c * k * k + s * k for k in range(-r, r + 1)}),
    st.integers(1, 5),
    st.floats(0.05, 2.0),
    st.floats(-1.0, 1.0),
)


@given(convex_models, st.floats(0.02, 0.98))
def test_theta_mean_round_trip(m, frac):
    lo, hi = m.values[0], m.values[-1]
    d = lo + frac * (hi - lo)
    assert tilted(m, tilt_theta(m, d)).mean == pytest.approx(d, abs=1e-10)


@given(convex_models, st.floats(-3.0, 3.0))
def test_tilting_preserves_convexity(m, theta):
    assert check_assumptions(tilted(m, theta)).convex == check_assumptions(m).convex


@given(st.builds(lambda hs: build_lattice_model(dict(enumerate(hs, start=-2))),
                 st.lists(st.floats(-3, 3), min_size=5, max_size=5)),
       st.floats(-2.0, 2.0))
def test_tilting_preserves_convexity_any_model(m, theta):
    assert check_assumptions(tilted(m, theta)).convex == check_assumptions(m).convex


@given(convex_models, st.floats(-2.0, 2.0), st.floats(0.01, 1.0))
def test_tilted_mean_is_increasing(m, theta, gap):
    assert tilted(m, theta).mean < tilted(m, theta + gap).mean


@given(convex_models, st.floats(-3.0, 3.0))
def test_probabilities_normalized(m, theta):
    assert tilted(m, theta).probs.sum() == pytest.approx(1.0, abs=1e-12)


# -- discretize_continuous --------------------------------------------------------

def test_unit_grid_discretization_matches_lattice_model():
    d = discretize_continuous(np.abs, 1.0)
    m = build_lattice_model({-1: 1.0, 0: 0.0, 1: 1.0})
    assert d.offsets == m.offsets
    assert d.same_law(m, tol=1e-15)


def test_gaussian_discretization_variance_converges():
    # quadrature oracle for the continuum variance of exp(-x^2/2)
    num, _ = integrate.quad(lambda x: x * x * math.exp(-x * x / 2), -np.inf, np.inf)
    den, _ = integrate.quad(lambda x: math.exp(-x * x / 2), -np.inf, np.inf)
    target = num / den
    errs = []
    for eps in (1.0, 0.5, 0.25):
        m = discretize_continuous(lambda x: x * x / 2, eps)
        errs.append(abs(m.variance - target))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3


def test_discretization_mass_proportional_to_density():
    eps = 0.5
    m = discretize_continuous(lambda x: x * x / 2, eps)
    w = eps * np.exp(-m.values ** 2 / 2)
    np.testing.assert_allclose(m.probs, w / w.sum(), rtol=1e-13)


def test_degenerate_grid_rejected():
    with pytest.raises(ValueError):
        discretize_continuous(np.abs, 2.0)
    with pytest.raises(ValueError):
        discretize_continuous(np.abs, 0.0)


# -- built-ins and JSON -----------------------------------------------------------

def test_builtin_names():
    assert builtin_model("lazy-srw").offsets == (-1, 0, 1)
    assert builtin_model("srw").offsets == (-1, 1)
    assert builtin_model("laplace(1.5)").offsets == tuple(range(-16, 17))
    assert builtin_model("laplace(1.5, 3)").offsets == tuple(range(-3, 4))
    assert builtin_model("gauss(2)").offsets == (-2, -1, 0, 1, 2)
    with pytest.raises(ValueError):
        builtin_model("cauchy")


def test_periodic_walk_is_flagged():
    assert builtin_model("srw").period == 2
    assert builtin_model("lazy-srw").period == 1


def test_json_round_trip():
    m = discretize_continuous(lambda x: x * x / 2, 0.5)
    back = model_from_json(model_to_json(m))
    assert back.grid_step == 0.5
    assert back.same_law(m, tol=0.0)
    assert resolve_model(model_to_json(m)).same_law(m)


def test_json_unknown_field_rejected():
    with pytest.raises(ValueError, match="unknown"):
        model_from_json({"entries": [[0, 0.0], [1, 0.0]], "step": 1})


def test_models_are_immutable():
    m = builtin_model("lazy-srw")
    with pytest.raises(Exception):
        m.grid_step = 2.0
    with pytest.raises(ValueError):
        m.probs[0] = 1.0


def test_resolve_model_passthrough_and_errors():
    m = builtin_model("srw")
    assert resolve_model(m) is m
    with pytest.raises(TypeError):
        resolve_model(3)


def test_direct_constructor_validates_order():
    with pytest.raises(ValueError):
        IncrementModel((1, 0), (0.0, 0.0))
