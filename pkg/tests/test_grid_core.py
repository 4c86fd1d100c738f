"""Lattice fields, stencils, compatibility residuals, symmetries and classes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projsurf import families as fam
from projsurf.core import (
    Coeffs,
    GaugePair,
    PreconditionError,
    classify,
    derived_quantities,
    dual,
    gauge_transform,
    gc1_residual,
    gc2_residual,
    projective_area,
    projective_invariants,
    reconstruct_VW,
    spectral_scale,
)
from projsurf.grid import (
    GridError,
    GridSpec,
    ScalarField,
    d,
    fd_weights,
    interior,
    log_mixed_derivative,
    partial_derivative,
)

G17 = GridSpec.square(17, 0.0, 1.0)
finite = st.floats(-3.0, 3.0, allow_nan=False)
nonzero = st.floats(0.2, 3.0).flatmap(lambda v: st.sampled_from([v, -v]))


# -- grid and stencils -----------------------------------------------------

def test_grid_rejects_tiny_and_bad_spacing():
    with pytest.raises(GridError):
        GridSpec(5, 20)
    with pytest.raises(GridError):
        GridSpec(20, 20, hx=0.0)


def test_field_shape_mismatch():
    with pytest.raises(GridError):
        ScalarField(G17, np.zeros((3, 3)))


def test_fd_weights_central_first_derivative():
    assert [float(w) for w in fd_weights([-2, -1, 0, 1, 2], 1)] == pytest.approx([1 / 12, -2 / 3, 0, 2 / 3, -1 / 12])


@pytest.mark.parametrize("order", [1, 2, 3])
def test_derivative_of_constant_vanishes(order):
    f = ScalarField.constant(G17, 5.0)
    assert partial_derivative(f, "x", order).sup() <= 1e-9


def test_cubic_third_derivative_is_six():
    f = ScalarField.from_function(G17, lambda X, Y: X**3)
    assert np.max(np.abs(d(f, "xxx").values - 6.0)) <= 1e-9


@pytest.mark.parametrize("axis, spec", [("x", "xx"), ("y", "yy")])
def test_polynomials_up_to_degree_four_exact(axis, spec):
    f = ScalarField.from_function(G17, lambda X, Y: (X if axis == "x" else Y) ** 4)
    t = G17.mesh()[0 if axis == "x" else 1]
    assert np.max(np.abs(d(f, spec).values - 12 * t**2)) <= 1e-8


def test_sine_second_derivative_fourth_order():
    errs = []
    for n in (33, 65):
        g = GridSpec.square(n, 0.0, 1.0)
        f = ScalarField.from_function(g, lambda X, Y: np.sin(X))
        X, _ = g.mesh()
        errs.append(np.max(np.abs(d(f, "xx").values + np.sin(X))))
    assert errs[0] / errs[1] >= 14


def test_mixed_derivative_composition():
    f = ScalarField.from_function(G17, lambda X, Y: np.sin(X) * np.exp(Y))
    X, Y = G17.mesh()
    assert np.max(np.abs(d(f, "xy").values - np.cos(X) * np.exp(Y))) <= 1e-5


def test_log_mixed_derivative_of_reciprocal_sum():
    g = GridSpec.square(33, 1.0, 2.0)
    f = ScalarField.from_function(g, lambda X, Y: 1.5 / (X + Y))
    X, Y = g.mesh()
    assert np.max(np.abs(log_mixed_derivative(f).values - 1 / (X + Y) ** 2)) <= 1e-6


def test_log_mixed_derivative_constant_negative():
    assert log_mixed_derivative(ScalarField.constant(G17, -1.0)).sup() <= 1e-9


def test_zero_crossing_is_masked():
    f = ScalarField.from_function(G17, lambda X, Y: X - 0.5)
    out = log_mixed_derivative(f)
    assert not out.valid[:, 8].any()
    assert out.valid[:, 0].all()


def test_interior_band():
    f = ScalarField.constant(G17, 1.0)
    assert interior(f, 3).valid.sum() == (17 - 6) ** 2


@given(st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=25, deadline=None)
def test_derivative_is_linear(a, b):
    f = ScalarField.from_function(G17, lambda X, Y: np.sin(X + 2 * Y))
    g = ScalarField.from_function(G17, lambda X, Y: X * Y**2)
    lhs = d(a * f + b * g, "xy")
    rhs = a * d(f, "xy") + b * d(g, "xy")
    assert (lhs - rhs).sup() <= 1e-9 * (1 + abs(a) + abs(b)) * 100


# -- compatibility ----------------------------------------------------------

def test_constants_are_compatible():
    c = fam.make_constant(1, 2, 3, 4, G17)
    assert gc1_residual(c).sup() <= 1e-8
    assert gc2_residual(c).sup() <= 1e-8


def test_rotation_residual_fourth_order():
    sups = [gc1_residual(fam.make_rotation(lambda s: 0.2 * np.sin(s), 0.3, GridSpec.square(n))).sup()
            for n in (33, 65)]
    assert sups[1] <= 1e-7 and sups[0] / sups[1] >= 10


def test_corrupted_field_detected():
    g = GridSpec.square(33)
    c = fam.make_rotation(lambda s: 0.2 * np.sin(s), 0.3, g)
    bad = c.replace(W=c.W + ScalarField.from_function(g, lambda X, Y: X))
    assert gc1_residual(bad).sup("R2") == pytest.approx(1.0, abs=1e-6)


def test_derived_constants():
    dq = derived_quantities(fam.make_constant(1, 2, 3, 4, G17))
    for f, v in ((dq.k, 2), (dq.l, 2), (dq.a, 4), (dq.b, 3)):
        assert np.allclose(f.values, v, atol=1e-9)


@pytest.mark.parametrize("vals, kl", [((1, 1, 0, 0), 1.0), ((-1, -1, 0, 0), 1.0)])
def test_derived_affine_and_demoulin(vals, kl):
    dq = derived_quantities(Coeffs.from_values(G17, *vals))
    assert np.allclose(dq.k.values, kl) and np.allclose(dq.l.values, kl)
    assert np.allclose(dq.a.values, 0, atol=1e-9) and np.allclose(dq.b.values, 0, atol=1e-9)


def test_godeaux_rozet_gc2_zero():
    assert gc2_residual(fam.make_godeaux_rozet_const(1.0, G17)).sup() <= 1e-8


def test_gc2_follows_gc1():
    c = fam.make_rotation(lambda s: 0.5 + 0.2 * np.sin(s), 0.3, GridSpec.square(65))
    assert gc1_residual(c).sup() <= 1e-6
    assert gc2_residual(c).sup() <= 1e-5


def test_reconstruct_round_trip():
    c = fam.make_rotation(lambda s: 0.5 + 0.2 * np.sin(s), 0.3, GridSpec.square(33))
    V, W = reconstruct_VW(c, derived_quantities(c))
    assert (V - c.V).sup() <= 1e-12 and (W - c.W).sup() <= 1e-12


# -- symmetries ------------------------------------------------------------

def test_identity_gauge_is_exact():
    c = fam.make_constant(1, 2, 3, 4, G17)
    out = gauge_transform(c, GaugePair.identity())
    assert all(np.array_equal(a.values, b.values) for a, b in zip(out.fields(), c.fields()))


def test_linear_gauge_on_constants():
    lin = (lambda t: 2 * t, lambda t: 2 + 0 * t, lambda t: 0 * t, lambda t: 0 * t)
    out = gauge_transform(fam.make_constant(1, 2, 3, 4, G17), GaugePair(lin, GaugePair.identity().g))
    for f, v in zip(out.fields(), (0.25, 4.0, 0.75, 4.0)):
        assert np.allclose(f.values, v, rtol=1e-14)
    assert out.grid.hx == pytest.approx(2 * G17.hx)


def test_gauge_metric_identity_before_resampling():
    g = GridSpec.square(33)
    c = fam.make_rotation(lambda s: 0.5 + 0.2 * np.sin(s), 0.3, g)
    f = (lambda t: t + 0.1 * np.sin(t), lambda t: 1 + 0.1 * np.cos(t), lambda t: -0.1 * np.sin(t),
         lambda t: -0.1 * np.cos(t))
    raw = gauge_transform(c, GaugePair(f, GaugePair.identity().g), resample=False)
    X, _ = g.mesh()
    assert np.max(np.abs((raw.beta * raw.gamma).values * f[1](X) - (c.beta * c.gamma).values)) <= 1e-12


def test_decreasing_gauge_rejected():
    neg = (lambda t: -t, lambda t: -1 + 0 * t, lambda t: 0 * t, lambda t: 0 * t)
    with pytest.raises(PreconditionError):
        gauge_transform(fam.make_constant(1, 2, 3, 4, G17), GaugePair(neg, neg))


def test_dual_signs():
    out = dual(fam.make_constant(1, 2, 3, 4, G17))
    assert [float(f.values[0, 0]) for f in out.fields()] == [-1, -2, 3, 4]


@given(nonzero, nonzero, finite, finite)
@settings(max_examples=30, deadline=None)
def test_dual_is_involution(b, g, v, w):
    c = fam.make_constant(b, g, v, w, G17)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(dual(dual(c)).fields(), c.fields()))


@given(st.floats(0.1, 5.0), st.floats(0.1, 5.0))
@settings(max_examples=30, deadline=None)
def test_spectral_scale_composes(l1, l2):
    c = fam.make_constant(1.0, 2.0, 3.0, 4.0, G17)
    a = spectral_scale(spectral_scale(c, l1), l2)
    b = spectral_scale(c, l1 * l2)
    assert np.allclose(a.beta.values, b.beta.values, rtol=1e-14)
    assert np.allclose(a.gamma.values, b.gamma.values, rtol=1e-14)


def test_spectral_scale_identity_and_involution():
    c = fam.make_constant(1.0, 2.0, 3.0, 4.0, G17)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(spectral_scale(c, 1.0).fields(), c.fields()))
    twice = spectral_scale(spectral_scale(c, -1.0), -1.0)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(twice.fields(), c.fields()))
    with pytest.raises(ValueError):
        spectral_scale(c, 0.0)


def test_spectral_scale_keeps_projmin():
    c = spectral_scale(fam.make_projmin_const(1.0, 2.0, G17), 2.0)
    assert gc1_residual(c).sup() <= 1e-8
    assert classify(c)["projectively_minimal"]


@given(nonzero, nonzero, finite, finite)
@settings(max_examples=20, deadline=None)
def test_constants_belong_to_differential_classes(b, g, v, w):
    rep = classify(fam.make_constant(b, g, v, w, G17))
    for name in ("isothermally_asymptotic", "R0_x", "R0_y", "R", "jonas"):
        assert rep[name]


def test_constants_one_two_three_four_all_classes_but_normalised():
    rep = classify(fam.make_constant(1, 2, 3, 4, G17))
    # k = l = 2 and a, b != 0, so the normalised classes are excluded
    assert rep["jonas"] and rep["R"] and not rep["linear_complex_x"]


def test_demoulin_constants_classes():
    rep = classify(fam.make_demoulin(G17))
    assert rep["demoulin"] and rep["godeaux_rozet"] and not rep["linear_complex_x"]


def test_pseudospherical_classes():
    # slope 1 would give gamma = -beta, making the R and Jonas conditions coincide
    phi, derivs = fam.sine_gordon_kink(1.5)
    g = GridSpec(65, 65, 1.0, -0.5, 1 / 64, 1 / 64)
    rep = classify(fam.make_pseudospherical("trig", phi, g, derivs))
    assert rep["R"] and not rep["jonas"]


# -- invariant forms and area ------------------------------------------------

def test_invariant_densities_on_constants():
    inv = projective_invariants(fam.make_constant(1, 2, 3, 4, G17))
    assert np.allclose(inv.metric.values, 4.0)
    assert np.allclose(inv.omega1.values, 2.0 ** (1 / 3))


def test_invariants_ruled_degeneration():
    c = Coeffs.from_values(G17, 0.0, 1.0, 0.0, 0.0)
    inv = projective_invariants(c)
    assert inv.metric.sup() == 0.0
    assert inv.cubic[0].sup() == 0.0 and np.allclose(inv.cubic[1].values, 1.0)
    # a needs the logarithm of beta, b only that of gamma
    assert inv.quadratic[1].fully_masked and not inv.quadratic[0].fully_masked


def test_area_constant_and_polynomial():
    assert projective_area(fam.make_constant(1, 1, 0, 0, GridSpec.square(33))) == pytest.approx(1.0, abs=1e-12)
    g = GridSpec.square(129)
    c = Coeffs.from_values(g, lambda X, Y: X + Y, lambda X, Y: X + Y, 0.0, 0.0)
    assert projective_area(c) == pytest.approx(7 / 6, abs=1e-4)


def test_area_half_mask():
    g = GridSpec.square(33)
    X, _ = g.mesh()
    half = X <= 0.5 + 1e-12
    f = ScalarField(g, np.ones(g.shape), half)
    c = Coeffs(f, f, f, f)
    assert projective_area(c) == pytest.approx(0.5, abs=1e-12)
