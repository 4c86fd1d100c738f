"""Dirac pairs, chains, W-transforms, Bäcklund maps and linear-complex maps."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projsurf import congruence as cg
from projsurf import families as fam
from projsurf import frames as fr
from projsurf.core import PreconditionError, derived_quantities
from projsurf.grid import GridSpec, ScalarField

from test_acceptance import liouville_pair_field, r0_field

UNIT = GridSpec.square(33, 0.0, 1.0)


def _profile(s):
    return 0.5 + 0.2 * np.sin(s)


@pytest.fixture(scope="module")
def exp_pair():
    """beta = gamma = 1 with the exact pair u1 = exp(2x + y/2), u2 = 2 u1."""
    c = fam.make_constant(1.0, 1.0, 1.5, 1.5, UNIT)
    dp = cg.solve_dirac(c, lambda y: np.exp(y / 2), lambda x: 2 * np.exp(2 * x))
    return c, dp


# [DERIVED] exponential solution of the Dirac system by hand
def test_dirac_matches_exponential(exp_pair):
    c, dp = exp_pair
    X, Y = UNIT.mesh()
    ex = np.exp(2 * X + Y / 2)
    assert np.max(np.abs(dp.u1.values - ex) / ex) <= 1e-8
    assert np.max(np.abs(dp.u2.values - 2 * ex) / ex) <= 1e-8
    assert dp.defect <= 1e-10
    assert dp.iterations < 50


def test_dirac_residual_is_small(exp_pair):
    c, dp = exp_pair
    assert dp.residual(c).sup() <= 1e-4 * dp.u2.sup()


def test_dirac_rejects_bad_edges():
    c = fam.make_constant(1.0, 1.0, 1.5, 1.5, UNIT)
    with pytest.raises(ValueError):
        cg.solve_dirac(c, np.full(UNIT.ny, np.nan), 1.0)
    with pytest.raises(ValueError):
        cg.solve_dirac(c, np.ones(5), 1.0)


# [DERIVED] A = u1_y, B = u2_x for constant beta, gamma
def test_chain_first_members(exp_pair):
    c, dp = exp_pair
    ch = cg.derived_chain(c, None, dp)
    rel = lambda f, g: np.max(np.abs((f - g).values)) / g.sup()
    assert rel(ch.A, 0.5 * dp.u1) <= 1e-6
    assert rel(ch.B, 2.0 * dp.u2) <= 1e-6


def test_chain_relations_are_consistent(exp_pair):
    c, dp = exp_pair
    ch = cg.derived_chain(c, None, dp)
    rep = cg.chain_residual(ch, dp)
    scale = ch.S.sup()
    for name, (sup, _) in rep.components.items():
        assert sup <= 1e-3 * scale, name


# [TRIVIAL] with H = K = 0 the transform only flips the signs of beta and gamma
def test_vanishing_h_k_flips_signs(exp_pair):
    c, dp = exp_pair
    zero = ScalarField(UNIT, np.zeros(UNIT.shape))
    one = ScalarField(UNIT, np.ones(UNIT.shape))
    ch = cg.Chain(zero, zero, zero, zero, zero, zero, one, c, derived_quantities(c),
                  Sxx=zero, Syy=zero)
    out = cg.w_transform(c, dp, ch)
    assert np.allclose(out.beta.values, -1.0) and np.allclose(out.gamma.values, -1.0)
    assert np.allclose(out.V.values, 1.5) and np.allclose(out.W.values, 1.5)


def test_w_transform_masks_near_zero_of_s(exp_pair):
    c, dp = exp_pair
    ch = cg.derived_chain(c, None, dp)
    S = ch.S.values.copy()
    S[10, 10] = 0.0
    out = cg.w_transform(c, dp, cg.Chain(ch.A, ch.B, ch.P, ch.Q, ch.H, ch.K,
                                         ScalarField(UNIT, S), c, ch.derived))
    assert not out.valid[10, 10] and not out.valid[10, 12] and out.valid[20, 20]


def test_identity_residual_shrinks_with_refinement():
    sups = []
    for n in (33, 65):
        g = GridSpec.square(n, 0.0, 1.0)
        c = fam.make_constant(1.0, 1.0, 1.5, 1.5, g)
        dp = cg.solve_dirac(c, lambda y: np.exp(y / 2), lambda x: 2 * np.exp(2 * x))
        ch = cg.derived_chain(c, None, dp)
        sups.append(cg.identity_residual(c, ch, cg.w_transform(c, dp, ch)).sup())
    assert sups[0] / sups[1] >= 3


def test_transform_radius_recovers_r(exp_pair):
    c, dp = exp_pair
    ch = cg.derived_chain(c, None, dp)
    out = cg.w_transform(c, dp, ch)
    rr = cg.transform_radius(fr.integrate_frame(c), dp, ch, out)
    assert rr.residuals["oldr"] <= 1e-10
    assert rr.residuals["tangency"] <= 1e-10
    assert rr.residuals["W2_x"] <= 1e-2 and rr.residuals["W2_y"] <= 1e-2
    assert rr.residuals["tilder_x"] <= 1e-2 and rr.residuals["tilder_y"] <= 1e-2
    assert rr.r_prime.shape == UNIT.shape + (4,)


def test_transform_radius_needs_wilczynski_frame(exp_pair):
    c, dp = exp_pair
    ch = cg.derived_chain(c, None, dp)
    frame = fr.integrate_frame(c, sel="plucker6")
    with pytest.raises(ValueError):
        cg.transform_radius(frame, dp, ch)


# ---------------------------------------------------------------------------
# Bäcklund maps


def test_isothermal_output_is_exactly_symmetric():
    c = fam.make_constant(1.0, 1.0, 1.5, 1.5, UNIT)
    res = cg.backlund(c, cg.BacklundKind("isothermal", 0.5))
    assert np.array_equal(res.coeffs.beta.values, res.coeffs.gamma.values)
    assert res.report["identity"] <= 1e-5
    out, dp, ch = res
    assert dp is res.dirac and ch is res.chain


@pytest.mark.parametrize("kind,make,lam", [
    ("r0", lambda n: r0_field(GridSpec.square(n, 1.0, 2.0)), 0.7),
    ("r", lambda n: fam.make_rotation(_profile, 0.3, GridSpec.square(n, 0.0, 1.0)), 0.7),
    ("jonas", lambda n: fam.make_minimal(GridSpec.square(n, 0.5, 1.5)), 0.3),
])
def test_backlund_kinds_land_in_their_class(kind, make, lam):
    reports = [cg.backlund(make(n), cg.BacklundKind(kind, lam)).report for n in (33, 65)]
    assert reports[1]["constraint_drift"] <= 1e-8
    assert reports[1]["class_residual"] <= 1e-4
    assert reports[1]["identity"] <= 1e-4
    assert reports[0]["identity"] / reports[1]["identity"] >= 8


def test_r_kind_rejects_non_r_surface():
    with pytest.raises(PreconditionError):
        cg.backlund(fam.make_minimal(GridSpec.square(33, 0.5, 1.5)), cg.BacklundKind("r", 0.3))


def test_r0_kind_needs_unit_beta():
    with pytest.raises(PreconditionError):
        cg.backlund(fam.make_constant(2.0, 1.0, 3.0, 4.0, UNIT), cg.BacklundKind("r0", 0.3))


@pytest.mark.parametrize("args", [("nosuch", 1.0), ("r", float("nan")), ("r", 1.0, {"Z": 1.0})])
def test_backlund_kind_validation(args):
    with pytest.raises(ValueError):
        cg.BacklundKind(*args)


def test_corner_with_zero_v_cannot_be_solved():
    with pytest.raises(PreconditionError):
        cg.corner_state(cg.BacklundKind("r0", 1.0, {"V": 0.0}))


def test_jonas_at_zero_lambda_keeps_default_q():
    s = cg.corner_state(cg.BacklundKind("jonas", 0.0, {"H": 1.0, "K": 1.0}))
    assert s["Q"] == 1.0


finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(variant=st.sampled_from(["r0", "r", "jonas"]), lam=st.floats(0.1, 3),
       U=finite, A=finite, P=finite, V=st.floats(0.2, 3), B=finite, H=finite, K=finite)
def test_corner_state_satisfies_constraint(variant, lam, U, A, P, V, B, H, K):
    corner = {"U": U, "A": A, "P": P, "V": V, "B": B}
    if variant == "jonas":
        corner.update(H=H, K=K)
    try:
        s = cg.corner_state(cg.BacklundKind(variant, lam, corner))
    except PreconditionError:
        return  # S happened to vanish at the corner
    con = cg.quadratic_constraint(variant, lam, s)
    assert abs(con) <= 1e-9 * max(1.0, *(abs(v) for v in s.values())) ** 2


@settings(max_examples=40, deadline=None)
@given(lam=st.floats(-2, 2), U=finite)
def test_r_constraint_reduces_to_r0_when_v_vanishes(lam, U):
    s = {"U": U, "A": 0.3, "P": -0.2, "V": 0.0, "B": 0.1, "Q": 0.7}
    assert cg.quadratic_constraint("r", lam, s) == pytest.approx(cg.quadratic_constraint("r0", lam, s))
    assert cg.quadratic_constraint("isothermal", lam, s) is None


# ---------------------------------------------------------------------------
# linear complexes


def test_rectify_reaches_ruled_surface():
    c, exact = liouville_pair_field(GridSpec.square(33, 1.0, 2.0))
    out, rep = cg.rectify_linear_complex(c, exact=exact)
    assert rep["beta_tilde_sup"] <= 1e-6
    assert rep["constraint_drift"] <= 1e-6
    # default Q gives S = 1 at the corner
    s = rep["corner"]
    assert s["Q"] * s["V"] + (-1.0) * s["U"] ** 2 - 0.5 * s["B"] ** 2 == pytest.approx(1.0)


def test_quadric_map_with_exact_derivatives():
    c, exact = liouville_pair_field(GridSpec.square(33, 1.0, 2.0))
    out, rep = cg.map_to_quadric(c, exact=exact)
    assert max(rep["beta_tilde_sup"], rep["gamma_tilde_sup"]) <= 1e-6
    assert rep["constraint_drift"] <= 1e-8


def test_unknown_exact_key_is_rejected():
    c, _ = liouville_pair_field(GridSpec.square(33, 1.0, 2.0))
    with pytest.raises(ValueError):
        cg.map_to_quadric(c, exact={"k": 0.0})


def test_quadric_corner_must_satisfy_constraint():
    c, exact = liouville_pair_field(GridSpec.square(33, 1.0, 2.0))
    with pytest.raises(PreconditionError):
        cg.map_to_quadric(c, corner={"U": 1.0, "V": 123.0}, exact=exact)


@pytest.mark.parametrize("fn", [cg.rectify_linear_complex, cg.map_to_quadric])
@pytest.mark.parametrize("make", [
    lambda: fam.make_constant(1.0, 1.0, 1.5, 1.5, UNIT),
    lambda: fam.make_rotation(_profile, 0.3, UNIT),
])
def test_linear_complex_maps_need_k_zero(fn, make):
    with pytest.raises(PreconditionError):
        fn(make())

