import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcurrents import variational as var
from qcurrents.expr import VectorExpr
from qcurrents.manifold import BaseManifold
from qcurrents.qfield import (AnalyticSheetBundle, Domain, NormalScalingField, TangentLiftField,
                              VerticalField)

UNIT_SQUARE = Domain.box([0, 0], [1, 1])
FLAT = BaseManifold.flat(2, 1, UNIT_SQUARE)
slopes = st.floats(0.05, 1.5)


def tilted(eps, sheets=("x1",)):
    return var.NormalQField.from_strings(FLAT, [[s] for s in sheets]).scaled(eps)


@settings(max_examples=20, deadline=None)
@given(slopes)
def test_flat_graph_mass_closed_form(eps):
    rep = var.mass_expansion(tilted(eps))
    assert rep.oracle == pytest.approx(math.sqrt(1 + eps ** 2), rel=1e-13)
    assert rep.main_terms["Q_area"] == pytest.approx(1.0)
    assert rep.main_terms["dirichlet"] == pytest.approx(eps ** 2 / 2)
    assert rep.residual == pytest.approx(math.sqrt(1 + eps ** 2) - 1 - eps ** 2 / 2, abs=1e-13)


def test_parabola_arc_length():
    M = BaseManifold.from_strings(["x1**2/2"], Domain.box([0], [1]))
    NF = var.NormalQField.from_strings(M, [["0"]])
    assert var.exact_mass(NF) == pytest.approx((math.sqrt(2) + math.asinh(1)) / 2, rel=1e-12)
    rep = var.mass_expansion(NF)
    assert rep.residual == pytest.approx(0, abs=1e-13)


def test_weighted_mass_with_unit_weight_is_the_mass_expansion():
    M = BaseManifold.from_strings(["(x1**2 + x2**2)/2"], Domain.box([-0.5, -0.5], [0.5, 0.5]))
    NF = var.NormalQField.from_strings(M, [["1 + x1**2"], ["-x1"]]).scaled(0.1)
    rep = var.mass_expansion(NF)
    rep_h, rep_g = var.weighted_mass(NF, h=lambda P: np.ones(len(P)), g=lambda X: np.ones(len(X)))
    assert rep_g.oracle == pytest.approx(rep.oracle, rel=1e-13)
    assert sum(rep_g.main_terms.values()) == pytest.approx(sum(rep.main_terms.values()), rel=1e-13)
    assert rep_h.oracle == pytest.approx(rep.oracle, rel=1e-13)


@settings(max_examples=20, deadline=None)
@given(slopes)
def test_curvilinear_excess_of_a_tilted_plane(eps):
    rep = var.curvilinear_excess(tilted(eps))
    assert rep.oracle == pytest.approx(2 * (math.sqrt(1 + eps ** 2) - 1), rel=1e-12)
    assert rep.main_terms["dirichlet"] == pytest.approx(eps ** 2)


@settings(max_examples=20, deadline=None)
@given(slopes, st.floats(0.2, 1.0))
def test_cylindrical_excess_of_two_opposite_planes(a, s):
    f = AnalyticSheetBundle.from_strings([["x1"], ["-x1"]], Domain.ball([0, 0], 1))
    rep = var.cylindrical_excess(f, s, eps=a)
    area = math.pi * s * s
    assert np.asarray(rep.extra["A"]) == pytest.approx(np.zeros((1, 2)), abs=1e-14)
    assert rep.oracle == pytest.approx(2 * area * (2 * math.sqrt(1 + a * a) - 2), rel=1e-12)
    assert rep.main_terms["G_Df_QA_sq"] == pytest.approx(2 * area * a * a, rel=1e-12)


def test_cylindrical_excess_vanishes_for_one_affine_sheet():
    f = AnalyticSheetBundle.from_strings([["2*x1 - x2/3 + 1"]], Domain.ball([0, 0], 1))
    rep = var.cylindrical_excess(f, 0.5)
    assert rep.oracle == pytest.approx(0, abs=1e-13)
    assert rep.main_terms["G_Df_QA_sq"] == pytest.approx(0, abs=1e-13)


@settings(max_examples=15, deadline=None)
@given(slopes)
def test_ambient_stretch_has_unit_derivative_per_area(c):
    # x1 -> (1 + t) x1 on the graph of y = c x2 multiplies the area by 1 + t
    NF = var.NormalQField.from_strings(FLAT, [[f"{c!r}*x2"]])
    chk = var.fd_variation(var.AmbientDeformation(NF, VectorExpr(["x1", "0", "0"], 2, 1)))
    assert chk.fd == pytest.approx(math.sqrt(1 + c * c), rel=1e-9)
    assert chk.divergence == pytest.approx(math.sqrt(1 + c * c), rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(slopes)
def test_vertical_stretch_closed_form(eps):
    # mass(t) = sqrt(1 + (1 + t)^2 eps^2), derivative eps^2 / sqrt(1 + eps^2)
    exact_value = eps ** 2 / math.sqrt(1 + eps ** 2)
    _, outer = var.outer_variation(tilted(eps), VectorExpr(["1"], 2))
    f = AnalyticSheetBundle.from_strings([["x1"]], UNIT_SQUARE)
    _, graph = var.graph_variation(f, VectorExpr(["y1"], 2, 1), eps=eps)
    for chk in (outer, graph):
        assert chk.divergence == pytest.approx(exact_value, rel=1e-12)
        assert chk.fd == pytest.approx(exact_value, rel=1e-9)


def test_inner_variation_on_a_flat_sheet_is_the_divergence_of_y():
    NF = var.NormalQField.from_strings(FLAT, [["0"]])
    _, chk = var.inner_variation(NF, VectorExpr(["x1", "0"], 2))
    assert chk.divergence == pytest.approx(1.0)
    assert chk.fd == pytest.approx(1.0, rel=1e-10)


def test_zero_and_constant_vertical_fields_do_not_change_the_mass():
    f = AnalyticSheetBundle.from_strings([["x1*x2"], ["x1 - x2**2"]], UNIT_SQUARE)
    NF = var.NormalQField.from_strings(FLAT, [["x1*x2"]]).scaled(0.3)
    for spec, target in [(VerticalField(VectorExpr(["0"], 2, 1)), f),
                         (VerticalField(VectorExpr(["2"], 2, 1)), f),
                         (NormalScalingField(VectorExpr(["0"], 2)), NF),
                         (TangentLiftField(VectorExpr(["0", "0"], 2)), NF)]:
        chk = var.fd_variation(spec, target=target)
        assert chk.fd == pytest.approx(0, abs=1e-12)
        assert chk.divergence == pytest.approx(0, abs=1e-12)
    with pytest.raises(TypeError):
        var.fd_variation(VerticalField(VectorExpr(["0"], 2, 1)), target=NF)


coef = st.integers(-3, 3)


@settings(max_examples=25, deadline=None)
@given(st.lists(coef, min_size=9, max_size=9), slopes)
def test_finite_differences_match_the_divergence_formula(c, eps):
    M = BaseManifold.from_strings(["(x1**2 - x2**2)/4"], Domain.box([-0.5, -0.5], [0.5, 0.5]))
    NF = var.NormalQField.from_strings(M, [["x1*x2 + 1"], ["-x1**2"]]).scaled(0.2 * eps)
    X = VectorExpr([f"{c[0]}*x1*y1 + {c[1]}*x2**2", f"{c[2]}*y1 + {c[3]}*x1*x2",
                    f"{c[4]}*y1**2 + {c[5]}*x2 + {c[6]}*x1*y1 + {c[7]}*x2*y1 + {c[8]}"], 2, 1)
    chk = var.fd_variation(var.AmbientDeformation(NF, X))
    assert chk.agrees(1e-6)


def test_fit_slope_recovers_an_exact_power_law():
    eps = [2.0 ** -k for k in range(1, 7)]
    fit = var.fit_slope(eps, [-3 * e ** 4 for e in eps])
    assert fit.slope == pytest.approx(4.0)
    assert fit.intercept == pytest.approx(math.log(3))
    assert fit.r2 == pytest.approx(1.0)


def test_constant_fit_spread():
    reps = [var.make_report("r", e, {"a": 0.0}, c * e ** 4, e ** 4) for e, c in [(0.5, 2.0), (0.25, 3.0)]]
    C = var.fit_constant(reps)
    assert C.values == pytest.approx((2.0, 3.0))
    assert C.spread == pytest.approx(1.5) and C.stable


def test_quadrature_is_converged_for_analytic_integrands():
    M = BaseManifold.from_strings(["x1**2/2"], Domain.box([-0.5], [0.5]))
    NF = var.NormalQField.from_strings(M, [["1 + x1**2"], ["-x1"]]).scaled(0.1)
    # doubling the node count only moves the values at round-off level
    assert var.quadrature_drift(lambda k: var.mass_expansion(NF, k)) < 1e-12


def test_sweep_fits_the_residual():
    sw = var.sweep(lambda e: var.mass_expansion(tilted(e)), [2.0 ** -k for k in range(4, 10)])
    assert sw.slope.slope == pytest.approx(4.0, abs=0.01)
    assert sw.constant.max <= 1
    assert len(sw.to_json()["reports"]) == 6
