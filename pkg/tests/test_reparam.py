import math
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcurrents import reparam as rp
from qcurrents.manifold import BaseManifold
from qcurrents.mesh import interval_mesh, square_mesh
from qcurrents.qcore import QPoint
from qcurrents.qfield import AnalyticSheetBundle, Domain, PAQMap

small = st.fractions(min_value=Fr(-1, 4), max_value=Fr(1, 4), max_denominator=16)
inner = st.fractions(min_value=Fr(-1, 2), max_value=Fr(1, 2), max_denominator=32)


def zero_map(Q, k=4):
    return PAQMap.from_affine(interval_mesh(-2, 2, k), [([[0]], [0])] * Q)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), inner)
def test_flat_base_and_zero_map_give_zero_offsets(Q, x):
    M = BaseManifold.from_strings(["0"], Domain.box([-1], [1]))
    fib = rp.fiber_intersect(M, zero_map(Q), (x,))
    assert fib.exact and fib.total == Q
    assert fib.offsets() == QPoint.repeated((0, 0), Q)
    f = AnalyticSheetBundle.from_strings([["0"]] * Q, Domain.box([-2], [2]))
    assert rp.fiber_intersect(M, f, (float(x),)).offsets() == QPoint.repeated((0.0, 0.0), Q)


@settings(max_examples=40, deadline=None)
@given(small, inner, st.integers(1, 3))
def test_fiber_of_a_sloped_line_over_the_zero_map(a, x, Q):
    # the normal line through (x, a x) meets y = 0 at (x (1 + a^2), 0)
    M = BaseManifold.from_strings([f"{a.numerator}/{a.denominator}*x1"], Domain.box([-1], [1]))
    fib = rp.fiber_intersect(M, zero_map(Q), (x,))
    assert fib.exact
    assert fib.offsets() == QPoint.repeated((a * a * x, -a * x), Q)


def test_two_sided_ratio_for_a_sloped_line():
    a = 0.2
    M = BaseManifold.from_strings(["x1/5"], Domain.box([-1], [1]))
    res = rp.reparametrize(M, zero_map(2), grid=9, n_random=20, seed=1)
    # |N| = sqrt(1 + a^2) |f - phi| pointwise
    assert res.entry("two_sided_offset").value == pytest.approx(math.sqrt(1 + a * a), rel=1e-12)
    assert res.entry("two_sided_offset").holds
    assert res.max_normal_residual < 1e-14


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_pa_and_analytic_fibers_agree_on_affine_sheets(seed):
    rng = np.random.default_rng(seed)
    c = [Fr(int(v), 40) for v in rng.integers(-4, 5, size=6)]
    maps = [([[c[0], c[1]]], [c[2]]), ([[c[3], c[4]]], [c[5]])]
    F = PAQMap.from_affine(square_mesh(2, (-2, -2), (2, 2)), maps)
    strs = [[f"{A[0][0]}*x1 + {A[0][1]}*x2 + {b[0]}"] for A, b in maps]
    f = AnalyticSheetBundle.from_strings(strs, Domain.box([-2, -2], [2, 2]))
    M = BaseManifold.from_strings(["(x1**2 - x1*x2)/10"], Domain.box([-0.5, -0.5], [0.5, 0.5]))
    x = tuple(Fr(int(v), 16) for v in rng.integers(-8, 9, size=2))
    exact_fib = rp.fiber_intersect(M, F, x, exact_mode=True)
    float_fib = rp.fiber_intersect(M, F, tuple(map(float, x)), exact_mode=False)
    newton = rp.fiber_intersect(M, f, tuple(map(float, x)))
    a, b, n = (np.sort(fb.offsets().as_array(), axis=0) for fb in (exact_fib, float_fib, newton))
    assert a == pytest.approx(b, abs=1e-12)
    assert a == pytest.approx(n, abs=1e-12)


def test_missing_fiber_raises():
    F = PAQMap.from_affine(interval_mesh(0, 1, 2), [([[0]], [0])])
    M = BaseManifold.from_strings(["0"], Domain.box([-1], [2]))
    with pytest.raises(rp.FiberError, match="multiplicity 0"):
        rp.fiber_intersect(M, F, (Fr(3, 2),))


def test_frame_requires_orthogonal_complement():
    with pytest.raises(ValueError, match="orthogonal"):
        rp.Frame(((Fr(1),), (Fr(1),)), ((Fr(0),), (Fr(1),)))


@settings(max_examples=30, deadline=None)
@given(small)
def test_plane_distance_is_the_sine_of_the_angle(a):
    d = rp.plane_distance(rp.Frame.standard(1, 1), rp.Frame.tilted([[a]]))
    assert d == pytest.approx(abs(float(a)) / math.sqrt(1 + float(a) ** 2), abs=1e-15)


@settings(max_examples=20, deadline=None)
@given(small, small)
def test_tilted_line_has_the_rotated_slope(s, l):
    # y = s x seen over the line spanned by (1, l): w / x' = (s - l) / (1 + l s)
    F = PAQMap.from_affine(interval_mesh(-1, 1, 2), [([[s]], [0])])
    T = rp.tilted_reparam(F, rp.Frame.tilted([[l]]), (Fr(-1, 2),), (Fr(1, 2),))
    assert T.chain_equal
    for v in T.g.mesh.vertices:
        assert T.g(v) == QPoint([(v[0] * (s - l) / (1 + l * s),)])


def test_round_trip_returns_the_original_map():
    f1 = PAQMap.from_vertex_values(interval_mesh(-1, 1, 4),
                                   [[(Fr(k, 20),), (Fr(-k * k, 40),)] for k in range(-2, 3)])
    _, _, ok = rp.round_trip(f1, rp.Frame.tilted([[Fr(1, 10)]]), ((Fr(-3, 4),), (Fr(3, 4),)),
                             ((Fr(-1, 2),), (Fr(1, 2),)))
    assert ok


def test_overlarge_tilt_is_rejected():
    F = PAQMap.from_affine(interval_mesh(-1, 1, 2), [([[Fr(-2)]], [0])])
    with pytest.raises(rp.TiltError, match="folds"):
        rp.tilted_reparam(F, rp.Frame.tilted([[Fr(1, 2)]]), (Fr(-1, 4),), (Fr(1, 4),))


def test_sample_points_stay_in_the_domain():
    D = Domain.ball([0.5, 0.5], 0.25)
    X = rp.sample_points(D, grid=5, n_random=100, seed=2)
    assert np.all(D.contains(X))
    assert len(X) == len(D.sample(5)) + 100
    assert np.array_equal(X, rp.sample_points(D, grid=5, n_random=100, seed=2))


@settings(max_examples=25, deadline=None)
@given(small, small, inner)
def test_shifting_an_affine_base_along_its_normal_shifts_the_offsets(a, t, x):
    # q = t (-a, 1) is normal to the line y = a x, so q + M shares the fiber at p
    F = PAQMap.from_vertex_values(interval_mesh(-2, 2, 4), [[(Fr(k * k, 32),), (Fr(-k, 8),)] for k in range(-2, 3)])
    M = BaseManifold.from_strings([f"{a.numerator}/{a.denominator}*x1"], Domain.box([-1], [1]))
    c = t * (a * a + 1)
    Mq = BaseManifold.from_strings([f"{a.numerator}/{a.denominator}*x1 + {c.numerator}/{c.denominator}"],
                                   Domain.box([-2], [2]))
    q = (-t * a, t)
    N = rp.fiber_intersect(M, F, (x,)).offsets()
    Nq = rp.fiber_intersect(Mq, F, (x - t * a,)).offsets()
    assert Nq == N.translate(tuple(-v for v in q))
