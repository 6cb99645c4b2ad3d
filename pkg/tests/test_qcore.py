import math
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from qcurrents import exact
from qcurrents.qcore import (QPoint, decompose_by_gap, diameter, eta, g_brute_force_sq, g_dist, g_matching,
                             hungarian, norm)

coord = st.fractions(min_value=-4, max_value=4, max_denominator=8)


@st.composite
def qpoints(draw, Q=None, n=None):
    Q = Q or draw(st.integers(1, 5))
    n = n or draw(st.integers(1, 3))
    return QPoint([[draw(coord) for _ in range(n)] for _ in range(Q)])


@st.composite
def qpoint_pairs(draw):
    Q, n = draw(st.integers(1, 5)), draw(st.integers(1, 3))
    return draw(qpoints(Q, n)), draw(qpoints(Q, n)), draw(qpoints(Q, n))


def test_order_is_forgotten():
    assert QPoint([[1], [2], [2]]) == QPoint([[2], [1], [2]])
    assert QPoint([[1], [2]]) != QPoint([[1], [1]])


def test_multiplicity_and_support():
    S = QPoint([[0, 1], [0, 1], [2, 0]])
    assert S.multiplicity((0, 1)) == 2
    assert S.multiplicity((2, 0)) == 1
    assert S.multiplicity((5, 5)) == 0
    assert len(S.support()) == 2


def test_metric_rejects_mismatched_sizes():
    with pytest.raises(ValueError, match="cardinality"):
        g_dist(QPoint([[0]]), QPoint([[0], [1]]))
    with pytest.raises(ValueError, match="dimension"):
        g_dist(QPoint([[0]]), QPoint([[0, 1]]))


def test_metric_hand_values():
    # swapping beats the identity pairing: cost (1 - 1)^2 + (0 - 0)^2
    assert g_dist(QPoint([[0], [1]]), QPoint([[1], [0]])) == 0
    assert g_dist(QPoint([[0], [0]]), QPoint([[3], [4]])) == pytest.approx(5.0)
    assert norm(QPoint([[3, 4], [0, 0]])) == pytest.approx(5.0)
    assert eta(QPoint([[Fr(1)], [Fr(2)]])) == (Fr(3, 2),)
    assert diameter(QPoint([[0, 0], [3, 4]])) == pytest.approx(5.0)


@settings(max_examples=200, deadline=None)
@given(qpoint_pairs())
def test_metric_axioms(triple):
    S, T, U = triple
    assert g_dist(S, S) == 0
    assert g_dist(S, T) == g_dist(T, S)
    assert g_dist(S, U) <= g_dist(S, T) + g_dist(T, U) + 1e-12
    assert (g_dist(S, T) == 0) == (S == T)


@settings(max_examples=200, deadline=None)
@given(qpoint_pairs())
def test_hungarian_matches_brute_force_exactly(triple):
    S, T, _ = triple
    assert g_matching(S, T).cost == g_brute_force_sq(S, T)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2 ** 31 - 1))
def test_hungarian_matches_scipy(n, seed):
    C = np.random.default_rng(seed).uniform(-1, 1, size=(n, n))
    perm = hungarian(C.tolist())
    r, c = linear_sum_assignment(C)
    assert sorted(perm) == list(range(n))
    assert sum(C[i, perm[i]] for i in range(n)) == pytest.approx(C[r, c].sum(), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(qpoints(), st.lists(coord, min_size=3, max_size=3))
def test_translation_and_mean(S, v):
    v = v[:S.n]
    T = S.translate(v)
    assert g_dist(S, T) == pytest.approx(math.sqrt(S.Q) * math.sqrt(sum(float(c) ** 2 for c in v)))
    assert eta(T) == tuple(a + b for a, b in zip(eta(S), v))


@settings(max_examples=150, deadline=None)
@given(qpoints(), st.floats(0.05, 2.0))
def test_gap_decomposition(S, h):
    parts = decompose_by_gap(S, h)
    assert sum(p.Q for p in parts) == S.Q
    assert QPoint([x for p in parts for x in p.points]) == S
    for p in parts:
        assert diameter(p) <= 4 * p.Q * h + 1e-12
    for a in range(len(parts)):
        for b in range(a + 1, len(parts)):
            gap = min(math.dist(map(float, x), map(float, y)) for x in parts[a].points for y in parts[b].points)
            assert gap > 4 * h


def test_exact_linear_algebra():
    A = [[Fr(2), Fr(1)], [Fr(1), Fr(3)]]
    assert exact.det(A) == 5
    assert exact.solve(A, [Fr(3), Fr(5)]) == (Fr(4, 5), Fr(7, 5))
    assert exact.rank([[Fr(1), Fr(2)], [Fr(2), Fr(4)]]) == 1
    assert exact.solve([[Fr(1), Fr(2)], [Fr(2), Fr(4)]], [Fr(1), Fr(0)]) is None
    assert exact.permutation_parity([1, 0, 2]) == -1


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_exact_det_matches_float(n, seed):
    rng = np.random.default_rng(seed)
    A = [[Fr(int(rng.integers(-9, 10)), int(rng.integers(1, 5))) for _ in range(n)] for _ in range(n)]
    assert float(exact.det(A)) == pytest.approx(np.linalg.det(np.array(A, dtype=float)), abs=1e-9)
