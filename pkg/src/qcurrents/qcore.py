"""Unordered Q-tuples of points in R^n, the matching metric, averages and
gap clustering.

Coordinates are either all ``Fraction`` (exact mode) or all ``float``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .exact import fstr

#: relative tolerance for coincidence tests between float points
FLOAT_COINCIDENCE_RTOL = 1e-9


def _is_exact(points) -> bool:
    return all(isinstance(c, Fraction) for p in points for c in p)


def _exact_capable(points) -> bool:
    return all(isinstance(c, (int, Fraction)) and not isinstance(c, bool) for p in points for c in p)


@dataclass(frozen=True)
class QPoint:
    """A point of A_Q(R^n): Q points with repetitions, order forgotten."""

    points: tuple[tuple, ...]

    def __init__(self, points: Iterable[Sequence]):
        pts = [tuple(p) for p in points]
        if not pts:
            raise ValueError("a QPoint needs Q >= 1 points")
        n = len(pts[0])
        if any(len(p) != n for p in pts):
            raise ValueError("all points of a QPoint must share one dimension")
        if _exact_capable(pts):
            pts = [tuple(Fraction(c) for c in p) for p in pts]
        else:
            pts = [tuple(float(c) for c in p) for p in pts]
        object.__setattr__(self, "points", tuple(sorted(pts)))

    @classmethod
    def repeated(cls, p: Sequence, q: int) -> "QPoint":
        return cls([tuple(p)] * q)

    @property
    def Q(self) -> int:
        return len(self.points)

    @property
    def n(self) -> int:
        return len(self.points[0])

    @property
    def exact(self) -> bool:
        return _is_exact(self.points)

    def as_array(self) -> np.ndarray:
        return np.array([[float(c) for c in p] for p in self.points], dtype=float)

    def __add__(self, other: "QPoint") -> "QPoint":
        """Multiset sum: a Q1-point plus a Q2-point is a (Q1+Q2)-point."""
        return QPoint(self.points + other.points)

    def translate(self, v: Sequence) -> "QPoint":
        """Every point shifted by v."""
        return QPoint([tuple(a + b for a, b in zip(p, v)) for p in self.points])

    def multiplicity(self, p: Sequence, rtol: float = FLOAT_COINCIDENCE_RTOL) -> int:
        """Number of copies of ``p`` (exact comparison in exact mode)."""
        p = tuple(p)
        if self.exact and all(isinstance(c, Fraction) for c in p):
            return sum(1 for s in self.points if s == p)
        scale = max(1.0, max(abs(float(c)) for s in self.points for c in s))
        return sum(
            1 for s in self.points
            if math.dist([float(c) for c in s], [float(c) for c in p]) <= rtol * scale
        )

    def support(self) -> list[tuple]:
        return sorted(set(self.points))

    def to_json(self) -> list[list]:
        return [[fstr(c) if isinstance(c, Fraction) else c for c in p] for p in self.points]

    @classmethod
    def from_json(cls, data: Sequence[Sequence]) -> "QPoint":
        def conv(c):
            return Fraction(c) if isinstance(c, str) else float(c)
        return cls([[conv(c) for c in p] for p in data])


@dataclass(frozen=True)
class Matching:
    """Witness for the metric: ``permutation[i]`` is the partner of s_i."""

    permutation: tuple[int, ...]
    cost: object = field(compare=False)


def _sqdist(a: Sequence, b: Sequence):
    return sum((x - y) * (x - y) for x, y in zip(a, b))


def hungarian(cost: Sequence[Sequence]) -> tuple[int, ...]:
    """Minimum-cost perfect matching on a square matrix (Kuhn-Munkres with
    potentials). Works for any ordered field, so Fraction costs stay exact."""
    n = len(cost)
    zero = cost[0][0] * 0
    inf = None  # sentinel: larger than everything
    u = [zero] * (n + 1)
    v = [zero] * (n + 1)
    p = [0] * (n + 1)  # p[j] = row matched to column j (1-based)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta, j1 = inf, 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1][j - 1] - u[i0] - v[j]
                if minv[j] is None or cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if delta is None or minv[j] < delta:
                    delta, j1 = minv[j], j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    perm = [0] * n
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    return tuple(perm)


def _check_compatible(S: QPoint, T: QPoint) -> None:
    if S.Q != T.Q:
        raise ValueError(f"cardinality mismatch: Q={S.Q} vs Q={T.Q}")
    if S.n != T.n:
        raise ValueError(f"dimension mismatch: n={S.n} vs n={T.n}")


def g_matching(S: QPoint, T: QPoint) -> Matching:
    _check_compatible(S, T)
    cost = [[_sqdist(s, t) for t in T.points] for s in S.points]
    perm = hungarian(cost)
    return Matching(perm, sum((cost[i][perm[i]] for i in range(S.Q)), cost[0][0] * 0))


def g_metric(S: QPoint, T: QPoint) -> tuple[float, Matching]:
    """Return (G(S, T), optimal matching)."""
    m = g_matching(S, T)
    return math.sqrt(float(m.cost)), m


def g_dist(S: QPoint, T: QPoint) -> float:
    return g_metric(S, T)[0]


def g_brute_force_sq(S: QPoint, T: QPoint):
    """Minimum over all Q! permutations of the squared matching cost."""
    _check_compatible(S, T)
    return min(
        sum((_sqdist(s, T.points[j]) for s, j in zip(S.points, perm)), _sqdist(S.points[0], S.points[0]))
        for perm in itertools.permutations(range(S.Q))
    )


def norm(S: QPoint) -> float:
    """|S| = G(S, Q[[0]])."""
    return math.sqrt(float(sum(_sqdist(p, [0] * S.n) for p in S.points)))


def eta(S: QPoint) -> tuple:
    """Average of the Q points."""
    q = S.Q
    if S.exact:
        return tuple(sum((p[k] for p in S.points), Fraction(0)) / q for k in range(S.n))
    return tuple(sum(p[k] for p in S.points) / q for k in range(S.n))


def diameter(S: QPoint) -> float:
    return max(math.dist([float(c) for c in a], [float(c) for c in b])
               for a in S.points for b in S.points)


def decompose_by_gap(S: QPoint, h: float) -> list[QPoint]:
    """Split S into clusters by chaining steps of length <= 4h.

    Each cluster T_j has diameter <= 4 Q h and distinct clusters are more
    than 4h apart.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    pts = [np.array([float(c) for c in p]) for p in S.points]
    remaining = list(range(S.Q))
    parts: list[QPoint] = []
    while remaining:
        cluster = [remaining.pop(0)]
        frontier = list(cluster)
        while frontier:
            i = frontier.pop()
            near = [j for j in remaining if np.linalg.norm(pts[i] - pts[j]) <= 4 * h]
            for j in near:
                remaining.remove(j)
                cluster.append(j)
                frontier.append(j)
        parts.append(QPoint([S.points[i] for i in sorted(cluster)]))
    return parts
