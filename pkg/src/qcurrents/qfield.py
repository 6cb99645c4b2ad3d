"""Q-valued maps on meshes and on analytic domains.

A :class:`PAQMap` stores, for every simplex, Q affine sheets given by their
values at the simplex vertices (in the simplex's vertex order). Everything
about it is exact rational arithmetic.
"""
from __future__ import annotations

import itertools
from collections import Counter, deque
from dataclasses import dataclass
from functools import lru_cache
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import exact
from .exact import Vec
from .expr import VectorExpr
from .mesh import SimplicialMesh
from .qcore import QPoint

Sheet = tuple[Vec, ...]  # values at the m+1 vertices of one simplex


class CompatibilityError(ValueError):
    pass


class CrossingError(ValueError):
    """Sheets cross inside a simplex; refine() first."""

    def __init__(self, crossings):
        self.crossings = crossings
        super().__init__(
            f"{len(crossings)} interior sheet crossings, e.g. simplex {crossings[0][0]} "
            f"sheets {crossings[0][1]}; call refine() so that crossings lie on faces"
        )


def _restrict(simplex: Sequence[int], sheet: Sheet, face: Sequence[int]) -> tuple[Vec, ...]:
    pos = {v: k for k, v in enumerate(simplex)}
    return tuple(sheet[pos[v]] for v in face)


@dataclass(frozen=True)
class PAQMap:
    """Piecewise-affine Q-valued map: ``sheets[s][j][k]`` is the value of
    sheet j of simplex s at its k-th vertex."""

    mesh: SimplicialMesh
    sheets: tuple[tuple[Sheet, ...], ...]

    def __init__(self, mesh: SimplicialMesh, sheets, check: bool = True):
        object.__setattr__(self, "mesh", mesh)
        conv = tuple(
            tuple(tuple(exact.vec(v) for v in sh) for sh in simp_sheets)
            for simp_sheets in sheets
        )
        object.__setattr__(self, "sheets", conv)
        if check:
            self.validate()

    @property
    def Q(self) -> int:
        return len(self.sheets[0])

    @property
    def n(self) -> int:
        return len(self.sheets[0][0][0])

    @property
    def m(self) -> int:
        return self.mesh.m

    def validate(self) -> None:
        if len(self.sheets) != len(self.mesh.simplices):
            raise CompatibilityError("need one sheet list per simplex")
        Q, n = self.Q, self.n
        for s, sh in enumerate(self.sheets):
            if len(sh) != Q:
                raise CompatibilityError(f"simplex {s} has {len(sh)} sheets, expected {Q}")
            for j in sh:
                if len(j) != self.m + 1 or any(len(v) != n for v in j):
                    raise CompatibilityError(f"simplex {s}: malformed sheet values")
        bad = self.incompatible_faces()
        if bad:
            raise CompatibilityError(f"sheet multisets disagree on faces {bad[:5]}")

    def face_values(self, s: int, face: Sequence[int]) -> Counter:
        simp = self.mesh.simplices[s]
        return Counter(_restrict(simp, sh, face) for sh in self.sheets[s])

    def incompatible_faces(self) -> list[tuple[int, ...]]:
        bad = []
        for key, inc in self.mesh.face_incidence.items():
            if len(inc) == 2 and self.face_values(inc[0][0], key) != self.face_values(inc[1][0], key):
                bad.append(key)
        return bad

    # -- affine data -------------------------------------------------------
    def gradient(self, s: int, j: int) -> np.ndarray:
        """D f_j on simplex s as an (n, d) float matrix (intrinsic for
        embedded meshes: zero on the normal directions)."""
        E = np.array([[float(c) for c in e] for e in self.mesh.edge_vectors(s)]).T  # (d, m)
        V = np.array([[float(c) for c in exact.sub(v, self.sheets[s][j][0])]
                      for v in self.sheets[s][j][1:]]).T  # (n, m)
        return V @ np.linalg.pinv(E)

    def exact_gradient(self, s: int, j: int) -> tuple[Vec, ...]:
        """Rows of D f_j (n x m) exactly; full-dimensional meshes only."""
        E = self.mesh.edge_vectors(s)
        m = self.m
        A = [[E[k][i] for k in range(m)] for i in range(m)]  # columns edges
        At = [[A[i][k] for i in range(m)] for k in range(m)]  # rows edges
        rows = []
        for c in range(self.n):
            rhs = [self.sheets[s][j][k + 1][c] - self.sheets[s][j][0][c] for k in range(m)]
            g = exact.solve(At, rhs)
            rows.append(g)
        return tuple(rows)

    def sheet_at(self, s: int, j: int, lam: Sequence[Fraction]) -> Vec:
        """Value of sheet j of simplex s at barycentric coordinates lam."""
        sh = self.sheets[s][j]
        return tuple(sum((l * v[c] for l, v in zip(lam, sh)), Fraction(0)) for c in range(self.n))

    def __call__(self, x: Sequence) -> QPoint:
        x = exact.vec(x)
        for s in range(len(self.mesh.simplices)):
            lam = self.mesh.barycentric(s, x)
            if lam is not None and all(l >= 0 for l in lam):
                return QPoint([self.sheet_at(s, j, lam) for j in range(self.Q)])
        raise ValueError(f"point {x} outside the mesh")

    def restrict_to_boundary(self) -> "PAQMap":
        """The map on the boundary mesh (m >= 2)."""
        bmesh = self.mesh.boundary_mesh()
        sheets = []
        for f, _, s in self.mesh.boundary_faces:
            simp = self.mesh.simplices[s]
            sheets.append([_restrict(simp, sh, f) for sh in self.sheets[s]])
        return PAQMap(bmesh, sheets)

    def to_json(self) -> dict:
        d = self.mesh.to_json()
        d["sheets"] = [
            [[[exact.fstr(c) for c in v] for v in sh] for sh in simp] for simp in self.sheets
        ]
        return d

    @classmethod
    def from_json(cls, data: dict) -> "PAQMap":
        return cls(SimplicialMesh.from_json(data), data["sheets"])

    @classmethod
    def from_vertex_values(cls, mesh: SimplicialMesh, values) -> "PAQMap":
        """Globally labelled sheets: ``values[v][j]`` is sheet j at vertex v."""
        Q = len(values[0])
        sheets = [[[values[v][j] for v in simp] for j in range(Q)] for simp in mesh.simplices]
        return cls(mesh, sheets)

    @classmethod
    def from_affine(cls, mesh: SimplicialMesh, maps) -> "PAQMap":
        """Sheets x -> A_j x + b_j given as (A_j, b_j) pairs with rational entries."""
        vals = []
        for v in mesh.vertices:
            row = []
            for A, b in maps:
                row.append(tuple(exact.dot(exact.vec(a), v) + exact.frac(bb) for a, bb in zip(A, b)))
            vals.append(row)
        return cls.from_vertex_values(mesh, vals)


# -- interior crossings ------------------------------------------------------

def _positive_solution_support(G: list[Vec]) -> set[int]:
    """Indices k for which some point of {l >= 0, sum l = 1, sum_k l_k G_k = 0}
    has l_k > 0 (union of vertex supports; exact)."""
    K = len(G)
    n = len(G[0])
    covered: set[int] = set()
    for r in range(1, K + 1):
        for S in itertools.combinations(range(K), r):
            rows = [[G[k][c] for k in S] for c in range(n)] + [[Fraction(1)] * r]
            if exact.rank(rows) < r:
                continue
            # unique solution: pick r independent rows
            sol = None
            for sub in itertools.combinations(range(len(rows)), r):
                A = [rows[i] for i in sub]
                if exact.det(A) != 0:
                    rhs = [Fraction(0)] * len(rows)
                    rhs[-1] = Fraction(1)
                    sol = exact.solve(A, [rhs[i] for i in sub])
                    break
            if sol is None or any(l <= 0 for l in sol):
                continue
            # verify all equations (the chosen subsystem may not include all)
            ok = all(sum((row[i] * sol[i] for i in range(r)), Fraction(0)) == (1 if ri == len(rows) - 1 else 0)
                     for ri, row in enumerate(rows))
            if ok:
                covered.update(S)
    return covered


@lru_cache(maxsize=1 << 16)
def _crosses_inside(G: tuple[Vec, ...]) -> bool:
    """Whether the affine difference with vertex values G vanishes somewhere
    in the open simplex. Cached: refinement rescans unchanged simplices."""
    return len(_positive_solution_support(list(G))) == len(G)


def interior_crossings(F: PAQMap) -> list[tuple[int, tuple[int, int]]]:
    """(simplex, (j, j')) for non-identical sheets agreeing somewhere in the
    open simplex."""
    out = []
    K = F.m + 1
    for s, sheets in enumerate(F.sheets):
        for j, jj in itertools.combinations(range(F.Q), 2):
            if sheets[j] == sheets[jj]:
                continue
            if _crosses_inside(tuple(exact.sub(sheets[j][k], sheets[jj][k]) for k in range(K))):
                out.append((s, (j, jj)))
    return out


def _zero_points_on_edges(F: PAQMap, s: int, j: int, jj: int) -> list[tuple[tuple[int, int], Fraction]]:
    """Points t in (0,1) on edges (a, b) of simplex s where sheets j, jj agree,
    as (edge with global vertex ids, parameter from a to b)."""
    simp = F.mesh.simplices[s]
    out = []
    for ka, kb in itertools.combinations(range(F.m + 1), 2):
        ga = exact.sub(F.sheets[s][j][ka], F.sheets[s][jj][ka])
        gb = exact.sub(F.sheets[s][j][kb], F.sheets[s][jj][kb])
        # g(t) = (1-t) ga + t gb = 0
        t = None
        for c in range(F.n):
            if ga[c] != gb[c]:
                t = ga[c] / (ga[c] - gb[c])
                break
        if t is None or not (0 < t < 1):
            continue
        if all((1 - t) * ga[c] + t * gb[c] == 0 for c in range(F.n)):
            out.append(((simp[ka], simp[kb]), t))
    return out


def _split_edge(F: PAQMap, a: int, b: int, t: Fraction) -> PAQMap:
    mesh = F.mesh
    p = tuple((1 - t) * x + t * y for x, y in zip(mesh.vertices[a], mesh.vertices[b]))
    verts = list(mesh.vertices) + [p]
    new = len(verts) - 1
    simplices, sheets = [], []
    for s, simp in enumerate(mesh.simplices):
        if a in simp and b in simp:
            ia, ib = simp.index(a), simp.index(b)
            for replaced in (ia, ib):
                ns = list(simp)
                ns[replaced] = new
                simplices.append(ns)
                sheets.append([
                    [sh[k] if k != replaced else
                     tuple((1 - t) * x + t * y for x, y in zip(sh[ia], sh[ib]))
                     for k in range(len(simp))]
                    for sh in F.sheets[s]
                ])
        else:
            simplices.append(list(simp))
            sheets.append(F.sheets[s])
    return PAQMap(SimplicialMesh(verts, simplices, check=False), sheets, check=False)


def _split_at_point(F: PAQMap, s: int, lam: Sequence[Fraction]) -> PAQMap:
    mesh = F.mesh
    simp = mesh.simplices[s]
    p = tuple(sum((l * v[c] for l, v in zip(lam, mesh.coords(s))), Fraction(0)) for c in range(mesh.d))
    verts = list(mesh.vertices) + [p]
    new = len(verts) - 1
    simplices = [list(x) for i, x in enumerate(mesh.simplices) if i != s]
    sheets = [x for i, x in enumerate(F.sheets) if i != s]
    for k in range(len(simp)):
        ns = list(simp)
        ns[k] = new
        simplices.append(ns)
        sheets.append([[sh[i] if i != k else F.sheet_at(s, j, lam) for i in range(len(simp))]
                       for j, sh in enumerate(F.sheets[s])])
    return PAQMap(SimplicialMesh(verts, simplices, check=False), sheets, check=False)


def refine(F: PAQMap, max_steps: int = 10_000) -> PAQMap:
    """Subdivide until sheets only cross on faces (m <= 2).

    Zero segments of sheet differences are made into mesh edges by splitting
    both edges they cross (conforming, so neighbours split too); isolated
    interior coincidence points become vertices.
    """
    if F.m > 2:
        raise NotImplementedError("refinement is implemented for m <= 2")
    for _ in range(max_steps):
        cr = interior_crossings(F)
        if not cr:
            F.validate()
            return F
        s, (j, jj) = cr[0]
        pts = _zero_points_on_edges(F, s, j, jj)
        if pts:
            # split every crossing of the zero segment at once: the second
            # split joins its new vertex to the first, so the segment becomes
            # an edge (one split at a time can creep towards a point forever)
            for (a, b), t in pts:
                F = _split_edge(F, a, b, t)
            continue
        # isolated point: solve for it exactly
        K = F.m + 1
        G = [exact.sub(F.sheets[s][j][k], F.sheets[s][jj][k]) for k in range(K)]
        rows = [[G[k][c] for k in range(K)] for c in range(F.n)] + [[Fraction(1)] * K]
        lam = None
        for sub in itertools.combinations(range(len(rows)), K):
            A = [rows[i] for i in sub]
            if exact.det(A) != 0:
                lam = exact.solve(A, [Fraction(1) if i == len(rows) - 1 else Fraction(0) for i in sub])
                break
        F = _split_at_point(F, s, lam)
    raise RuntimeError("refinement did not terminate")


# -- decomposition -----------------------------------------------------------

@dataclass(frozen=True)
class Region:
    """Simplices carrying a consistent labelling; ``labels[s][j]`` is the
    local sheet index of selection j on simplex s."""

    simplices: tuple[int, ...]
    labels: dict

    def selection(self, F: PAQMap, j: int) -> dict[int, Sheet]:
        return {s: F.sheets[s][self.labels[s][j]] for s in self.simplices}


def _face_matching(F: PAQMap, a: int, b: int, face) -> list[int] | None:
    """Unique (up to identical sheets) bijection sheet of a -> sheet of b
    agreeing on face; None when ambiguous."""
    sa, sb = F.mesh.simplices[a], F.mesh.simplices[b]
    ra = [_restrict(sa, sh, face) for sh in F.sheets[a]]
    rb = [_restrict(sb, sh, face) for sh in F.sheets[b]]
    perm = [None] * F.Q
    for val in set(ra):
        ia = [i for i in range(F.Q) if ra[i] == val]
        ib = [i for i in range(F.Q) if rb[i] == val]
        if len(ia) != len(ib):
            return None
        if len(ia) > 1:
            if len({F.sheets[a][i] for i in ia}) > 1 or len({F.sheets[b][i] for i in ib}) > 1:
                return None
        for x, y in zip(ia, ib):
            perm[x] = y
    return perm


def _labels_equivalent(F: PAQMap, s: int, l1: Sequence[int], l2: Sequence[int]) -> bool:
    return all(F.sheets[s][x] == F.sheets[s][y] for x, y in zip(l1, l2))


def decompose(F: PAQMap) -> list[Region]:
    """Maximal face-connected regions with a consistent global labelling.

    Faces across which the sheet matching is ambiguous (two different sheets
    meeting on the face) separate regions; faces closing a loop with a
    non-trivial monodromy are cut as well.
    """
    cr = interior_crossings(F)
    if cr:
        raise CrossingError(cr)
    cut: set[tuple[int, ...]] = set()
    while True:
        regions, bad = _grow_regions(F, cut)
        if not bad:
            return regions
        cut |= bad


def _grow_regions(F: PAQMap, cut):
    nb = F.mesh.neighbors
    seen: dict[int, list[int]] = {}
    regions = []
    bad = set()
    for start in range(len(F.mesh.simplices)):
        if start in seen:
            continue
        seen[start] = list(range(F.Q))
        members = [start]
        queue = deque([start])
        while queue:
            a = queue.popleft()
            for b, face in nb.get(a, []):
                if face in cut:
                    continue
                perm = _face_matching(F, a, b, face)
                if perm is None:
                    continue
                lb = [perm[i] for i in seen[a]]
                if b in seen:
                    if b in members and not _labels_equivalent(F, b, seen[b], lb):
                        bad.add(face)
                    continue
                seen[b] = lb
                members.append(b)
                queue.append(b)
        regions.append(Region(tuple(sorted(members)), {s: tuple(seen[s]) for s in members}))
    return regions, bad


def recombine(F: PAQMap, regions: Sequence[Region]) -> PAQMap:
    """Rebuild the map from region selections (inverse of decompose)."""
    sheets: list = [None] * len(F.mesh.simplices)
    for R in regions:
        for s in R.simplices:
            sheets[s] = [R.selection(F, j)[s] for j in range(F.Q)]
    return PAQMap(F.mesh, sheets)


# -- Lipschitz constant --------------------------------------------------------

@dataclass(frozen=True)
class LipschitzReport:
    value: float
    per_simplex: tuple[float, ...]
    upper_bound_only: bool  # True when the domain is not known to be convex


def simplex_lipschitz(F: PAQMap, s: int) -> float:
    """Operator norm of the stacked sheet gradients on simplex s: the exact
    metric Lipschitz constant of x -> sum_j [[f_j(x)]] on that simplex near
    points where the sheets are distinct."""
    D = np.vstack([F.gradient(s, j) for j in range(F.Q)])
    return float(np.linalg.norm(D, 2)) if D.size else 0.0


def lipschitz_report(F: PAQMap, convex_domain: bool | None = None) -> LipschitzReport:
    per = tuple(simplex_lipschitz(F, s) for s in range(len(F.mesh.simplices)))
    if convex_domain is None:
        convex_domain = F.mesh.d == F.mesh.m
    return LipschitzReport(max(per), per, not convex_domain)


def lipschitz_constant(F: PAQMap) -> float:
    """Least L with G(F(x), F(y)) <= L |x - y| on a convex meshed domain.

    On each simplex the increment is controlled by the stacked gradient norm,
    and along a segment the metric increments add up; the bound is attained
    where the sheets are distinct, so the maximum over simplices is exact.
    """
    return lipschitz_report(F).value


# -- analytic sheets -----------------------------------------------------------

@dataclass(frozen=True)
class Domain:
    """Box [lo, hi] or ball B_radius(center)."""

    kind: str
    lo: tuple[float, ...] = ()
    hi: tuple[float, ...] = ()
    center: tuple[float, ...] = ()
    radius: float = 0.0

    @classmethod
    def box(cls, lo, hi) -> "Domain":
        return cls("box", tuple(float(a) for a in lo), tuple(float(b) for b in hi))

    @classmethod
    def ball(cls, center, radius) -> "Domain":
        return cls("ball", center=tuple(float(c) for c in center), radius=float(radius))

    @property
    def m(self) -> int:
        return len(self.lo) if self.kind == "box" else len(self.center)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            return np.all((x >= np.array(self.lo)) & (x <= np.array(self.hi)), axis=-1)
        return np.linalg.norm(x - np.array(self.center), axis=-1) <= self.radius

    def quadrature(self, n: int):
        from . import quadrature as qd
        if self.kind == "box":
            return qd.gauss_box(self.lo, self.hi, n)
        return qd.ball_rule(self.center, self.radius, n)

    def sample(self, k: int) -> np.ndarray:
        """Uniform grid with k points per axis, clipped to the domain."""
        if self.kind == "box":
            axes = [np.linspace(a, b, k) for a, b in zip(self.lo, self.hi)]
        else:
            axes = [np.linspace(c - self.radius, c + self.radius, k) for c in self.center]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        return pts[self.contains(pts)]


@dataclass(frozen=True)
class AnalyticSheetBundle:
    """Q closed-form sheets f_i: Omega subset R^m -> R^n."""

    sheets: tuple[VectorExpr, ...]
    domain: Domain

    @classmethod
    def from_strings(cls, sheets: Sequence[Sequence[str]], domain: Domain) -> "AnalyticSheetBundle":
        m = domain.m
        return cls(tuple(VectorExpr(list(s), m) for s in sheets), domain)

    @property
    def Q(self) -> int:
        return len(self.sheets)

    @property
    def n(self) -> int:
        return self.sheets[0].dim_out

    @property
    def m(self) -> int:
        return self.domain.m

    def value(self, x) -> np.ndarray:
        """(..., Q, n)"""
        return np.stack([f.value(x) for f in self.sheets], axis=-2)

    def jac(self, x) -> np.ndarray:
        """(..., Q, n, m)"""
        return np.stack([f.jac(x) for f in self.sheets], axis=-3)

    def hess(self, x) -> np.ndarray:
        """(..., Q, n, m, m)"""
        return np.stack([f.hess(x) for f in self.sheets], axis=-4)

    def scaled(self, eps) -> "AnalyticSheetBundle":
        import sympy as sp
        e = sp.nsimplify(eps, rational=True)
        return AnalyticSheetBundle(
            tuple(VectorExpr([e * c for c in f.exprs], f.nx) for f in self.sheets), self.domain
        )

    @property
    def is_polynomial(self) -> bool:
        return all(f.is_polynomial for f in self.sheets)

    def qpoint(self, x) -> QPoint:
        return QPoint(self.value(np.asarray(x, dtype=float)))

    def to_json(self) -> dict:
        return {"sheets": [f.to_json() for f in self.sheets], "domain": self.domain.__dict__}


def sample_to_pa(f: AnalyticSheetBundle, mesh: SimplicialMesh) -> PAQMap:
    """Vertex interpolation of each sheet with its global label.

    Sheets are labelled globally, so the face multisets agree by
    construction. Polynomial sheets with rational coefficients are evaluated
    exactly; others are rounded to the nearest double and then held exactly.
    """
    if f.is_polynomial:
        vals = [[sh.exact_value(v) for sh in f.sheets] for v in mesh.vertices]
    else:
        X = mesh.as_float()
        V = f.value(X)
        vals = [[tuple(Fraction(float(c)) for c in V[i, j]) for j in range(f.Q)]
                for i in range(len(mesh.vertices))]
    return PAQMap.from_vertex_values(mesh, vals)


# -- vector fields for first variations ----------------------------------------

@dataclass(frozen=True)
class VerticalField:
    """chi(x, y) = (0, zeta(x, y)) on R^m x R^n."""

    zeta: VectorExpr  # in x1..xm, y1..yn, with n components


@dataclass(frozen=True)
class NormalScalingField:
    """X(p) = phi(P(p)) (p - P(p)) with P the nearest-point projection; phi
    is given in chart coordinates on Omega."""

    phi: VectorExpr  # scalar in x1..xm


@dataclass(frozen=True)
class TangentLiftField:
    """X(p) = Y(P(p)); Y is given in chart coordinates as the pushforward
    D Phi(x) y(x) of a field y on Omega."""

    y: VectorExpr  # m components in x1..xm


VectorFieldSpec = VerticalField | NormalScalingField | TangentLiftField
