"""Integer rectifiable currents carried by oriented rational simplices.

A :class:`SimplicialCurrent` maps canonical cell keys (vertex tuples sorted
lexicographically) to nonzero integer multiplicities; the orientation of a
cell given in another vertex order is absorbed into the sign of the
multiplicity through the parity of the sorting permutation. Boundaries,
push-forwards and cones are exact.

Two chains can represent the same current with different cells (for
instance after refining a triangle). :func:`currents_equal` and
:func:`mass` compare and measure through the common refinement of
overlapping cells (implemented for m <= 2), while :func:`chain_mass` sums
|multiplicity| x volume cell by cell.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from . import exact
from .exact import Vec
from .qcore import decompose_by_gap, eta, QPoint
from .qfield import PAQMap, decompose, lipschitz_constant, lipschitz_report
from .mesh import SimplicialMesh, canonical, cube_boundary_mesh, oriented_faces
from . import quadrature as qd

Cell = tuple[Vec, ...]


def _cell_key(vertices: Sequence[Vec]) -> tuple[Cell, int]:
    return canonical([tuple(v) for v in vertices])


def _has_repeats(vertices: Sequence[Vec]) -> bool:
    return len(set(vertices)) < len(vertices)


def cell_volume_sq(cell: Sequence[Vec]) -> Fraction:
    """(m! vol)^2 of a cell."""
    if len(cell) == 1:
        return Fraction(1)
    return exact.gram_det([exact.sub(p, cell[0]) for p in cell[1:]])


def cell_volume(cell: Sequence[Vec]) -> float:
    m = len(cell) - 1
    return math.sqrt(float(cell_volume_sq(cell))) / math.factorial(m)


@dataclass(frozen=True)
class SimplicialCurrent:
    """Finite integer combination of oriented m-simplices in R^N."""

    m: int
    N: int
    cells: dict = field(hash=False)  # canonical Cell -> nonzero int

    @classmethod
    def from_cells(cls, m: int, N: int, items: Iterable[tuple[Sequence, int]]) -> "SimplicialCurrent":
        """Sum oriented cells; ``items`` yields (vertex tuple, multiplicity).
        Cells with repeated vertices are zero and skipped."""
        acc: dict = defaultdict(int)
        for verts, mult in items:
            verts = tuple(exact.vec(v) for v in verts)
            if len(verts) != m + 1:
                raise ValueError(f"expected {m + 1} vertices, got {len(verts)}")
            if _has_repeats(verts):
                continue
            key, sgn = _cell_key(verts)
            acc[key] += sgn * mult
        return cls(m, N, {k: v for k, v in sorted(acc.items()) if v != 0})

    @classmethod
    def zero(cls, m: int, N: int) -> "SimplicialCurrent":
        return cls(m, N, {})

    def __bool__(self) -> bool:
        return bool(self.cells)

    def __len__(self) -> int:
        return len(self.cells)

    def items(self):
        return self.cells.items()

    def _check(self, other: "SimplicialCurrent") -> None:
        if (self.m, self.N) != (other.m, other.N):
            raise ValueError(f"dimension mismatch: ({self.m}, {self.N}) vs ({other.m}, {other.N})")

    def __add__(self, other: "SimplicialCurrent") -> "SimplicialCurrent":
        self._check(other)
        return SimplicialCurrent.from_cells(self.m, self.N, itertools.chain(self.items(), other.items()))

    def __neg__(self) -> "SimplicialCurrent":
        return SimplicialCurrent(self.m, self.N, {k: -v for k, v in self.cells.items()})

    def __sub__(self, other: "SimplicialCurrent") -> "SimplicialCurrent":
        return self + (-other)

    def __mul__(self, k: int) -> "SimplicialCurrent":
        return SimplicialCurrent.from_cells(self.m, self.N, ((c, k * v) for c, v in self.items()))

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        """Chain equality: identical canonical cells and multiplicities."""
        if not isinstance(other, SimplicialCurrent):
            return NotImplemented
        return (self.m, self.N) == (other.m, other.N) and self.cells == other.cells

    def diff(self, other: "SimplicialCurrent") -> dict:
        """Cells whose multiplicities differ: key -> (self, other)."""
        keys = set(self.cells) | set(other.cells)
        return {k: (self.cells.get(k, 0), other.cells.get(k, 0))
                for k in sorted(keys) if self.cells.get(k, 0) != other.cells.get(k, 0)}

    def map_vertices(self, f: Callable[[Vec], Vec], N: int | None = None) -> "SimplicialCurrent":
        """Push forward through a map applied to vertices (exact for affine f)."""
        return SimplicialCurrent.from_cells(
            self.m, N if N is not None else self.N,
            ((tuple(f(v) for v in c), k) for c, k in self.items()),
        )

    def to_json(self) -> dict:
        return {
            "dim": self.m,
            "ambient": self.N,
            "cells": [
                {"vertices": [[exact.fstr(c) for c in v] for v in cell], "multiplicity": k}
                for cell, k in self.items()
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SimplicialCurrent":
        return cls.from_cells(
            int(data["dim"]), int(data["ambient"]),
            ((c["vertices"], int(c["multiplicity"])) for c in data["cells"]),
        )


# -- boundary, cones -------------------------------------------------------------

def boundary(T: SimplicialCurrent) -> SimplicialCurrent:
    """Alternating sum of faces; interior faces cancel exactly."""
    if T.m < 1:
        raise ValueError("boundary needs m >= 1")
    items = []
    for cell, k in T.items():
        for face, sgn in oriented_faces(cell):
            items.append((face, sgn * k))
    return SimplicialCurrent.from_cells(T.m - 1, T.N, items)


def cone(p: Sequence, T: SimplicialCurrent) -> SimplicialCurrent:
    """[[p]] x T: join of p with every cell (cells through p vanish)."""
    p = exact.vec(p)
    return SimplicialCurrent.from_cells(T.m + 1, T.N, (((p,) + cell, k) for cell, k in T.items()))


# -- push-forward --------------------------------------------------------------

@dataclass(frozen=True)
class PushForwardReport:
    current: SimplicialCurrent
    dropped: int  # image cells discarded as degenerate
    raw: tuple  # (oriented image vertices, sign, (simplex, sheet)) for kept cells


def _domain_sign(mesh: SimplicialMesh, s: int) -> int:
    return mesh.orientation_sign(s) if mesh.d == mesh.m else 1


def push_forward_report(F: PAQMap, keep_degenerate: bool = False) -> PushForwardReport:
    """T_F = sum over simplices and sheets of the oriented image simplex.

    With ``keep_degenerate`` only images with repeated vertices are dropped;
    flat-but-distinct images stay in the chain, which makes chain-level
    identities such as boundary commutation hold cell by cell.
    """
    mesh = F.mesh
    items, raw, dropped = [], [], 0
    for s in range(len(mesh.simplices)):
        sgn = _domain_sign(mesh, s)
        for j, sheet in enumerate(F.sheets[s]):
            img = tuple(sheet)
            degenerate = _has_repeats(img) if keep_degenerate else cell_volume_sq(img) == 0
            if degenerate:
                dropped += 1
                continue
            items.append((img, sgn))
            raw.append((img, sgn, (s, j)))
    T = SimplicialCurrent.from_cells(F.m, F.n, items)
    return PushForwardReport(T, dropped, tuple(raw))


def push_forward(F: PAQMap, keep_degenerate: bool = False) -> SimplicialCurrent:
    return push_forward_report(F, keep_degenerate).current


def graph_map(F: PAQMap) -> PAQMap:
    """x -> sum_j [[(x, f_j(x))]] as a PAQMap into R^{d+n}."""
    mesh = F.mesh
    sheets = []
    for s, simp in enumerate(mesh.simplices):
        sheets.append([[mesh.vertices[v] + sh[k] for k, v in enumerate(simp)] for sh in F.sheets[s]])
    return PAQMap(mesh, sheets, check=False)


def graph_current(F: PAQMap, keep_degenerate: bool = False) -> SimplicialCurrent:
    return push_forward(graph_map(F), keep_degenerate)


def boundary_push_forward(F: PAQMap, keep_degenerate: bool = False) -> SimplicialCurrent:
    """T_{F|boundary}: push-forward of the restriction to the oriented boundary."""
    mesh = F.mesh
    items = []
    pos_cache = {}
    for face, fsgn, s in mesh.boundary_faces:
        simp = mesh.simplices[s]
        pos = pos_cache.setdefault(s, {v: k for k, v in enumerate(simp)})
        sgn = fsgn * _domain_sign(mesh, s)
        for sheet in F.sheets[s]:
            img = tuple(sheet[pos[v]] for v in face)
            if len(img) > 1:
                degenerate = _has_repeats(img) if keep_degenerate else cell_volume_sq(img) == 0
                if degenerate:
                    continue
            items.append((img, sgn))
    return SimplicialCurrent.from_cells(F.m - 1, F.n, items)


def graph_boundary_current(F: PAQMap, keep_degenerate: bool = False) -> SimplicialCurrent:
    return boundary_push_forward(graph_map(F), keep_degenerate)


def pullback_affine(F: PAQMap, A, b) -> PAQMap:
    """F o Phi on the mesh Phi^{-1}(mesh), Phi(x) = A x + b (A invertible,
    rational). Vertex values are unchanged."""
    A = [exact.vec(r) for r in A]
    b = exact.vec(b)
    verts = []
    for v in F.mesh.vertices:
        x = exact.solve(A, exact.sub(v, b))
        if x is None:
            raise ValueError("change of variables is singular")
        verts.append(x)
    return PAQMap(SimplicialMesh(verts, F.mesh.simplices), F.sheets)


# -- overlay: common refinement of overlapping cells (m <= 2) ----------------------

def _plane_key(cell: Cell):
    rows, piv = exact.rref([exact.sub(p, cell[0]) for p in cell[1:]])
    off = list(cell[0])
    for r, pc in zip(rows, piv):
        c = off[pc]
        off = [o - c * x for o, x in zip(off, r)]
    return tuple(rows), tuple(piv), tuple(off)


def _area2(poly: Sequence[tuple[Fraction, Fraction]]) -> Fraction:
    """Twice the signed area (shoelace)."""
    s = Fraction(0)
    for (x1, y1), (x2, y2) in zip(poly, poly[1:] + poly[:1]):
        s += x1 * y2 - x2 * y1
    return s


def _clip(poly, a, b, c, keep_positive: bool):
    """Part of a convex polygon with a x + b y - c >= 0 (or <= 0)."""
    def val(p):
        v = a * p[0] + b * p[1] - c
        return v if keep_positive else -v

    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        vp, vq = val(p), val(q)
        if vp >= 0:
            out.append(p)
        if (vp > 0 and vq < 0) or (vp < 0 and vq > 0):
            t = vp / (vp - vq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    # drop consecutive duplicates
    dedup = []
    for p in out:
        if not dedup or dedup[-1] != p:
            dedup.append(p)
    if len(dedup) > 1 and dedup[0] == dedup[-1]:
        dedup.pop()
    return dedup if len(dedup) >= 3 and _area2(dedup) != 0 else []


def _ccw(tri):
    return tri if _area2(list(tri)) > 0 else [tri[0], tri[2], tri[1]]


def _edge_lines(tri):
    out = []
    for p, q in zip(tri, tri[1:] + tri[:1]):
        a, b = q[1] - p[1], p[0] - q[0]
        out.append((a, b, a * p[0] + b * p[1]))
    return out


def _inside_open(tri_ccw, p) -> bool:
    for a, b, c in _edge_lines(tri_ccw):
        if a * p[0] + b * p[1] - c >= 0:  # ccw triangle: interior has negative values
            return False
    return True


def _bbox(poly):
    xs = [p[0] for p in poly]
    ys = [p[1] for p in poly]
    return min(xs), max(xs), min(ys), max(ys)


def _bbox_overlap(b1, b2) -> bool:
    return b1[0] < b2[1] and b2[0] < b1[1] and b1[2] < b2[3] and b2[2] < b1[3]


def _convex_intersection(p1, p2):
    poly = list(p1)
    for a, b, c in _edge_lines(p2):
        poly = _clip(poly, a, b, c, keep_positive=False)
        if not poly:
            return []
    return poly


@dataclass(frozen=True)
class Piece:
    """A region of one plane where the density Theta is constant.

    ``coords`` are the exact points (in R^N) of a convex polygon (m = 2),
    segment (m = 1) or single point (m = 0); ``share`` is 1/k when k
    overlapping cells each report the same region.
    """

    coords: tuple[Vec, ...]
    theta: int
    share: Fraction


def _to_ambient(rows, piv, off, c) -> Vec:
    p = list(off)
    for ci, r in zip(c, rows):
        p = [x + ci * y for x, y in zip(p, r)]
    return tuple(p)


def overlay_pieces(cells: Sequence[tuple[Cell, int]], m: int) -> list[Piece]:
    """Split overlapping cells into pieces of constant density Theta."""
    if m == 0:
        acc: dict = defaultdict(int)
        for cell, k in cells:
            acc[cell[0]] += k
        return [Piece((p,), k, Fraction(1)) for p, k in sorted(acc.items())]
    if m > 2:
        raise NotImplementedError("overlay is implemented for m <= 2")
    groups: dict = defaultdict(list)
    for cell, k in cells:
        groups[_plane_key(cell)].append((cell, k))
    pieces: list[Piece] = []
    for (rows, piv, off), members in sorted(groups.items()):
        proj = []
        for cell, k in members:
            pc = [tuple(v[i] for i in piv) for v in cell]
            if m == 1:
                sgn = 1 if pc[1][0] > pc[0][0] else -1
                proj.append(((min(pc[0][0], pc[1][0]), max(pc[0][0], pc[1][0])), sgn * k))
            else:
                sgn = 1 if _area2(pc) > 0 else -1
                proj.append((_ccw(pc), sgn * k))
        if m == 1:
            pieces.extend(_overlay_1d(proj, rows, piv, off))
        else:
            pieces.extend(_overlay_2d(proj, rows, piv, off))
    return pieces


def _overlay_1d(proj, rows, piv, off):
    pts = sorted({t for (a, b), _ in proj for t in (a, b)})
    out = []
    for a, b in zip(pts, pts[1:]):
        mid = (a + b) / 2
        theta = sum(k for (lo, hi), k in proj if lo < mid < hi)
        if any(lo < mid < hi for (lo, hi), _ in proj):
            out.append(Piece((_to_ambient(rows, piv, off, (a,)), _to_ambient(rows, piv, off, (b,))),
                             theta, Fraction(1)))
    return out


def _overlay_2d(proj, rows, piv, off):
    out = []
    boxes = [_bbox(t) for t, _ in proj]
    for i, (tri, k) in enumerate(proj):
        overl = [i]
        for j, (tri2, _) in enumerate(proj):
            if j != i and _bbox_overlap(boxes[i], boxes[j]) and _convex_intersection(tri, tri2):
                overl.append(j)
        if len(overl) == 1:
            out.append(Piece(tuple(_to_ambient(rows, piv, off, p) for p in tri), k, Fraction(1)))
            continue
        polys = [list(tri)]
        lines = {ln for j in overl[1:] for ln in _edge_lines(proj[j][0])}
        for a, b, c in sorted(lines):
            nxt = []
            for P in polys:
                for side in (True, False):
                    part = _clip(P, a, b, c, side)
                    if part:
                        nxt.append(part)
            polys = nxt
        for P in polys:
            cx = sum(p[0] for p in P) / len(P)
            cy = sum(p[1] for p in P) / len(P)
            cont = [j for j in overl if _inside_open(proj[j][0], (cx, cy))]
            theta = sum(proj[j][1] for j in cont)
            out.append(Piece(tuple(_to_ambient(rows, piv, off, p) for p in P), theta,
                             Fraction(1, len(cont))))
    return out


def _piece_measure(piece: Piece, m: int) -> float:
    if m == 0:
        return 1.0
    if m == 1:
        return math.sqrt(float(exact.dot(exact.sub(piece.coords[1], piece.coords[0]),
                                         exact.sub(piece.coords[1], piece.coords[0]))))
    p0 = piece.coords[0]
    return sum(cell_volume((p0, a, b)) for a, b in zip(piece.coords[1:], piece.coords[2:]))


def chain_mass(T: SimplicialCurrent) -> float:
    """Sum of |multiplicity| x volume over stored cells (an upper bound for
    the mass; equal to it when no two cells overlap)."""
    return sum(abs(k) * cell_volume(c) for c, k in T.items())


def mass(T: SimplicialCurrent) -> float:
    """M(T) = integral of |Theta| over the carried set (overlaps resolved)."""
    if not T.cells:
        return 0.0
    if T.m > 2:
        return chain_mass(T)
    return sum(abs(p.theta) * float(p.share) * _piece_measure(p, T.m)
               for p in overlay_pieces(list(T.items()), T.m))


def currents_equal(T1: SimplicialCurrent, T2: SimplicialCurrent) -> bool:
    """Equality as currents: the density of T1 - T2 vanishes everywhere
    (exact, independent of how cells are triangulated)."""
    D = T1 - T2
    if not D.cells:
        return True
    if D.m > 2:
        return False
    return all(p.theta == 0 for p in overlay_pieces(list(D.items()), D.m))


def _fan(coords):
    p0 = coords[0]
    return [(p0, a, b) for a, b in zip(coords[1:], coords[2:])]


def integrate_over_current(T: SimplicialCurrent, h: Callable[[np.ndarray], np.ndarray], order: int = 8) -> float:
    """Integral of h against the mass measure ||T||."""
    total = 0.0
    for p in overlay_pieces(list(T.items()), T.m):
        if p.theta == 0:
            continue
        simplices = _fan(p.coords) if T.m == 2 else [p.coords]
        for s in simplices:
            V = np.array([[float(c) for c in v] for v in s])
            pts, w = qd.simplex_rule(V, order)
            total += abs(p.theta) * float(p.share) * float(w @ h(pts))
    return total


# -- area formula ----------------------------------------------------------------

def area_formula_mass(F: PAQMap, h: Callable[[np.ndarray], np.ndarray] | None = None, order: int = 8) -> float:
    """sum_j integral over M of h(F_j(x)) J F_j(x) dx, i.e. integrals of h
    over every image simplex counted once per preimage."""
    total = 0.0
    for s in range(len(F.mesh.simplices)):
        for sheet in F.sheets[s]:
            vol2 = cell_volume_sq(sheet)
            if vol2 == 0:
                continue
            if h is None:
                total += cell_volume(sheet)
            else:
                V = np.array([[float(c) for c in v] for v in sheet])
                pts, w = qd.simplex_rule(V, order)
                total += float(w @ h(pts))
    return total


@dataclass(frozen=True)
class CancellationReport:
    holds: bool
    violations: tuple  # pairs ((simplex, sheet), (simplex, sheet)) with opposite orientation


def no_cancellation(F: PAQMap) -> CancellationReport:
    """Check that image cells overlapping in a set of positive measure carry
    the same orientation, so that multiplicities add without cancelling."""
    rep = push_forward_report(F)
    m = F.m
    groups: dict = defaultdict(list)
    for img, sgn, src in rep.raw:
        groups[_plane_key(img) if m >= 1 else img].append((img, sgn, src))
    violations = []
    for key, members in sorted(groups.items(), key=lambda kv: str(kv[0])):
        if len(members) < 2:
            continue
        if m == 0:
            signs = {s for _, s, _ in members}
            if len(signs) > 1:
                violations.append((members[0][2], members[1][2]))
            continue
        rows, piv, off = key
        proj = []
        for img, sgn, src in members:
            pc = [tuple(v[i] for i in piv) for v in img]
            if m == 1:
                o = 1 if pc[1][0] > pc[0][0] else -1
                proj.append((sorted([pc[0], pc[1]]), o * sgn, src))
            else:
                o = 1 if _area2(pc) > 0 else -1
                proj.append((_ccw(pc), o * sgn, src))
        for (c1, o1, s1), (c2, o2, s2) in itertools.combinations(proj, 2):
            if o1 == o2:
                continue
            if m == 1:
                overlap = max(c1[0][0], c2[0][0]) < min(c1[1][0], c2[1][0])
            else:
                overlap = bool(_convex_intersection(c1, c2))
            if overlap:
                violations.append((s1, s2))
    return CancellationReport(not violations, tuple(violations))


def area_formula_check(F: PAQMap, equality: bool = False, tol: float = 1e-10) -> tuple[float, float]:
    """(M(T_F), area-formula value); asserts the inequality, and equality
    when requested (which needs the no-cancellation condition)."""
    M = mass(push_forward(F))
    A = area_formula_mass(F)
    if M > A + tol * max(1.0, A):
        raise AssertionError(f"mass {M} exceeds area-formula value {A}")
    if equality:
        rep = no_cancellation(F)
        if not rep.holds:
            raise ValueError(f"no-cancellation fails for cell pairs {rep.violations[:3]}")
        if abs(M - A) > tol * max(1.0, A):
            raise AssertionError(f"mass {M} != area-formula value {A}")
    return M, A


def graph_jacobian(D: np.ndarray) -> float:
    """sqrt(det(I + D^T D)) for D of shape (n, m)."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    return math.sqrt(np.linalg.det(np.eye(D.shape[1]) + D.T @ D))


def cauchy_binet_jacobian(D: np.ndarray) -> float:
    """sqrt(1 + sum of squares of all minors of D), every order."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    n, m = D.shape
    total = 1.0
    for k in range(1, min(n, m) + 1):
        for I in itertools.combinations(range(n), k):
            for J in itertools.combinations(range(m), k):
                total += np.linalg.det(D[np.ix_(I, J)]) ** 2
    return math.sqrt(total)


# -- forms ----------------------------------------------------------------------

@dataclass(frozen=True)
class PolynomialForm:
    """m-form on R^N: sum over increasing multi-indices I of w_I(x) dx^I,
    coefficients polynomial in x1..xN."""

    N: int
    m: int
    coeffs: dict  # tuple I (0-based, increasing) -> VectorExpr scalar
    degree_cap: int = 8

    @classmethod
    def from_strings(cls, N: int, terms: dict, degree_cap: int = 8) -> "PolynomialForm":
        from .expr import scalar
        import sympy as sp
        coeffs = {}
        m = None
        for I, text in terms.items():
            I = tuple(sorted(int(i) for i in I))
            m = len(I) if m is None else m
            if len(I) != m or len(set(I)) != m:
                raise ValueError("all multi-indices must be increasing with the same length")
            e = scalar(text, N)
            if not e.is_polynomial:
                raise ValueError("coefficients must be polynomials")
            deg = sp.Poly(e.exprs[0], *e.syms).total_degree()
            if deg > degree_cap:
                raise ValueError(f"coefficient degree {deg} exceeds cap {degree_cap}")
            coeffs[I] = e
        return cls(N, m, coeffs, degree_cap)

    def pair(self, x: np.ndarray, E: np.ndarray) -> np.ndarray:
        """<omega(x), e_1 ^ ... ^ e_m> for the columns of E (N, m)."""
        out = np.zeros(len(x))
        for I, c in self.coeffs.items():
            out += c.value(x)[:, 0] * (np.linalg.det(E[list(I), :]) if self.m else 1.0)
        return out


def evaluate(T: SimplicialCurrent, omega: PolynomialForm) -> float:
    """T(omega) = sum of mult x integral over the cell of <omega, oriented
    unit m-vector>, by a simplex Gauss rule exact for the degree cap."""
    if (T.m, T.N) != (omega.m, omega.N):
        raise ValueError("form and current dimensions differ")
    order = omega.degree_cap // 2 + 1
    lam, w = qd.reference_simplex_rule(T.m, order)
    total = 0.0
    for cell, k in T.items():
        V = np.array([[float(c) for c in v] for v in cell])
        E = (V[1:] - V[0]).T
        pts = V[0] + lam @ E.T
        total += k * float(w @ omega.pair(pts, E))
    return total


def evaluate_by_selections(F: PAQMap, omega: PolynomialForm) -> float:
    """T_F(omega) recomputed as a sum of classical push-forwards of the
    single-valued selections given by :func:`decompose`."""
    total = 0.0
    for R in decompose(F):
        sub = SimplicialMesh(F.mesh.vertices, [F.mesh.simplices[s] for s in R.simplices], check=False)
        for j in range(F.Q):
            sel = R.selection(F, j)
            single = PAQMap(sub, [[sel[s]] for s in R.simplices], check=False)
            total += evaluate(push_forward(single), omega)
    return total


# -- boundary commutation ----------------------------------------------------------

@dataclass(frozen=True)
class CommutationReport:
    exact: bool
    chain_exact: bool
    boundary_cells: int
    mismatched: dict

    def to_json(self) -> dict:
        return {
            "exact": self.exact,
            "chain_exact": self.chain_exact,
            "boundary_cells": self.boundary_cells,
            "mismatched": [
                {"cell": [[exact.fstr(c) for c in v] for v in k], "boundary_of_push_forward": a,
                 "push_forward_of_boundary": b}
                for k, (a, b) in self.mismatched.items()
            ],
        }


def verify_boundary_commutation(F: PAQMap) -> CommutationReport:
    """Compare the boundary of T_F with T_{F|boundary}.

    Two checks: cell-by-cell equality of chains (degenerate images kept so
    that nothing is lost to flattening), and equality as currents after
    dropping zero-volume images.
    """
    lhs_chain = boundary(push_forward(F, keep_degenerate=True))
    rhs_chain = boundary_push_forward(F, keep_degenerate=True)
    chain_ok = lhs_chain == rhs_chain
    lhs = boundary(push_forward(F))
    rhs = boundary_push_forward(F)
    cur_ok = currents_equal(lhs, rhs)
    return CommutationReport(chain_ok and cur_ok, chain_ok, len(rhs), lhs_chain.diff(rhs_chain))


# -- cone-like extension -----------------------------------------------------------

@dataclass(frozen=True)
class ConeExtension:
    G: PAQMap
    centers: tuple  # a_j per cluster
    cluster_of_sheet: tuple  # per boundary simplex, the cluster of each sheet
    lip_u: float
    lip_G: float
    boundary_exact: bool
    cone_exact: bool


def cube_boundary_map(m: int, k: int, values, center=None, r=1) -> PAQMap:
    """PAQMap on the triangulated boundary of a cube from per-vertex values
    (``values(v) -> list of Q vectors``)."""
    mesh = cube_boundary_mesh(m, k, center, r)
    return PAQMap.from_vertex_values(mesh, [values(v) for v in mesh.vertices])


def cone_extend(u: PAQMap, x0: Sequence, r=1) -> ConeExtension:
    """Extend u from the boundary of the cube x0 + r[-1, 1]^m to the cube.

    Sheets are grouped into clusters by the gap rule at a reference vertex
    with h = Lip(u) x (a bound for the intrinsic diameter of the cube
    boundary), so each cluster is well defined along the whole boundary.
    On the join of x0 with each boundary simplex, a sheet of cluster j is
    the affine interpolation between a_j (the cluster mean) at x0 and the
    boundary value, so the graph of every cluster is the cone from
    (x0, a_j) over the graph of its boundary data.
    """
    x0 = exact.vec(x0)
    r = exact.frac(r)
    mesh = u.mesh
    m = mesh.d
    if mesh.m != m - 1:
        raise ValueError("u must live on an (m-1)-dimensional boundary mesh in R^m")
    L = lipschitz_report(u, convex_domain=False).value
    h = max(L * 2 * m * float(r), 1e-12)
    ref = u.sheets[0]
    S0 = QPoint([sh[0] for sh in ref])
    clusters = decompose_by_gap(S0, h)
    centers = tuple(eta(c) for c in clusters)
    cpoints = [np.array([[float(x) for x in p] for p in c.points]) for c in clusters]
    sizes = [c.Q for c in clusters]

    def which(v: Vec) -> int:
        vv = np.array([float(x) for x in v])
        return int(np.argmin([np.min(np.linalg.norm(P - vv, axis=1)) for P in cpoints]))

    verts = [x0] + list(mesh.vertices)
    simplices, sheets, assignment = [], [], []
    for s, simp in enumerate(mesh.simplices):
        simplices.append([0] + [i + 1 for i in simp])
        labels = [which(sh[0]) for sh in u.sheets[s]]
        if [labels.count(j) for j in range(len(clusters))] != sizes:
            raise ValueError(f"cluster sizes change on boundary simplex {s}; data not separated")
        assignment.append(tuple(labels))
        sheets.append([[centers[c]] + list(sh) for c, sh in zip(labels, u.sheets[s])])
    G = PAQMap(SimplicialMesh(verts, simplices), sheets)
    # orientation of the joins follows the outward boundary orientation
    lip_G = lipschitz_constant(G)
    gG = graph_current(G, keep_degenerate=True)
    gu = graph_current(u, keep_degenerate=True)
    boundary_ok = boundary(gG) == gu
    cone_sum = SimplicialCurrent.zero(m, m + u.n)
    for j, a in enumerate(centers):
        part = PAQMap(mesh, [[sh for sh, c in zip(u.sheets[s], assignment[s]) if c == j]
                             for s in range(len(mesh.simplices))], check=False)
        cone_sum = cone_sum + cone(x0 + a, graph_current(part, keep_degenerate=True))
    cone_ok = cone_sum == gG
    return ConeExtension(G, centers, tuple(assignment), L, lip_G, boundary_ok, cone_ok)


def linf_distance(F: PAQMap, G: PAQMap, samples: np.ndarray) -> float:
    """max over sample points of G(F(x), G(x))."""
    from .qcore import g_dist
    best = 0.0
    for x in samples:
        xf = [Fraction(float(c)) for c in x]
        best = max(best, g_dist(F(xf), G(xf)))
    return best
